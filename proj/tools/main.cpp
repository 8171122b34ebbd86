// Copyright Contributors to the partrf project
// SPDX-License-Identifier: Apache-2.0
int main() { return 0; }
