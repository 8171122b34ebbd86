// Copyright Contributors to the partrf project
// SPDX-License-Identifier: Apache-2.0
#include "partrf/body.hpp"

#include <cstdio>
#include <fstream>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"

using namespace partrf;

namespace {

SkinnedBody tiny_triangle_body() {
  // One triangle, two joints; enough structure for surface-lookup unit tests.
  SkinnedBody b;
  b.vertices.resize(3, 3);
  b.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0;
  b.faces.resize(1, 3);
  b.faces << 0, 1, 2;
  b.blend_weights.resize(3, 2);
  b.blend_weights << 1, 0, 0, 1, 0.5, 0.5;
  b.joint_parents = {-1, 0};
  b.joint_rest_positions.resize(2, 3);
  b.joint_rest_positions << 0, 0, 0, 1, 0, 0;
  b.uv_coords.resize(3, 2);
  b.uv_coords << 0.1, 0.2, 0.9, 0.3, 0.4, 0.8;
  b.part_labels = {0, 1, 0};
  b.part_joint_sets = {{0}, {1}};
  b.part_names = {"a", "b"};
  return b;
}

Pose random_pose(const SkinnedBody& body, Rng& rng, double max_angle = 0.6) {
  Pose p = Pose::rest(body.joint_count());
  for (int j = 0; j < body.joint_count(); ++j) {
    Vec3 axis = rng.uniform_vec3(-1, 1);
    if (axis.norm() < 1e-6) axis = Vec3(0, 0, 1);
    axis.normalize();
    p.joint_rotations.row(j) = (axis * rng.uniform(0, max_angle)).transpose();
  }
  return p;
}

}  // namespace

TEST_CASE("toy body: default spec satisfies every type invariant") {
  const SkinnedBody body = build_toy_body();
  CHECK(body.joint_count() == 16);
  CHECK(body.part_count() == 5);
  CHECK(body.vertex_count() > 500);

  // Partition: part vertex counts sum to N and every part is nonempty.
  std::vector<int> counts(5, 0);
  for (int l : body.part_labels) counts[l]++;
  int total = 0;
  for (int c : counts) {
    CHECK(c > 0);
    total += c;
  }
  CHECK(total == body.vertex_count());

  for (int i = 0; i < body.vertex_count(); ++i) {
    CHECK(body.blend_weights.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(body.blend_weights.row(i).minCoeff() >= 0.0);
    CHECK(body.uv_coords(i, 0) >= 0.0);
    CHECK(body.uv_coords(i, 0) <= 1.0);
    CHECK(body.uv_coords(i, 1) >= 0.0);
    CHECK(body.uv_coords(i, 1) <= 1.0);
  }
}

TEST_CASE("toy body: minimal J=6 skeleton keeps every part nonempty") {
  BodySpec spec;
  spec.joints = 6;
  const SkinnedBody body = build_toy_body(spec);
  CHECK(body.joint_count() == 6);
  std::set<int> seen(body.part_labels.begin(), body.part_labels.end());
  CHECK(seen.size() == 5);
}

TEST_CASE("toy body: intermediate joint counts are honored exactly") {
  for (int j : {7, 11, 18}) {
    BodySpec spec;
    spec.joints = j;
    CHECK(build_toy_body(spec).joint_count() == j);
  }
}

TEST_CASE("toy body: fewer than 6 joints is an invalid spec") {
  BodySpec spec;
  spec.joints = 5;
  CHECK_THROWS_AS(build_toy_body(spec), ConfigError);
}

TEST_CASE("segment_parts: one-hot rows, documented tie-break, toy-body oracle") {
  // One-hot on a wrist joint mapped to the left arm.
  MatX w = MatX::Zero(2, 4);
  w(0, 2) = 1.0;
  w(1, 1) = 0.5;
  w(1, 3) = 0.5;
  const std::vector<int> j2p = {0, 1, 3, 2};  // joint 2 -> left arm (part 3)
  const auto labels = segment_parts(w, j2p);
  CHECK(labels[0] == 3);
  // Uniform over joints 1 and 3 of different parts: lower joint index wins.
  CHECK(labels[1] == 1);

  const SkinnedBody body = build_toy_body();
  const auto map = body.joint_to_part();
  const auto got = segment_parts(body.blend_weights, map);
  for (int i = 0; i < body.vertex_count(); ++i) {
    // Brute-force per-vertex argmax oracle.
    int arg = 0;
    for (int j = 1; j < body.joint_count(); ++j)
      if (body.blend_weights(i, j) > body.blend_weights(i, arg)) arg = j;
    CHECK(got[i] == map[arg]);
    CHECK(body.part_labels[i] == map[arg]);
  }
}

TEST_CASE("lbs: identity pose is the identity transform") {
  const SkinnedBody body = build_toy_body();
  const Pose rest = Pose::rest(body.joint_count());
  const MatX3 out = pose_vertices(body, rest);
  CHECK((out - body.vertices).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("lbs: 90 degree single-joint rotation is analytic") {
  SkinnedBody b;
  b.vertices.resize(1, 3);
  b.vertices << 1, 0, 0;
  b.faces.resize(0, 3);
  b.blend_weights = MatX::Ones(1, 1);
  b.joint_parents = {-1};
  b.joint_rest_positions = MatX3::Zero(1, 3);
  b.uv_coords = MatX2::Zero(1, 2);
  b.part_labels = {0};
  b.part_joint_sets = {{0}};
  b.part_names = {"all"};

  Pose p = Pose::rest(1);
  p.joint_rotations.row(0) << 0, 0, M_PI / 2;
  MatX3 pts(1, 3);
  pts << 1, 0, 0;
  const MatX3 out = lbs_transform(b, p, LbsDirection::kForward, pts, MatX::Ones(1, 1));
  CHECK(out(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(out(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(out(0, 2) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("lbs: forward/inverse round-trip with fixed weights") {
  const SkinnedBody body = build_toy_body();
  Rng rng(42);
  const Pose pose = random_pose(body, rng);
  const double radius = 2.0 * body.bounding_radius();
  const Vec3 center = body.vertices.colwise().mean();

  const int m = 1000;
  MatX3 pts(m, 3);
  MatX weights(m, body.joint_count());
  const MeshBvh bvh(body.vertices, body.faces);
  for (int i = 0; i < m; ++i) {
    pts.row(i) = (center + rng.uniform_vec3(-radius, radius)).transpose();
    const auto q = nearest_surface_weights(body, body.vertices, pts.row(i), &bvh);
    weights.row(i) = q.weights.transpose();
  }

  const MatX3 fwd = lbs_transform(body, pose, LbsDirection::kForward, pts, weights);
  const MatX3 back = lbs_transform(body, pose, LbsDirection::kInverse, fwd, weights);
  CHECK((back - pts).rowwise().norm().maxCoeff() < 1e-5);

  const MatX3 inv = lbs_transform(body, pose, LbsDirection::kInverse, pts, weights);
  const MatX3 fwd2 = lbs_transform(body, pose, LbsDirection::kForward, inv, weights);
  CHECK((fwd2 - pts).rowwise().norm().maxCoeff() < 1e-5);
}

TEST_CASE("lbs: singular blended matrix raises a degenerate-skinning error") {
  SkinnedBody b;
  b.vertices.resize(1, 3);
  b.vertices << 1, 0, 0;
  b.faces.resize(0, 3);
  b.blend_weights.resize(1, 2);
  b.blend_weights << 0.5, 0.5;
  b.joint_parents = {-1, 0};
  b.joint_rest_positions = MatX3::Zero(2, 3);
  b.uv_coords = MatX2::Zero(1, 2);
  b.part_labels = {0};
  b.part_joint_sets = {{0}, {1}};
  b.part_names = {"a", "b"};

  // Joint 1 rotated pi about z against joint 0 at identity: the blend of the
  // two rotations has a rank-deficient linear part.
  Pose p = Pose::rest(2);
  p.joint_rotations.row(1) << 0, 0, M_PI - 1e-9;
  MatX3 pts(1, 3);
  pts << 1, 0, 0;
  MatX w(1, 2);
  w << 0.5, 0.5;
  CHECK_THROWS_AS(lbs_transform(b, p, LbsDirection::kInverse, pts, w), NumericError);
}

TEST_CASE("nearest_surface: vertex and centroid queries are exact") {
  const SkinnedBody b = tiny_triangle_body();

  const auto at_vertex = nearest_surface_weights(b, b.vertices, Vec3(0, 1, 0));
  CHECK(at_vertex.distance < 1e-12);
  CHECK(at_vertex.weights[0] == doctest::Approx(0.5));
  CHECK(at_vertex.weights[1] == doctest::Approx(0.5));
  CHECK(at_vertex.uv.x() == doctest::Approx(0.4));
  CHECK(at_vertex.uv.y() == doctest::Approx(0.8));

  const Vec3 centroid = (Vec3(0, 0, 0) + Vec3(1, 0, 0) + Vec3(0, 1, 0)) / 3.0;
  const auto at_centroid = nearest_surface_weights(b, b.vertices, centroid);
  CHECK(at_centroid.distance < 1e-12);
  CHECK(at_centroid.uv.x() == doctest::Approx((0.1 + 0.9 + 0.4) / 3.0));
  CHECK(at_centroid.uv.y() == doctest::Approx((0.2 + 0.3 + 0.8) / 3.0));
}

TEST_CASE("nearest_surface: closest point agrees with barycentric grid search") {
  Rng rng(7);
  const SkinnedBody b = tiny_triangle_body();
  for (int trial = 0; trial < 20; ++trial) {
    const Vec3 q = rng.uniform_vec3(-1.5, 1.5);
    const auto got = nearest_surface_weights(b, b.vertices, q);
    const Vec3 ref = oracle::grid_closest_on_triangle(q, Vec3(0, 0, 0), Vec3(1, 0, 0),
                                                      Vec3(0, 1, 0));
    CHECK((q - ref).norm() == doctest::Approx(got.distance).epsilon(1e-2));
  }
}

TEST_CASE("nearest_surface: 1k random queries match the exhaustive-face oracle") {
  const SkinnedBody body = build_toy_body();
  const MeshBvh bvh(body.vertices, body.faces);
  Rng rng(11);
  const Aabb box = body.rest_bounds().dilated(0.3);
  for (int i = 0; i < 1000; ++i) {
    Vec3 q;
    for (int c = 0; c < 3; ++c) q[c] = rng.uniform(box.lo[c], box.hi[c]);
    const auto fast = nearest_surface_weights(body, body.vertices, q, &bvh);
    const auto slow = nearest_surface_weights(body, body.vertices, q, nullptr);
    CHECK(fast.distance == doctest::Approx(slow.distance).epsilon(1e-10));
    if (fast.face == slow.face) {
      CHECK((fast.uv - slow.uv).norm() < 1e-12);
      CHECK((fast.weights - slow.weights).norm() < 1e-12);
    } else {
      // Equidistant faces share the closest point; weights interpolate the
      // same shared geometry even when traversal order differs.
      CHECK((fast.weights - slow.weights).norm() < 1e-6);
    }
  }
}

TEST_CASE("nearest_surface: surface points return their own uv (rest and posed)") {
  const SkinnedBody body = build_toy_body();
  Rng rng(3);
  const Pose pose = random_pose(body, rng, 0.4);
  const MatX3 posed = pose_vertices(body, pose);
  const MeshBvh rest_bvh(body.vertices, body.faces);
  const MeshBvh posed_bvh(posed, body.faces);

  for (int trial = 0; trial < 200; ++trial) {
    const int f = int(rng.uniform_int(body.face_count()));
    double b0 = rng.uniform(0.15, 0.7);
    double b1 = rng.uniform(0.15, 0.95 - b0);
    const double b2 = 1.0 - b0 - b1;
    const int i0 = body.faces(f, 0), i1 = body.faces(f, 1), i2 = body.faces(f, 2);
    const Vec2 uv_expected = b0 * Vec2(body.uv_coords.row(i0)) + b1 * Vec2(body.uv_coords.row(i1)) +
                             b2 * Vec2(body.uv_coords.row(i2));

    const Vec3 rest_pt = b0 * Vec3(body.vertices.row(i0)) + b1 * Vec3(body.vertices.row(i1)) +
                         b2 * Vec3(body.vertices.row(i2));
    const auto rest_q = nearest_surface_weights(body, body.vertices, rest_pt, &rest_bvh);
    CHECK(rest_q.distance < 1e-6);
    CHECK((rest_q.uv - uv_expected).norm() < 1e-6);

    const Vec3 posed_pt = b0 * Vec3(posed.row(i0)) + b1 * Vec3(posed.row(i1)) +
                          b2 * Vec3(posed.row(i2));
    const auto posed_q = nearest_surface_weights(body, posed, posed_pt, &posed_bvh);
    CHECK(posed_q.distance < 1e-6);
    CHECK((posed_q.uv - uv_expected).norm() < 1e-6);
  }
}

TEST_CASE("nearest_surface: empty mesh raises an invalid-body error") {
  SkinnedBody b = tiny_triangle_body();
  b.faces.resize(0, 3);
  CHECK_THROWS_AS(nearest_surface_weights(b, b.vertices, Vec3(0, 0, 0)), DataError);
}

TEST_CASE("body io: save -> load -> save round-trips bit-identically") {
  const SkinnedBody body = build_toy_body();
  std::filesystem::create_directories("/tmp/partrf_rt_a");
  std::filesystem::create_directories("/tmp/partrf_rt_b");
  const std::string p1 = "/tmp/partrf_rt_a/body.json", p2 = "/tmp/partrf_rt_b/body.json";
  save_skinned_body(body, p1);
  const SkinnedBody loaded = load_skinned_body(p1);
  CHECK(loaded.vertex_count() == body.vertex_count());
  CHECK(loaded.part_count() == 5);
  save_skinned_body(loaded, p2);

  auto slurp = [](const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  CHECK(slurp(p1) == slurp(p2));
  CHECK(slurp("/tmp/partrf_rt_a/body.bin") == slurp("/tmp/partrf_rt_b/body.bin"));
}

TEST_CASE("body io: weight row summing to 0.9 is rejected naming the field") {
  SkinnedBody body = build_toy_body({.joints = 6, .rings = 6, .segment_length = 0.2});
  const std::string path = "/tmp/partrf_body_bad.json";
  save_skinned_body(body, path);

  // Patch the first blend-weight float in the binary blob.
  const int n = body.vertex_count();
  std::fstream bin("/tmp/partrf_body_bad.bin",
                   std::ios::binary | std::ios::in | std::ios::out);
  bin.seekg(std::streamoff(n) * 3 * 4);
  float first = 0;
  bin.read(reinterpret_cast<char*>(&first), 4);
  const float patched = first * 0.9f;
  bin.seekp(std::streamoff(n) * 3 * 4);
  bin.write(reinterpret_cast<const char*>(&patched), 4);
  bin.close();

  try {
    load_skinned_body(path);
    CHECK(false);
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("blend_weights") != std::string::npos);
  }
}

TEST_CASE("body io: missing metadata field is rejected naming the field") {
  const SkinnedBody body = build_toy_body({.joints = 6, .rings = 6, .segment_length = 0.2});
  const std::string path = "/tmp/partrf_body_missing.json";
  save_skinned_body(body, path);
  {
    std::ifstream in(path);
    nlohmann::json meta = nlohmann::json::parse(in);
    in.close();
    meta.erase("joint_parents");
    std::ofstream out(path);
    out << meta.dump(2);
  }
  // Pair the patched json with the matching binary.
  std::rename("/tmp/partrf_body_missing.bin", "/tmp/partrf_body_missing.bin");
  try {
    load_skinned_body(path);
    CHECK(false);
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("joint_parents") != std::string::npos);
  }
}

TEST_CASE("body io: SMPL-shaped export (N=6890, J=24) loads with 5 parts") {
  const int n = 6890, j = 24;
  Rng rng(99);
  SkinnedBody b;
  b.vertices.resize(n, 3);
  b.uv_coords.resize(n, 2);
  b.blend_weights = MatX::Zero(n, j);
  for (int i = 0; i < n; ++i) {
    b.vertices.row(i) = rng.uniform_vec3(-1, 1).transpose();
    b.uv_coords.row(i) << rng.uniform(), rng.uniform();
    // Up to four influencing joints, normalized.
    const int lead = int(rng.uniform_int(j));
    double sum = 0;
    for (int s = 0; s < 4; ++s) {
      const int jj = (lead + s) % j;
      const double w = rng.uniform(0.05, s == 0 ? 2.0 : 1.0);
      b.blend_weights(i, jj) += w;
      sum += w;
    }
    b.blend_weights.row(i) /= sum;
  }
  const int f = n / 3;
  b.faces.resize(f, 3);
  for (int ff = 0; ff < f; ++ff) b.faces.row(ff) << 3 * ff, 3 * ff + 1, (3 * ff + 2) % n;
  b.joint_parents = smpl24_parents();
  b.joint_rest_positions = MatX3::Zero(j, 3);
  for (int a = 0; a < j; ++a) b.joint_rest_positions(a, 1) = 0.05 * a;
  b.part_joint_sets = smpl24_part_joint_sets();
  b.part_names = {"torso", "legs", "head", "left_arm", "right_arm"};
  b.part_labels = segment_parts(b.blend_weights, b.joint_to_part());

  const std::string path = "/tmp/partrf_body_smpl.json";
  save_skinned_body(b, path);
  const SkinnedBody loaded = load_skinned_body(path);
  CHECK(loaded.vertex_count() == 6890);
  CHECK(loaded.joint_count() == 24);
  CHECK(loaded.part_count() == 5);
}

TEST_CASE("pose: canonical axis-angle range is enforced") {
  const SkinnedBody body = build_toy_body({.joints = 6, .rings = 6, .segment_length = 0.2});
  Pose p = Pose::rest(body.joint_count());
  p.joint_rotations.row(0) << M_PI + 0.1, 0, 0;
  CHECK_THROWS_AS(skinning_transforms(body, p), DataError);
}
