// Copyright Contributors to the partrf project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "partrf/common.hpp"

namespace partrf {

/// Named view over one trainable array; the optimizer and the checkpoint
/// writer iterate these in registration order.
struct ParamRef {
  std::string name;
  double* value = nullptr;
  double* grad = nullptr;
  Eigen::Index size = 0;
  std::vector<int> shape;
};
using ParamRefs = std::vector<ParamRef>;

/// Fixed sinusoidal feature map: [x, sin(f_k x), cos(f_k x)]_k with
/// frequencies f_k = pi * 2^k, k < bands, applied per input dimension.
struct SinusoidalEncoding {
  int input_dim = 3;
  int bands = 6;

  int output_dim() const { return input_dim * (1 + 2 * bands); }

  /// x: input_dim x B -> output_dim x B.
  MatX encode(const MatX& x) const;

  /// Chain rule through the encoding: given dL/d(encoded) returns dL/dx.
  MatX backward_input(const MatX& x, const MatX& denc) const;
};

/// Plain fully connected net, ReLU hidden activations, linear output.
/// Forward/backward run batched (columns = samples); backward accumulates
/// parameter gradients and returns the input gradient.
class DenseNet {
 public:
  DenseNet() = default;
  DenseNet(std::string name, int input, const std::vector<int>& hidden, int output);

  /// He-normal init; the output layer is scaled by `final_scale`
  /// (0 starts the net at the exact zero function).
  void init(Rng& rng, double final_scale = 1.0);

  struct Cache {
    std::vector<MatX> inputs;  // a_l for every layer
  };

  MatX forward(const MatX& x, Cache* cache = nullptr) const;
  MatX backward(const Cache& cache, const MatX& dout);

  void zero_grad();
  void collect(ParamRefs& out);

  int input_dim() const { return input_; }
  int output_dim() const { return output_; }
  const std::string& name() const { return name_; }

  std::vector<MatX> weights;  // out_l x in_l
  std::vector<VecX> biases;
  std::vector<MatX> grad_weights;
  std::vector<VecX> grad_biases;

 private:
  std::string name_;
  int input_ = 0, output_ = 0;
};

/// Adam with the standard bias correction; iterates parameters in
/// registration order so seeded runs are reproducible.
class AdamOptimizer {
 public:
  struct Config {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  AdamOptimizer() = default;
  AdamOptimizer(ParamRefs params, Config cfg);

  void step();
  void zero_grad();
  int step_count() const { return t_; }
  const ParamRefs& params() const { return params_; }
  Config& config() { return cfg_; }

  /// Moment buffers, exposed for checkpointing.
  std::vector<ArrX>& first_moments() { return m_; }
  std::vector<ArrX>& second_moments() { return v_; }
  void set_step_count(int t) { t_ = t; }

 private:
  ParamRefs params_;
  Config cfg_;
  std::vector<ArrX> m_, v_;
  int t_ = 0;
};

}  // namespace partrf
