// Copyright Contributors to the partrf project
// SPDX-License-Identifier: Apache-2.0
#include "partrf/nets.hpp"

namespace partrf {

MatX SinusoidalEncoding::encode(const MatX& x) const {
  if (x.rows() != input_dim) throw std::invalid_argument("encoding: input dim mismatch");
  MatX out(output_dim(), x.cols());
  out.topRows(input_dim) = x;
  double freq = M_PI;
  for (int k = 0; k < bands; ++k, freq *= 2.0) {
    const int row = input_dim * (1 + 2 * k);
    out.middleRows(row, input_dim) = (freq * x.array()).sin();
    out.middleRows(row + input_dim, input_dim) = (freq * x.array()).cos();
  }
  return out;
}

MatX SinusoidalEncoding::backward_input(const MatX& x, const MatX& denc) const {
  MatX dx = denc.topRows(input_dim);
  double freq = M_PI;
  for (int k = 0; k < bands; ++k, freq *= 2.0) {
    const int row = input_dim * (1 + 2 * k);
    dx.array() += denc.middleRows(row, input_dim).array() * (freq * x.array()).cos() * freq;
    dx.array() -= denc.middleRows(row + input_dim, input_dim).array() * (freq * x.array()).sin() * freq;
  }
  return dx;
}

DenseNet::DenseNet(std::string name, int input, const std::vector<int>& hidden, int output)
    : name_(std::move(name)), input_(input), output_(output) {
  int in = input;
  for (int h : hidden) {
    weights.emplace_back(MatX::Zero(h, in));
    biases.emplace_back(VecX::Zero(h));
    in = h;
  }
  weights.emplace_back(MatX::Zero(output, in));
  biases.emplace_back(VecX::Zero(output));
  for (size_t l = 0; l < weights.size(); ++l) {
    grad_weights.emplace_back(MatX::Zero(weights[l].rows(), weights[l].cols()));
    grad_biases.emplace_back(VecX::Zero(biases[l].size()));
  }
}

void DenseNet::init(Rng& rng, double final_scale) {
  for (size_t l = 0; l < weights.size(); ++l) {
    const double std = std::sqrt(2.0 / double(weights[l].cols()));
    const double scale = (l + 1 == weights.size()) ? final_scale : 1.0;
    for (Eigen::Index i = 0; i < weights[l].size(); ++i)
      weights[l].data()[i] = scale * std * rng.normal();
    biases[l].setZero();
  }
}

MatX DenseNet::forward(const MatX& x, Cache* cache) const {
  if (x.rows() != input_) throw std::invalid_argument("densenet " + name_ + ": input dim mismatch");
  if (cache) {
    cache->inputs.clear();
    cache->inputs.reserve(weights.size());
  }
  MatX a = x;
  for (size_t l = 0; l < weights.size(); ++l) {
    if (cache) cache->inputs.push_back(a);
    MatX z = (weights[l] * a).colwise() + biases[l];
    if (l + 1 < weights.size()) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

MatX DenseNet::backward(const Cache& cache, const MatX& dout) {
  MatX dz = dout;
  for (int l = int(weights.size()) - 1; l >= 0; --l) {
    const MatX& a = cache.inputs[size_t(l)];
    grad_weights[size_t(l)].noalias() += dz * a.transpose();
    grad_biases[size_t(l)] += dz.rowwise().sum();
    if (l == 0) return weights[0].transpose() * dz;
    MatX da = weights[size_t(l)].transpose() * dz;
    // ReLU mask from the cached layer input (the previous layer's output).
    dz = da.cwiseProduct((a.array() > 0.0).cast<double>().matrix());
  }
  return dz;
}

void DenseNet::zero_grad() {
  for (auto& g : grad_weights) g.setZero();
  for (auto& g : grad_biases) g.setZero();
}

void DenseNet::collect(ParamRefs& out) {
  for (size_t l = 0; l < weights.size(); ++l) {
    out.push_back({name_ + "/w" + std::to_string(l), weights[l].data(),
                   grad_weights[l].data(), weights[l].size(),
                   {int(weights[l].rows()), int(weights[l].cols())}});
    out.push_back({name_ + "/b" + std::to_string(l), biases[l].data(), grad_biases[l].data(),
                   biases[l].size(), {int(biases[l].size())}});
  }
}

AdamOptimizer::AdamOptimizer(ParamRefs params, Config cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(ArrX::Zero(p.size));
    v_.emplace_back(ArrX::Zero(p.size));
  }
}

void AdamOptimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (size_t i = 0; i < params_.size(); ++i) {
    Eigen::Map<ArrX> value(params_[i].value, params_[i].size);
    Eigen::Map<const ArrX> grad(params_[i].grad, params_[i].size);
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad.square();
    value -= cfg_.lr * (m_[i] / bc1) / ((v_[i] / bc2).sqrt() + cfg_.eps);
  }
}

void AdamOptimizer::zero_grad() {
  for (auto& p : params_) Eigen::Map<ArrX>(p.grad, p.size).setZero();
}

}  // namespace partrf
