#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "kqg/nn/parameters.hpp"

namespace kqg::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Per-parameter moments, indexed like the ParameterSet.
template <typename Scalar>
struct AdamState {
  std::vector<Matrix<Scalar>> m;
  std::vector<Matrix<Scalar>> v;
  std::vector<long> steps;
  long step = 0;
};

template <typename Scalar>
AdamState<Scalar> make_adam_state(const ParameterSet<Scalar>& params) {
  AdamState<Scalar> s;
  for (const auto& p : params) {
    s.m.push_back(Matrix<Scalar>::Zero(p.value.rows(), p.value.cols()));
    s.v.push_back(Matrix<Scalar>::Zero(p.value.rows(), p.value.cols()));
    s.steps.push_back(0);
  }
  return s;
}

/// One Adam update. Parameters for which `trainable` returns false keep both
/// their values and their moments. Bias correction uses each parameter's own
/// update count so a frozen span does not skew it.
template <typename Scalar>
void adam_step(ParameterSet<Scalar>& params, AdamState<Scalar>& state, const AdamConfig& cfg,
               const std::function<bool(const Parameter<Scalar>&)>& trainable = {}) {
  if (state.m.size() != params.size()) throw ShapeError("adam_step: state does not match parameter set");
  ++state.step;
  std::size_t i = 0;
  for (auto& p : params) {
    const std::size_t k = i++;
    if (trainable && !trainable(p)) continue;
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols())
      throw ShapeError("adam_step: gradient shape for '" + p.name + "'");
    const long t = ++state.steps[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    m = Scalar(cfg.beta1) * m + Scalar(1 - cfg.beta1) * p.grad;
    v = Scalar(cfg.beta2) * v + Scalar(1 - cfg.beta2) * p.grad.cwiseAbs2();
    const Scalar c1 = Scalar(1) - std::pow(Scalar(cfg.beta1), Scalar(t));
    const Scalar c2 = Scalar(1) - std::pow(Scalar(cfg.beta2), Scalar(t));
    p.value.array() -= Scalar(cfg.lr) * (m.array() / c1) / ((v.array() / c2).sqrt() + Scalar(cfg.eps));
  }
}

/// Rescales gradients of the selected parameters so their joint L2 norm is at
/// most `max_norm`. Returns the norm before clipping.
template <typename Scalar>
Scalar clip_grad_norm(ParameterSet<Scalar>& params, Scalar max_norm,
                      const std::function<bool(const Parameter<Scalar>&)>& selected = {}) {
  Scalar sq = 0;
  for (const auto& p : params)
    if (!selected || selected(p)) sq += p.grad.squaredNorm();
  const Scalar norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const Scalar s = max_norm / norm;
    for (auto& p : params)
      if (!selected || selected(p)) p.grad *= s;
  }
  return norm;
}

}  // namespace kqg::nn
