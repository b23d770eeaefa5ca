#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "kqg/nn/parameters.hpp"

namespace kqg::nn {

struct GradCheckOptions {
  double eps = 1e-4;
  int coords_per_param = 3;
  std::uint64_t seed = 0;
  // Relative error uses max(|analytic|, |numeric|, floor) as denominator.
  double floor = 1e-6;
  // Every evaluation gets a tape built with these, so dropout masks repeat.
  bool training = false;
  std::uint64_t tape_seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  Eigen::Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares the tape gradient of `loss` against central differences on
/// randomly drawn coordinates of every parameter accepted by `filter`.
/// `loss` records its graph on the tape it is handed and returns the [1 x 1] output.
template <typename Scalar>
GradCheckResult grad_check(ParameterSet<Scalar>& params, const std::function<Var<Scalar>(Tape<Scalar>&)>& loss,
                           const GradCheckOptions& opts = {},
                           const std::function<bool(const Parameter<Scalar>&)>& filter = {}) {
  const auto evaluate = [&]() {
    Tape<Scalar> tape(opts.training, opts.tape_seed);
    const Scalar v = loss(tape).scalar();
    if (!std::isfinite(double(v))) throw NumericalError("grad_check: non-finite loss");
    return v;
  };

  params.zero_grad();
  {
    Tape<Scalar> tape(opts.training, opts.tape_seed);
    auto out = loss(tape);
    tape.backward(out);
  }

  GradCheckResult result;
  std::mt19937_64 rng(opts.seed);
  for (auto& p : params) {
    if (filter && !filter(p)) continue;
    const Matrix<Scalar> analytic = p.grad;
    if (!analytic.allFinite()) throw NumericalError("grad_check: non-finite gradient for '" + p.name + "'");
    // Half of the probes go to coordinates with a nonzero analytic gradient
    // (when any exist), the rest are drawn uniformly.
    std::vector<Eigen::Index> nonzero;
    for (Eigen::Index k = 0; k < analytic.size(); ++k)
      if (analytic.data()[k] != Scalar(0)) nonzero.push_back(k);
    std::uniform_int_distribution<Eigen::Index> any(0, p.value.size() - 1);
    for (int c = 0; c < opts.coords_per_param; ++c) {
      Eigen::Index k;
      if (c % 2 == 0 && !nonzero.empty()) {
        std::uniform_int_distribution<std::size_t> pick(0, nonzero.size() - 1);
        k = nonzero[pick(rng)];
      } else {
        k = any(rng);
      }
      Scalar& slot = p.value.data()[k];
      const Scalar saved = slot;
      slot = saved + Scalar(opts.eps);
      const Scalar up = evaluate();
      slot = saved - Scalar(opts.eps);
      const Scalar down = evaluate();
      slot = saved;
      const double numeric = double(up - down) / (2.0 * opts.eps);
      const double a = double(analytic.data()[k]);
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (result.worst_index < 0 || rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = p.name;
        result.worst_index = k;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  params.zero_grad();
  return result;
}

}  // namespace kqg::nn
