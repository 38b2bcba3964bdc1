#pragma once

#include <functional>
#include <string>
#include <vector>

#include "xlce/tensor.hpp"

namespace xlce {

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::int64_t checked = 0;
  std::string worst;  // "tensor_index/element" of the worst entry

  bool pass(double tol) const { return max_rel_err < tol; }
};

/// Central finite differences against analytic gradients.
///
/// loss_fn must recompute the scalar loss from the tensors' current values
/// with no lasting side effects (copy any stateful model inside the closure).
/// The tensors' grad buffers must already hold the analytic gradients.
/// Relative error is |num - ana| / max(|num|, |ana|, 1).
inline GradCheckResult grad_check(const std::function<double()>& loss_fn,
                                  const std::vector<Tensor*>& tensors,
                                  double step = 1e-5) {
  GradCheckResult r;
  for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
    Tensor& t = *tensors[ti];
    if (!t.has_grad())
      throw std::invalid_argument("grad_check: tensor without analytic gradient");
    for (std::size_t j = 0; j < t.data.size(); ++j) {
      double saved = t.data[j];
      t.data[j] = saved + step;
      double up = loss_fn();
      t.data[j] = saved - step;
      double down = loss_fn();
      t.data[j] = saved;
      double numeric = (up - down) / (2.0 * step);
      double analytic = t.grad[j];
      double abs_err = std::abs(numeric - analytic);
      double rel = abs_err / std::max({std::abs(numeric), std::abs(analytic), 1.0});
      ++r.checked;
      if (abs_err > r.max_abs_err) r.max_abs_err = abs_err;
      if (rel > r.max_rel_err) {
        r.max_rel_err = rel;
        r.worst = std::to_string(ti) + "/" + std::to_string(j);
      }
    }
  }
  return r;
}

/// Fixed +-1-ish projection used to reduce tensor outputs to a scalar loss
/// for gradient checking. Deterministic in the element index.
inline double projection_coeff(std::int64_t i) {
  // low-discrepancy-ish weights in [-1, 1], no zeros
  double v = std::fmod(0.618033988749895 * static_cast<double>(i + 1), 1.0);
  return 2.0 * v - 1.0 + (v < 0.5 ? 0.05 : -0.05);
}

inline double project(const Tensor& t) {
  double s = 0.0;
  for (std::int64_t i = 0; i < t.size(); ++i)
    s += projection_coeff(i) * t.data[static_cast<std::size_t>(i)];
  return s;
}

/// Gradient of project() w.r.t. the tensor entries.
inline Tensor project_grad(const Tensor& t) {
  Tensor g(t.shape);
  for (std::int64_t i = 0; i < t.size(); ++i)
    g.data[static_cast<std::size_t>(i)] = projection_coeff(i);
  return g;
}

}  // namespace xlce
