#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "xlce/channel.hpp"
#include "xlce/tensor.hpp"

namespace xlce {

struct MseLoss {
  double value = 0.0;
  Tensor grad;  // d loss / d pred
};

/// Batch mean of per-sample squared Frobenius norms: (1/N) sum_n ||pred_n - target_n||_F^2.
inline MseLoss mse_loss(const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "mse");
  if (pred.rank() < 1 || pred.dim(0) < 1)
    throw std::invalid_argument("mse: need a batched input");
  double n = static_cast<double>(pred.dim(0));
  MseLoss out;
  out.grad = Tensor(pred.shape);
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    double d = pred.data[i] - target.data[i];
    out.value += d * d;
    out.grad.data[i] = 2.0 * d / n;
  }
  out.value /= n;
  return out;
}

inline double to_db(double linear) { return 10.0 * std::log10(linear); }

/// Monte Carlo NMSE over a sample set. `linear` is the sample mean of the
/// per-sample ratio ||h - h_hat||^2 / ||h||^2 (the expectation-of-ratio
/// definition); `ratio_of_sums` is sum(errors)/sum(energies), the estimator
/// of E||h - h_hat||^2 / E||h||^2. Zero-norm targets are excluded and
/// counted.
struct NmseResult {
  double linear = 0.0;
  double ratio_of_sums = 0.0;
  std::int64_t n_used = 0;
  std::int64_t n_excluded = 0;
  double ci95_halfwidth_db = 0.0;

  double db() const { return to_db(linear); }
  double ratio_of_sums_db() const { return to_db(ratio_of_sums); }
};

class NmseAccumulator {
 public:
  void add(const ComplexChannel& target, const ComplexChannel& estimate) {
    if (target.size() != estimate.size())
      throw std::invalid_argument("nmse: dimension mismatch");
    double energy = target.squaredNorm();
    if (energy == 0.0) {
      ++excluded_;
      return;
    }
    double err = (target - estimate).squaredNorm();
    double ratio = err / energy;
    sum_ratio_ += ratio;
    sum_ratio_sq_ += ratio * ratio;
    sum_err_ += err;
    sum_energy_ += energy;
    ++used_;
  }

  NmseResult result() const {
    if (used_ == 0) throw std::invalid_argument("nmse: no usable samples");
    NmseResult r;
    r.n_used = used_;
    r.n_excluded = excluded_;
    double n = static_cast<double>(used_);
    r.linear = sum_ratio_ / n;
    r.ratio_of_sums = sum_err_ / sum_energy_;
    if (used_ > 1 && r.linear > 0.0) {
      double var = (sum_ratio_sq_ - n * r.linear * r.linear) / (n - 1.0);
      double hw = 1.96 * std::sqrt(std::max(var, 0.0) / n);
      r.ci95_halfwidth_db = 10.0 / std::log(10.0) * hw / r.linear;  // delta method
    }
    return r;
  }

 private:
  double sum_ratio_ = 0.0, sum_ratio_sq_ = 0.0, sum_err_ = 0.0, sum_energy_ = 0.0;
  std::int64_t used_ = 0, excluded_ = 0;
};

inline NmseResult nmse(const std::vector<ComplexChannel>& targets,
                       const std::vector<ComplexChannel>& estimates) {
  if (targets.size() != estimates.size())
    throw std::invalid_argument("nmse: sample count mismatch");
  if (targets.empty()) throw std::invalid_argument("nmse: empty sample set");
  NmseAccumulator acc;
  for (std::size_t i = 0; i < targets.size(); ++i) acc.add(targets[i], estimates[i]);
  return acc.result();
}

}  // namespace xlce
