#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "xlce/tensor.hpp"

namespace xlce {

/// Adam with bias correction. Moments are keyed by position in the parameter
/// list, which must stay stable across steps.
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Tensor*>& params) {
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(params[i]->data.size(), 0.0);
        v_[i].assign(params[i]->data.size(), 0.0);
      }
    }
    if (m_.size() != params.size())
      throw std::invalid_argument("adam: parameter list changed size");
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      if (!p.has_grad())
        throw std::invalid_argument("adam: parameter without gradient buffer");
      if (m_[i].size() != p.data.size())
        throw std::invalid_argument("adam: parameter shape changed");
      for (std::size_t j = 0; j < p.data.size(); ++j) {
        double g = p.grad[j];
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
        double mhat = m_[i][j] / bc1;
        double vhat = v_[i][j] / bc2;
        p.data[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  std::uint64_t steps() const { return t_; }
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace xlce
