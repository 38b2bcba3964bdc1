#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "xlce/rng.hpp"

namespace xlce {

using MatrixRM =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

/// Dense row-major real tensor with an optional same-shape gradient buffer.
/// Double precision throughout; checkpoints quantize to f32 on disk.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty, or data.size() once requires_grad()

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s)
      : shape(std::move(s)), data(static_cast<std::size_t>(numel(shape)), 0.0) {}

  static std::int64_t numel(const std::vector<std::int64_t>& s) {
    std::int64_t n = 1;
    for (auto d : s) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<std::int64_t> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<std::int64_t> s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor from(std::vector<std::int64_t> s, std::vector<double> values) {
    Tensor t;
    t.shape = std::move(s);
    if (numel(t.shape) != static_cast<std::int64_t>(values.size()))
      throw std::invalid_argument("tensor: value count does not match shape");
    t.data = std::move(values);
    return t;
  }

  /// Glorot-uniform fill on +-sqrt(6/(fan_in+fan_out)).
  static Tensor glorot(std::vector<std::int64_t> s, std::int64_t fan_in,
                       std::int64_t fan_out, Rng& rng) {
    Tensor t(std::move(s));
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : t.data) v = rng.uniform(-limit, limit);
    return t;
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  std::int64_t dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::int64_t flat_index(std::initializer_list<std::int64_t> idx) const {
    if (static_cast<int>(idx.size()) != rank())
      throw std::invalid_argument("tensor: index rank mismatch");
    std::int64_t f = 0;
    int i = 0;
    for (auto v : idx) {
      f = f * shape[static_cast<std::size_t>(i)] + v;
      ++i;
    }
    return f;
  }

  double& at(std::initializer_list<std::int64_t> idx) {
    return data[static_cast<std::size_t>(flat_index(idx))];
  }
  double at(std::initializer_list<std::int64_t> idx) const {
    return data[static_cast<std::size_t>(flat_index(idx))];
  }

  void requires_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
  bool has_grad() const { return grad.size() == data.size() && !data.empty(); }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
  }

  /// Flattens to [rows, cols]; rows*cols must equal numel.
  MapRM as_matrix(std::int64_t rows, std::int64_t cols) {
    if (rows * cols != size())
      throw std::invalid_argument("tensor: matrix view size mismatch");
    return MapRM(data.data(), rows, cols);
  }
  ConstMapRM as_matrix(std::int64_t rows, std::int64_t cols) const {
    if (rows * cols != size())
      throw std::invalid_argument("tensor: matrix view size mismatch");
    return ConstMapRM(data.data(), rows, cols);
  }
  MapRM grad_matrix(std::int64_t rows, std::int64_t cols) {
    requires_grad();
    return MapRM(grad.data(), rows, cols);
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(where) + ": shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
}

}  // namespace xlce
