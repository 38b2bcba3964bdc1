#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "xlce/tensor.hpp"

namespace xlce {

enum class Mode { Train, Infer };

/// Named tensor handle for checkpointing and optimization. Non-trainable
/// entries (BN running stats) are saved/loaded but never touched by Adam.
struct NamedParam {
  std::string name;
  Tensor* tensor = nullptr;
  bool trainable = true;
};

// ---------------------------------------------------------------------------
// softmax

/// Row-stochastic softmax, stabilized by row-max subtraction.
inline Tensor softmax_rows(const Tensor& x) {
  if (x.rank() != 2) throw std::invalid_argument("softmax: expected rank-2 input");
  Tensor y = x;
  std::int64_t n = x.dim(0), m = x.dim(1);
  for (std::int64_t i = 0; i < n; ++i) {
    double* row = y.data.data() + i * m;
    double mx = row[0];
    for (std::int64_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < m; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::int64_t j = 0; j < m; ++j) row[j] /= sum;
  }
  return y;
}

/// dL/dx given y = softmax_rows(x): dx = y .* (dy - rowsum(dy .* y)).
inline Tensor softmax_rows_backward(const Tensor& y, const Tensor& dy) {
  check_same_shape(y, dy, "softmax backward");
  Tensor dx = dy;
  std::int64_t n = y.dim(0), m = y.dim(1);
  for (std::int64_t i = 0; i < n; ++i) {
    const double* yr = y.data.data() + i * m;
    double* dr = dx.data.data() + i * m;
    double dot = 0.0;
    for (std::int64_t j = 0; j < m; ++j) dot += dr[j] * yr[j];
    for (std::int64_t j = 0; j < m; ++j) dr[j] = yr[j] * (dr[j] - dot);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// scaled dot-product attention (single sequence)

/// out = softmax(Q K^T / sqrt(d_k)) V. The attention matrix is written to
/// *attn so callers can inspect the E / B weight matrices.
inline Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k,
                                           const Tensor& v, Tensor* attn = nullptr) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
    throw std::invalid_argument("attention: expected rank-2 Q, K, V");
  if (q.dim(1) != k.dim(1))
    throw std::invalid_argument("attention: Q and K must share d_k");
  if (k.dim(0) != v.dim(0))
    throw std::invalid_argument("attention: K and V must share token count");
  std::int64_t tq = q.dim(0), tk = k.dim(0), dk = q.dim(1), dv = v.dim(1);
  Tensor scores({tq, tk});
  double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  scores.as_matrix(tq, tk) = q.as_matrix(tq, dk) * k.as_matrix(tk, dk).transpose() * inv;
  Tensor a = softmax_rows(scores);
  Tensor out({tq, dv});
  out.as_matrix(tq, dv) = a.as_matrix(tq, tk) * v.as_matrix(tk, dv);
  if (attn) *attn = a;
  return out;
}

/// Backward pass matching scaled_dot_product_attention; accumulates into the
/// grad buffers of q, k, v.
inline void scaled_dot_product_attention_backward(const Tensor& d_out, Tensor& q,
                                                  Tensor& k, Tensor& v,
                                                  const Tensor& attn) {
  std::int64_t tq = q.dim(0), tk = k.dim(0), dk = q.dim(1), dv = v.dim(1);
  double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  Tensor da({tq, tk});
  da.as_matrix(tq, tk) =
      d_out.as_matrix(tq, dv) * v.as_matrix(tk, dv).transpose();
  v.requires_grad();
  v.grad_matrix(tk, dv) +=
      attn.as_matrix(tq, tk).transpose() * d_out.as_matrix(tq, dv);
  Tensor ds = softmax_rows_backward(attn, da);
  q.requires_grad();
  k.requires_grad();
  q.grad_matrix(tq, dk) += ds.as_matrix(tq, tk) * k.as_matrix(tk, dk) * inv;
  k.grad_matrix(tk, dk) += ds.as_matrix(tq, tk).transpose() * q.as_matrix(tq, dk) * inv;
}

// ---------------------------------------------------------------------------
// ReLU

class Relu {
 public:
  Tensor forward(const Tensor& x) {
    mask_.assign(x.data.size(), 0);
    Tensor y = x;
    for (std::size_t i = 0; i < y.data.size(); ++i) {
      if (y.data[i] > 0.0) {
        mask_[i] = 1;
      } else {
        y.data[i] = 0.0;
      }
    }
    return y;
  }

  Tensor backward(const Tensor& dy) {
    if (dy.data.size() != mask_.size())
      throw std::invalid_argument("relu backward: shape mismatch");
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.data.size(); ++i)
      if (!mask_[i]) dx.data[i] = 0.0;
    return dx;
  }

 private:
  std::vector<unsigned char> mask_;
};

// ---------------------------------------------------------------------------
// Linear (fully connected over the last dimension)

class Linear {
 public:
  Linear() = default;
  Linear(std::int64_t z_in, std::int64_t z_out, Rng& rng)
      : w(Tensor::glorot({z_in, z_out}, z_in, z_out, rng)),
        b(Tensor::zeros({z_out})), z_in_(z_in), z_out_(z_out) {
    w.requires_grad();
    b.requires_grad();
  }

  /// x: [..., z_in] -> [..., z_out].
  Tensor forward(const Tensor& x) {
    if (x.rank() < 1 || x.dim(x.rank() - 1) != z_in_)
      throw std::invalid_argument("linear: last dim must be " + std::to_string(z_in_) +
                                  ", got " + x.shape_str());
    rows_ = x.size() / z_in_;
    x_cache_ = x;
    auto out_shape = x.shape;
    out_shape.back() = z_out_;
    Tensor y(out_shape);
    auto ym = y.as_matrix(rows_, z_out_);
    ym = x.as_matrix(rows_, z_in_) * w.as_matrix(z_in_, z_out_);
    ym.rowwise() +=
        Eigen::Map<const Eigen::RowVectorXd>(b.data.data(), z_out_);
    return y;
  }

  Tensor backward(const Tensor& dy) {
    auto dym = dy.as_matrix(rows_, z_out_);
    w.grad_matrix(z_in_, z_out_) += x_cache_.as_matrix(rows_, z_in_).transpose() * dym;
    b.requires_grad();
    Eigen::Map<Eigen::RowVectorXd>(b.grad.data(), z_out_) += dym.colwise().sum();
    Tensor dx(x_cache_.shape);
    dx.as_matrix(rows_, z_in_) = dym * w.as_matrix(z_in_, z_out_).transpose();
    return dx;
  }

  std::int64_t in_features() const { return z_in_; }
  std::int64_t out_features() const { return z_out_; }

  Tensor w;  // [z_in, z_out]
  Tensor b;  // [z_out]

 private:
  std::int64_t z_in_ = 0, z_out_ = 0, rows_ = 0;
  Tensor x_cache_;
};

// ---------------------------------------------------------------------------
// 2-D convolution, stride 1, zero padding K/2 (spatial shape preserved)

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::int64_t c_in, std::int64_t c_out, Rng& rng, std::int64_t k = 3)
      : w(Tensor::glorot({k, k, c_in, c_out}, k * k * c_in, k * k * c_out, rng)),
        b(Tensor::zeros({c_out})), k_(k), c_in_(c_in), c_out_(c_out) {
    if (k % 2 == 0) throw std::invalid_argument("conv: kernel size must be odd");
    w.requires_grad();
    b.requires_grad();
  }

  /// x: [N, H, W, c_in] -> [N, H, W, c_out] (cross-correlation plus bias).
  Tensor forward(const Tensor& x) {
    if (x.rank() != 4 || x.dim(3) != c_in_)
      throw std::invalid_argument("conv: expected [N,H,W," + std::to_string(c_in_) +
                                  "], got " + x.shape_str());
    n_ = x.dim(0); h_ = x.dim(1); w_ = x.dim(2);
    im2col(x);
    Tensor y({n_, h_, w_, c_out_});
    std::int64_t rows = n_ * h_ * w_, cols = k_ * k_ * c_in_;
    auto ym = y.as_matrix(rows, c_out_);
    ym = patches_.as_matrix(rows, cols) * w.as_matrix(cols, c_out_);
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data.data(), c_out_);
    return y;
  }

  Tensor backward(const Tensor& dy) {
    std::int64_t rows = n_ * h_ * w_, cols = k_ * k_ * c_in_;
    auto dym = dy.as_matrix(rows, c_out_);
    w.grad_matrix(cols, c_out_) += patches_.as_matrix(rows, cols).transpose() * dym;
    b.requires_grad();
    Eigen::Map<Eigen::RowVectorXd>(b.grad.data(), c_out_) += dym.colwise().sum();
    Tensor dpatch({rows, cols});
    dpatch.as_matrix(rows, cols) = dym * w.as_matrix(cols, c_out_).transpose();
    return col2im(dpatch);
  }

  Tensor w;  // [K, K, c_in, c_out]
  Tensor b;  // [c_out]

 private:
  void im2col(const Tensor& x) {
    std::int64_t pad = k_ / 2;
    patches_ = Tensor({n_ * h_ * w_, k_ * k_ * c_in_});
    for (std::int64_t n = 0; n < n_; ++n) {
      for (std::int64_t y = 0; y < h_; ++y) {
        for (std::int64_t xx = 0; xx < w_; ++xx) {
          double* dst = patches_.data.data() +
                        ((n * h_ + y) * w_ + xx) * k_ * k_ * c_in_;
          for (std::int64_t ky = 0; ky < k_; ++ky) {
            std::int64_t sy = y + ky - pad;
            for (std::int64_t kx = 0; kx < k_; ++kx) {
              std::int64_t sx = xx + kx - pad;
              double* cell = dst + (ky * k_ + kx) * c_in_;
              if (sy >= 0 && sy < h_ && sx >= 0 && sx < w_) {
                const double* src =
                    x.data.data() + ((n * h_ + sy) * w_ + sx) * c_in_;
                std::memcpy(cell, src, sizeof(double) * static_cast<std::size_t>(c_in_));
              }
              // else: zero padding, patches_ starts zeroed
            }
          }
        }
      }
    }
  }

  Tensor col2im(const Tensor& dpatch) const {
    std::int64_t pad = k_ / 2;
    Tensor dx({n_, h_, w_, c_in_});
    for (std::int64_t n = 0; n < n_; ++n) {
      for (std::int64_t y = 0; y < h_; ++y) {
        for (std::int64_t xx = 0; xx < w_; ++xx) {
          const double* src = dpatch.data.data() +
                              ((n * h_ + y) * w_ + xx) * k_ * k_ * c_in_;
          for (std::int64_t ky = 0; ky < k_; ++ky) {
            std::int64_t sy = y + ky - pad;
            if (sy < 0 || sy >= h_) continue;
            for (std::int64_t kx = 0; kx < k_; ++kx) {
              std::int64_t sx = xx + kx - pad;
              if (sx < 0 || sx >= w_) continue;
              double* cell = dx.data.data() + ((n * h_ + sy) * w_ + sx) * c_in_;
              const double* g = src + (ky * k_ + kx) * c_in_;
              for (std::int64_t c = 0; c < c_in_; ++c) cell[c] += g[c];
            }
          }
        }
      }
    }
    return dx;
  }

  std::int64_t k_ = 3, c_in_ = 0, c_out_ = 0;
  std::int64_t n_ = 0, h_ = 0, w_ = 0;
  Tensor patches_;
};

// ---------------------------------------------------------------------------
// Batch normalization over the last (channel) dimension

class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(std::int64_t channels, double momentum = 0.9, double eps = 1e-5)
      : gamma(Tensor::full({channels}, 1.0)), beta(Tensor::zeros({channels})),
        running_mean(Tensor::zeros({channels})),
        running_var(Tensor::full({channels}, 1.0)),
        c_(channels), momentum_(momentum), eps_(eps) {
    gamma.requires_grad();
    beta.requires_grad();
  }

  /// x: [..., C]. Train mode normalizes with batch statistics (biased
  /// variance) and updates running stats; infer mode uses running stats.
  /// Train mode needs at least 2 reduction elements per channel.
  Tensor forward(const Tensor& x, Mode mode) {
    if (x.rank() < 2 || x.dim(x.rank() - 1) != c_)
      throw std::invalid_argument("batchnorm: expected [...," + std::to_string(c_) +
                                  "], got " + x.shape_str());
    rows_ = x.size() / c_;
    mode_ = mode;
    auto xm = x.as_matrix(rows_, c_);
    Tensor y(x.shape);
    auto ym = y.as_matrix(rows_, c_);
    if (mode == Mode::Train) {
      if (rows_ < 2)
        throw std::invalid_argument("batchnorm: train mode needs >= 2 elements per channel");
      Eigen::RowVectorXd mu = xm.colwise().mean();
      Eigen::RowVectorXd var =
          (xm.rowwise() - mu).array().square().colwise().mean();
      inv_std_ = (var.array() + eps_).rsqrt();
      xhat_ = Tensor(x.shape);
      auto xh = xhat_.as_matrix(rows_, c_);
      xh = (xm.rowwise() - mu).array().rowwise() * inv_std_.array();
      for (std::int64_t c = 0; c < c_; ++c) {
        running_mean.data[static_cast<std::size_t>(c)] =
            momentum_ * running_mean.data[static_cast<std::size_t>(c)] +
            (1.0 - momentum_) * mu(c);
        running_var.data[static_cast<std::size_t>(c)] =
            momentum_ * running_var.data[static_cast<std::size_t>(c)] +
            (1.0 - momentum_) * var(c);
      }
      ym = xh.array().rowwise() *
           Eigen::Map<const Eigen::RowVectorXd>(gamma.data.data(), c_).array();
      ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(beta.data.data(), c_);
    } else {
      Eigen::Map<const Eigen::RowVectorXd> rm(running_mean.data.data(), c_);
      Eigen::Map<const Eigen::RowVectorXd> rv(running_var.data.data(), c_);
      inv_std_ = (rv.array() + eps_).rsqrt();
      xhat_ = Tensor(x.shape);
      auto xh = xhat_.as_matrix(rows_, c_);
      xh = (xm.rowwise() - rm).array().rowwise() * inv_std_.array();
      ym = xh.array().rowwise() *
           Eigen::Map<const Eigen::RowVectorXd>(gamma.data.data(), c_).array();
      ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(beta.data.data(), c_);
    }
    return y;
  }

  Tensor backward(const Tensor& dy) {
    auto dym = dy.as_matrix(rows_, c_);
    auto xh = xhat_.as_matrix(rows_, c_);
    gamma.requires_grad();
    beta.requires_grad();
    Eigen::Map<Eigen::RowVectorXd>(gamma.grad.data(), c_) +=
        (dym.array() * xh.array()).colwise().sum().matrix();
    Eigen::Map<Eigen::RowVectorXd>(beta.grad.data(), c_) += dym.colwise().sum();

    Eigen::Map<const Eigen::RowVectorXd> g(gamma.data.data(), c_);
    Tensor dx(xhat_.shape);
    auto dxm = dx.as_matrix(rows_, c_);
    if (mode_ == Mode::Train) {
      // dxhat = dy * gamma; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat.*xhat))
      MatrixRM dxhat = dym.array().rowwise() * g.array();
      Eigen::RowVectorXd m1 = dxhat.colwise().mean();
      Eigen::RowVectorXd m2 = (dxhat.array() * xh.array()).colwise().mean();
      dxm = ((dxhat.rowwise() - m1).array() -
             (xh.array().rowwise() * m2.array()))
                .rowwise() *
            inv_std_.array();
    } else {
      dxm = dym.array().rowwise() * (g.array() * inv_std_.array());
    }
    return dx;
  }

  std::int64_t channels() const { return c_; }

  Tensor gamma, beta;
  Tensor running_mean, running_var;

 private:
  std::int64_t c_ = 0, rows_ = 0;
  double momentum_ = 0.9, eps_ = 1e-5;
  Mode mode_ = Mode::Train;
  Tensor xhat_;
  Eigen::RowVectorXd inv_std_;
};

// ---------------------------------------------------------------------------
// Layer normalization over the last dimension, per token

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::int64_t dim, double eps = 1e-5)
      : gamma(Tensor::full({dim}, 1.0)), beta(Tensor::zeros({dim})), d_(dim), eps_(eps) {
    gamma.requires_grad();
    beta.requires_grad();
  }

  Tensor forward(const Tensor& x) {
    if (x.rank() < 1 || x.dim(x.rank() - 1) != d_)
      throw std::invalid_argument("layernorm: expected [...," + std::to_string(d_) +
                                  "], got " + x.shape_str());
    rows_ = x.size() / d_;
    xhat_ = Tensor(x.shape);
    inv_std_.resize(rows_);
    auto xm = x.as_matrix(rows_, d_);
    auto xh = xhat_.as_matrix(rows_, d_);
    Tensor y(x.shape);
    auto ym = y.as_matrix(rows_, d_);
    Eigen::Map<const Eigen::RowVectorXd> g(gamma.data.data(), d_);
    Eigen::Map<const Eigen::RowVectorXd> bb(beta.data.data(), d_);
    for (std::int64_t r = 0; r < rows_; ++r) {
      double mu = xm.row(r).mean();
      double var = (xm.row(r).array() - mu).square().mean();
      double is = 1.0 / std::sqrt(var + eps_);
      inv_std_(r) = is;
      xh.row(r) = (xm.row(r).array() - mu) * is;
      ym.row(r) = xh.row(r).array() * g.array() + bb.array();
    }
    return y;
  }

  Tensor backward(const Tensor& dy) {
    auto dym = dy.as_matrix(rows_, d_);
    auto xh = xhat_.as_matrix(rows_, d_);
    gamma.requires_grad();
    beta.requires_grad();
    Eigen::Map<Eigen::RowVectorXd>(gamma.grad.data(), d_) +=
        (dym.array() * xh.array()).colwise().sum().matrix();
    Eigen::Map<Eigen::RowVectorXd>(beta.grad.data(), d_) += dym.colwise().sum();
    Eigen::Map<const Eigen::RowVectorXd> g(gamma.data.data(), d_);
    Tensor dx(xhat_.shape);
    auto dxm = dx.as_matrix(rows_, d_);
    for (std::int64_t r = 0; r < rows_; ++r) {
      Eigen::RowVectorXd dxhat = dym.row(r).array() * g.array();
      double m1 = dxhat.mean();
      double m2 = (dxhat.array() * xh.row(r).array()).mean();
      dxm.row(r) = ((dxhat.array() - m1) - xh.row(r).array() * m2) * inv_std_(r);
    }
    return dx;
  }

  Tensor gamma, beta;

 private:
  std::int64_t d_ = 0, rows_ = 0;
  double eps_ = 1e-5;
  Tensor xhat_;
  Eigen::VectorXd inv_std_;
};

// ---------------------------------------------------------------------------
// Multi-head attention

struct AttentionConfig {
  std::int64_t d_model = 0;
  std::int64_t n_heads = 1;

  std::int64_t d_head() const { return d_model / n_heads; }

  void validate() const {
    if (d_model < 1 || n_heads < 1)
      throw std::invalid_argument("attention: d_model and n_heads must be positive");
    if (d_model % n_heads != 0)
      throw std::invalid_argument("attention: n_heads (" + std::to_string(n_heads) +
                                  ") must divide d_model (" + std::to_string(d_model) + ")");
  }
};

/// Multi-head attention per the standard formulation: per-head column slices
/// of the packed projections W_q, W_k, W_v (each d_model x d_model), parallel
/// scaled dot-product attention, concatenation, output projection W_o. No
/// projection biases. Inputs are [N, tokens, d_model]; per-head attention
/// matrices for every sample of the last forward pass are kept for
/// inspection (and for backward).
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(AttentionConfig cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    auto init = [&] {
      Tensor t = Tensor::glorot({cfg.d_model, cfg.d_model}, cfg.d_model, cfg.d_model, rng);
      t.requires_grad();
      return t;
    };
    wq = init();
    wk = init();
    wv = init();
    wo = init();
  }

  Tensor forward(const Tensor& x) { return forward(x, x, x); }

  Tensor forward(const Tensor& xq, const Tensor& xk, const Tensor& xv) {
    validate_input(xq);
    validate_input(xk);
    validate_input(xv);
    if (xq.dim(0) != xk.dim(0) || xq.dim(0) != xv.dim(0))
      throw std::invalid_argument("attention: batch size mismatch");
    if (xk.dim(1) != xv.dim(1))
      throw std::invalid_argument("attention: K and V token count mismatch");
    std::int64_t n = xq.dim(0), tq = xq.dim(1), tk = xk.dim(1), d = cfg_.d_model;
    std::int64_t h = cfg_.n_heads, dh = cfg_.d_head();
    xq_ = xq; xk_ = xk; xv_ = xv;
    q_.assign(static_cast<std::size_t>(n), {});
    k_.assign(static_cast<std::size_t>(n), {});
    v_.assign(static_cast<std::size_t>(n), {});
    o_.assign(static_cast<std::size_t>(n), {});
    attn_.assign(static_cast<std::size_t>(n), std::vector<Tensor>(static_cast<std::size_t>(h)));
    Tensor y({n, tq, d});
    for (std::int64_t s = 0; s < n; ++s) {
      auto sm = [&](const Tensor& t, std::int64_t tok) {
        return ConstMapRM(t.data.data() + s * tok * d, tok, d);
      };
      auto& q = q_[static_cast<std::size_t>(s)];
      auto& k = k_[static_cast<std::size_t>(s)];
      auto& v = v_[static_cast<std::size_t>(s)];
      auto& o = o_[static_cast<std::size_t>(s)];
      q = sm(xq, tq) * wq.as_matrix(d, d);
      k = sm(xk, tk) * wk.as_matrix(d, d);
      v = sm(xv, tk) * wv.as_matrix(d, d);
      o.resize(tq, d);
      double inv = 1.0 / std::sqrt(static_cast<double>(dh));
      for (std::int64_t i = 0; i < h; ++i) {
        MatrixRM qi = q.middleCols(i * dh, dh);
        MatrixRM ki = k.middleCols(i * dh, dh);
        Tensor scores({tq, tk});
        scores.as_matrix(tq, tk) = qi * ki.transpose() * inv;
        Tensor a = softmax_rows(scores);
        o.middleCols(i * dh, dh) = a.as_matrix(tq, tk) * v.middleCols(i * dh, dh);
        attn_[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] = std::move(a);
      }
      MapRM(y.data.data() + s * tq * d, tq, d) = o * wo.as_matrix(d, d);
    }
    return y;
  }

  /// Returns (dxq, dxk, dxv) and accumulates projection gradients. For
  /// self-attention, sum the three pieces.
  void backward(const Tensor& dy, Tensor& dxq, Tensor& dxk, Tensor& dxv) {
    std::int64_t n = xq_.dim(0), tq = xq_.dim(1), tk = xk_.dim(1), d = cfg_.d_model;
    std::int64_t h = cfg_.n_heads, dh = cfg_.d_head();
    dxq = Tensor(xq_.shape);
    dxk = Tensor(xk_.shape);
    dxv = Tensor(xv_.shape);
    double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::int64_t s = 0; s < n; ++s) {
      ConstMapRM dym(dy.data.data() + s * tq * d, tq, d);
      const auto& q = q_[static_cast<std::size_t>(s)];
      const auto& k = k_[static_cast<std::size_t>(s)];
      const auto& v = v_[static_cast<std::size_t>(s)];
      const auto& o = o_[static_cast<std::size_t>(s)];
      wo.grad_matrix(d, d) += o.transpose() * dym;
      MatrixRM d_o = dym * wo.as_matrix(d, d).transpose();
      MatrixRM dq = MatrixRM::Zero(tq, d);
      MatrixRM dk = MatrixRM::Zero(tk, d);
      MatrixRM dv = MatrixRM::Zero(tk, d);
      for (std::int64_t i = 0; i < h; ++i) {
        const Tensor& a = attn_[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)];
        MatrixRM d_oi = d_o.middleCols(i * dh, dh);
        MatrixRM vi = v.middleCols(i * dh, dh);
        Tensor da({tq, tk});
        da.as_matrix(tq, tk) = d_oi * vi.transpose();
        dv.middleCols(i * dh, dh) = a.as_matrix(tq, tk).transpose() * d_oi;
        Tensor ds = softmax_rows_backward(a, da);
        dq.middleCols(i * dh, dh) =
            ds.as_matrix(tq, tk) * k.middleCols(i * dh, dh) * inv;
        dk.middleCols(i * dh, dh) =
            ds.as_matrix(tq, tk).transpose() * q.middleCols(i * dh, dh) * inv;
      }
      auto sm = [&](const Tensor& t, std::int64_t tok) {
        return ConstMapRM(t.data.data() + s * tok * d, tok, d);
      };
      wq.grad_matrix(d, d) += sm(xq_, tq).transpose() * dq;
      wk.grad_matrix(d, d) += sm(xk_, tk).transpose() * dk;
      wv.grad_matrix(d, d) += sm(xv_, tk).transpose() * dv;
      MapRM(dxq.data.data() + s * tq * d, tq, d) = dq * wq.as_matrix(d, d).transpose();
      MapRM(dxk.data.data() + s * tk * d, tk, d) = dk * wk.as_matrix(d, d).transpose();
      MapRM(dxv.data.data() + s * tk * d, tk, d) = dv * wv.as_matrix(d, d).transpose();
    }
  }

  Tensor backward_self(const Tensor& dy) {
    Tensor a, b, c;
    backward(dy, a, b, c);
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i] + c.data[i];
    return a;
  }

  /// attention()[sample][head]: row-stochastic [tq, tk] weights of the last
  /// forward pass.
  const std::vector<std::vector<Tensor>>& attention() const { return attn_; }

  const AttentionConfig& config() const { return cfg_; }

  Tensor wq, wk, wv, wo;  // each [d_model, d_model]

 private:
  void validate_input(const Tensor& x) const {
    if (x.rank() != 3 || x.dim(2) != cfg_.d_model)
      throw std::invalid_argument("attention: expected [N,T," +
                                  std::to_string(cfg_.d_model) + "], got " + x.shape_str());
  }

  AttentionConfig cfg_;
  Tensor xq_, xk_, xv_;
  std::vector<MatrixRM> q_, k_, v_, o_;
  std::vector<std::vector<Tensor>> attn_;
};

}  // namespace xlce
