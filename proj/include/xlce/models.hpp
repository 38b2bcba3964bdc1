#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "xlce/layers.hpp"

namespace xlce {

inline Tensor reshaped(const Tensor& t, std::vector<std::int64_t> shape) {
  if (Tensor::numel(shape) != t.size())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor y = t;
  y.shape = std::move(shape);
  return y;
}

/// [N, A, B] -> [N, B, A].
inline Tensor transpose_batch(const Tensor& x) {
  if (x.rank() != 3) throw std::invalid_argument("transpose_batch: expected rank 3");
  std::int64_t n = x.dim(0), a = x.dim(1), b = x.dim(2);
  Tensor y({n, b, a});
  for (std::int64_t s = 0; s < n; ++s) {
    const double* src = x.data.data() + s * a * b;
    double* dst = y.data.data() + s * a * b;
    for (std::int64_t i = 0; i < a; ++i)
      for (std::int64_t j = 0; j < b; ++j) dst[j * a + i] = src[i * b + j];
  }
  return y;
}

inline Tensor slice_sample(const Tensor& x, std::int64_t n) {
  std::vector<std::int64_t> shape(x.shape.begin() + 1, x.shape.end());
  std::int64_t sz = Tensor::numel(shape);
  Tensor y(shape);
  std::copy(x.data.begin() + n * sz, x.data.begin() + (n + 1) * sz, y.data.begin());
  return y;
}

struct MatCenetConfig {
  int m = 256;          // antennas
  int feature_maps = 64;  // F
  int heads = 4;          // h
  int ffn_hidden = 0;     // 0 -> 4 * F

  static constexpr int kEncoders = 2;
  static constexpr int kFrontConvs = 4;

  int ffn() const { return ffn_hidden > 0 ? ffn_hidden : 4 * feature_maps; }

  int side() const {
    int r = static_cast<int>(std::llround(std::sqrt(static_cast<double>(m))));
    if (m < 4 || r * r != m)
      throw std::invalid_argument("matcenet: M must be a perfect square >= 4");
    return r;
  }

  void validate() const {
    side();
    if (feature_maps < 1) throw std::invalid_argument("matcenet: F must be positive");
    if (heads < 1) throw std::invalid_argument("matcenet: heads must be positive");
    if (m % heads != 0 || feature_maps % heads != 0)
      throw std::invalid_argument("matcenet: heads must divide both M and F");
    if (ffn() < 1) throw std::invalid_argument("matcenet: ffn width must be positive");
  }
};

/// Feature-map attention: the F feature maps of the (M, F) activation act as
/// F tokens of dimension M (attention runs on the transpose), producing
/// per-head F x F weight matrices; the reshaped result is residual-summed
/// with the input.
class FeatureMapAttention {
 public:
  FeatureMapAttention() = default;
  FeatureMapAttention(int m, int heads, Rng& rng)
      : mha_(AttentionConfig{m, heads}, rng) {}

  Tensor forward(const Tensor& x) {  // [N, M, F]
    Tensor y = mha_.forward(transpose_batch(x));
    pre_residual_ = transpose_batch(y);
    Tensor out = x;
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] += pre_residual_.data[i];
    return out;
  }

  Tensor backward(const Tensor& d_out) {
    Tensor d_attn = mha_.backward_self(transpose_batch(d_out));
    Tensor dx = d_out;
    Tensor dt = transpose_batch(d_attn);
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dt.data[i];
    return dx;
  }

  MultiHeadAttention& mha() { return mha_; }
  const MultiHeadAttention& mha() const { return mha_; }
  const Tensor& pre_residual() const { return pre_residual_; }

 private:
  MultiHeadAttention mha_;
  Tensor pre_residual_;
};

/// Spatial attention: the M rows of the (M, F) activation are M tokens of
/// dimension F, producing per-head M x M weight matrices; residual-summed
/// with the input.
class SpatialAttention {
 public:
  SpatialAttention() = default;
  SpatialAttention(int feature_maps, int heads, Rng& rng)
      : mha_(AttentionConfig{feature_maps, heads}, rng) {}

  Tensor forward(const Tensor& x) {  // [N, M, F]
    pre_residual_ = mha_.forward(x);
    Tensor out = x;
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] += pre_residual_.data[i];
    return out;
  }

  Tensor backward(const Tensor& d_out) {
    Tensor d_attn = mha_.backward_self(d_out);
    Tensor dx = d_out;
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += d_attn.data[i];
    return dx;
  }

  MultiHeadAttention& mha() { return mha_; }
  const MultiHeadAttention& mha() const { return mha_; }
  const Tensor& pre_residual() const { return pre_residual_; }

 private:
  MultiHeadAttention mha_;
  Tensor pre_residual_;
};

/// One encoder: feature attention -> spatial attention -> two-layer FFN with
/// residual -> layer norm. Input and output are [N, M, F].
class EncoderBlock {
 public:
  EncoderBlock() = default;
  EncoderBlock(const MatCenetConfig& cfg, Rng& rng)
      : feat_(cfg.m, cfg.heads, rng), spat_(cfg.feature_maps, cfg.heads, rng),
        fc1_(cfg.feature_maps, cfg.ffn(), rng), fc2_(cfg.ffn(), cfg.feature_maps, rng),
        ln_(cfg.feature_maps) {}

  Tensor forward(const Tensor& x) {
    h2_ = feat_.forward(x);
    h3_ = spat_.forward(h2_);
    Tensor f = fc2_.forward(relu_.forward(fc1_.forward(h3_)));
    for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] += h3_.data[i];
    return ln_.forward(f);
  }

  Tensor backward(const Tensor& d_h4) {
    Tensor d_sum = ln_.backward(d_h4);
    Tensor d_h3 = fc1_.backward(relu_.backward(fc2_.backward(d_sum)));
    for (std::size_t i = 0; i < d_h3.data.size(); ++i) d_h3.data[i] += d_sum.data[i];
    return feat_.backward(spat_.backward(d_h3));
  }

  FeatureMapAttention feat_;
  SpatialAttention spat_;
  Linear fc1_, fc2_;
  Relu relu_;
  LayerNorm ln_;
  Tensor h2_, h3_;  // kept for activation capture
};

/// Intermediate activations (sample 0 of the last forward) plus the per-head
/// attention weight matrices of both encoders.
struct MatCenetActivations {
  Tensor h_input, h0, h1, h2, h3, h4, h5, h6, h7, h_output;
  std::vector<std::vector<Tensor>> feature_attention;  // [encoder][head], F x F
  std::vector<std::vector<Tensor>> spatial_attention;  // [encoder][head], M x M
  Tensor s_in, s_out;  // (F, M): transposed input/output of encoder 1's spatial attention
};

/// MAT-CENet: four conv(F)+BN+ReLU blocks, two mixed-attention encoders, a
/// conv(2)+BN tail, and residual subtraction H_output = H_input - H_7.
class MatCenet {
 public:
  MatCenet() = default;
  MatCenet(MatCenetConfig cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    int f = cfg.feature_maps;
    convs_.emplace_back(2, f, rng);
    bns_.emplace_back(f);
    for (int i = 1; i < MatCenetConfig::kFrontConvs; ++i) {
      convs_.emplace_back(f, f, rng);
      bns_.emplace_back(f);
    }
    relus_.resize(static_cast<std::size_t>(MatCenetConfig::kFrontConvs));
    for (int e = 0; e < MatCenetConfig::kEncoders; ++e) encoders_.emplace_back(cfg, rng);
    tail_conv_ = Conv2d(f, 2, rng);
    tail_bn_ = BatchNorm(2);
  }

  /// Training warm start: zeroes the last projection of every residual
  /// branch (attention output projections, FFN second layer, tail BN scale)
  /// so the network begins as a near-identity and each correction branch
  /// grows from zero. Called by the training front end on fresh models.
  void zero_residual_branches() {
    std::fill(tail_bn_.gamma.data.begin(), tail_bn_.gamma.data.end(), 0.0);
    for (auto& enc : encoders_) {
      std::fill(enc.feat_.mha().wo.data.begin(), enc.feat_.mha().wo.data.end(), 0.0);
      std::fill(enc.spat_.mha().wo.data.begin(), enc.spat_.mha().wo.data.end(), 0.0);
      std::fill(enc.fc2_.w.data.begin(), enc.fc2_.w.data.end(), 0.0);
    }
  }

  Tensor forward(const Tensor& input, Mode mode, MatCenetActivations* cap = nullptr) {
    int s = cfg_.side();
    if (input.rank() != 4 || input.dim(1) != s || input.dim(2) != s || input.dim(3) != 2)
      throw std::invalid_argument("matcenet: expected [N," + std::to_string(s) + "," +
                                  std::to_string(s) + ",2], got " + input.shape_str());
    std::int64_t n = input.dim(0);
    Tensor t = input;
    for (std::size_t i = 0; i < convs_.size(); ++i)
      t = relus_[i].forward(bns_[i].forward(convs_[i].forward(t), mode));
    Tensor h0 = t;
    Tensor h = reshaped(t, {n, cfg_.m, cfg_.feature_maps});
    Tensor h1 = h;
    for (std::size_t e = 0; e < encoders_.size(); ++e) {
      h = encoders_[e].forward(h);
      if (cap && e == 0) cap->h4 = slice_sample(h, 0);
    }
    Tensor h6 = reshaped(h, {n, s, s, cfg_.feature_maps});
    Tensor h7 = tail_bn_.forward(tail_conv_.forward(h6), mode);
    Tensor out = input;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= h7.data[i];
    if (cap) {
      cap->h_input = slice_sample(input, 0);
      cap->h0 = slice_sample(h0, 0);
      cap->h1 = slice_sample(h1, 0);
      cap->h2 = slice_sample(encoders_[0].h2_, 0);
      cap->h3 = slice_sample(encoders_[0].h3_, 0);
      cap->h5 = slice_sample(h, 0);
      cap->h6 = slice_sample(h6, 0);
      cap->h7 = slice_sample(h7, 0);
      cap->h_output = slice_sample(out, 0);
      cap->feature_attention.clear();
      cap->spatial_attention.clear();
      for (auto& enc : encoders_) {
        cap->feature_attention.push_back(enc.feat_.mha().attention().at(0));
        cap->spatial_attention.push_back(enc.spat_.mha().attention().at(0));
      }
      cap->s_in = transpose2d(slice_sample(encoders_[0].h2_, 0));
      cap->s_out = transpose2d(slice_sample(encoders_[0].spat_.pre_residual(), 0));
    }
    return out;
  }

  /// Backpropagates dL/d(H_output); accumulates parameter grads and returns
  /// dL/d(H_input).
  Tensor backward(const Tensor& d_out) {
    std::int64_t n = d_out.dim(0);
    int s = cfg_.side();
    Tensor d = d_out;
    for (auto& v : d.data) v = -v;  // through the subtraction
    d = tail_conv_.backward(tail_bn_.backward(d));
    d = reshaped(d, {n, cfg_.m, cfg_.feature_maps});
    for (int e = MatCenetConfig::kEncoders - 1; e >= 0; --e)
      d = encoders_[static_cast<std::size_t>(e)].backward(d);
    d = reshaped(d, {n, s, s, cfg_.feature_maps});
    for (int i = MatCenetConfig::kFrontConvs - 1; i >= 0; --i) {
      auto ui = static_cast<std::size_t>(i);
      d = convs_[ui].backward(bns_[ui].backward(relus_[ui].backward(d)));
    }
    Tensor din = d_out;
    for (std::size_t i = 0; i < din.data.size(); ++i) din.data[i] += d.data[i];
    return din;
  }

  std::vector<NamedParam> state() {
    std::vector<NamedParam> out;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      std::string p = "conv" + std::to_string(i + 1);
      out.push_back({p + ".w", &convs_[i].w, true});
      out.push_back({p + ".b", &convs_[i].b, true});
      p = "bn" + std::to_string(i + 1);
      out.push_back({p + ".gamma", &bns_[i].gamma, true});
      out.push_back({p + ".beta", &bns_[i].beta, true});
      out.push_back({p + ".running_mean", &bns_[i].running_mean, false});
      out.push_back({p + ".running_var", &bns_[i].running_var, false});
    }
    for (std::size_t e = 0; e < encoders_.size(); ++e) {
      std::string p = "enc" + std::to_string(e + 1);
      auto& enc = encoders_[e];
      auto mha = [&out](const std::string& base, MultiHeadAttention& a) {
        out.push_back({base + ".wq", &a.wq, true});
        out.push_back({base + ".wk", &a.wk, true});
        out.push_back({base + ".wv", &a.wv, true});
        out.push_back({base + ".wo", &a.wo, true});
      };
      mha(p + ".feat", enc.feat_.mha());
      mha(p + ".spat", enc.spat_.mha());
      out.push_back({p + ".ffn1.w", &enc.fc1_.w, true});
      out.push_back({p + ".ffn1.b", &enc.fc1_.b, true});
      out.push_back({p + ".ffn2.w", &enc.fc2_.w, true});
      out.push_back({p + ".ffn2.b", &enc.fc2_.b, true});
      out.push_back({p + ".ln.gamma", &enc.ln_.gamma, true});
      out.push_back({p + ".ln.beta", &enc.ln_.beta, true});
    }
    out.push_back({"tail_conv.w", &tail_conv_.w, true});
    out.push_back({"tail_conv.b", &tail_conv_.b, true});
    out.push_back({"tail_bn.gamma", &tail_bn_.gamma, true});
    out.push_back({"tail_bn.beta", &tail_bn_.beta, true});
    out.push_back({"tail_bn.running_mean", &tail_bn_.running_mean, false});
    out.push_back({"tail_bn.running_var", &tail_bn_.running_var, false});
    return out;
  }

  std::vector<Tensor*> trainable() {
    std::vector<Tensor*> out;
    for (auto& p : state())
      if (p.trainable) out.push_back(p.tensor);
    return out;
  }

  void zero_grad() {
    for (Tensor* t : trainable()) {
      t->requires_grad();
      t->zero_grad();
    }
  }

  std::string descriptor() const {
    return "arch=matcenet\nm=" + std::to_string(cfg_.m) +
           "\nfeature_maps=" + std::to_string(cfg_.feature_maps) +
           "\nheads=" + std::to_string(cfg_.heads) +
           "\nffn_hidden=" + std::to_string(cfg_.ffn()) +
           "\nn_encoders=" + std::to_string(MatCenetConfig::kEncoders) +
           "\nresidual=subtract\n";
  }

  const MatCenetConfig& config() const { return cfg_; }

  std::vector<Conv2d> convs_;
  std::vector<BatchNorm> bns_;
  std::vector<Relu> relus_;
  std::vector<EncoderBlock> encoders_;
  Conv2d tail_conv_;
  BatchNorm tail_bn_;

 private:
  static Tensor transpose2d(const Tensor& x) {
    Tensor b = reshaped(x, {1, x.dim(0), x.dim(1)});
    return slice_sample(transpose_batch(b), 0);
  }

  MatCenetConfig cfg_;
};

// ---------------------------------------------------------------------------
// XLCNet baseline: 8 x (conv F + BN + ReLU), conv 2 + BN, residual subtraction.

struct XlcnetConfig {
  int m = 256;
  int feature_maps = 64;

  static constexpr int kConvBlocks = 8;

  int side() const {
    int r = static_cast<int>(std::llround(std::sqrt(static_cast<double>(m))));
    if (m < 4 || r * r != m)
      throw std::invalid_argument("xlcnet: M must be a perfect square >= 4");
    return r;
  }

  void validate() const {
    side();
    if (feature_maps < 1) throw std::invalid_argument("xlcnet: F must be positive");
  }
};

class Xlcnet {
 public:
  Xlcnet() = default;
  Xlcnet(XlcnetConfig cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    int f = cfg.feature_maps;
    convs_.emplace_back(2, f, rng);
    bns_.emplace_back(f);
    for (int i = 1; i < XlcnetConfig::kConvBlocks; ++i) {
      convs_.emplace_back(f, f, rng);
      bns_.emplace_back(f);
    }
    relus_.resize(static_cast<std::size_t>(XlcnetConfig::kConvBlocks));
    tail_conv_ = Conv2d(f, 2, rng);
    tail_bn_ = BatchNorm(2);
  }

  /// Same training warm start as MAT-CENet: zero tail BN scale, so the
  /// network starts as the exact identity map.
  void zero_residual_branches() {
    std::fill(tail_bn_.gamma.data.begin(), tail_bn_.gamma.data.end(), 0.0);
  }

  Tensor forward(const Tensor& input, Mode mode) {
    int s = cfg_.side();
    if (input.rank() != 4 || input.dim(1) != s || input.dim(2) != s || input.dim(3) != 2)
      throw std::invalid_argument("xlcnet: expected [N," + std::to_string(s) + "," +
                                  std::to_string(s) + ",2], got " + input.shape_str());
    Tensor t = input;
    for (std::size_t i = 0; i < convs_.size(); ++i)
      t = relus_[i].forward(bns_[i].forward(convs_[i].forward(t), mode));
    Tensor h7 = tail_bn_.forward(tail_conv_.forward(t), mode);
    Tensor out = input;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= h7.data[i];
    return out;
  }

  Tensor backward(const Tensor& d_out) {
    Tensor d = d_out;
    for (auto& v : d.data) v = -v;
    d = tail_conv_.backward(tail_bn_.backward(d));
    for (int i = XlcnetConfig::kConvBlocks - 1; i >= 0; --i) {
      auto ui = static_cast<std::size_t>(i);
      d = convs_[ui].backward(bns_[ui].backward(relus_[ui].backward(d)));
    }
    Tensor din = d_out;
    for (std::size_t i = 0; i < din.data.size(); ++i) din.data[i] += d.data[i];
    return din;
  }

  std::vector<NamedParam> state() {
    std::vector<NamedParam> out;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      std::string p = "conv" + std::to_string(i + 1);
      out.push_back({p + ".w", &convs_[i].w, true});
      out.push_back({p + ".b", &convs_[i].b, true});
      p = "bn" + std::to_string(i + 1);
      out.push_back({p + ".gamma", &bns_[i].gamma, true});
      out.push_back({p + ".beta", &bns_[i].beta, true});
      out.push_back({p + ".running_mean", &bns_[i].running_mean, false});
      out.push_back({p + ".running_var", &bns_[i].running_var, false});
    }
    out.push_back({"tail_conv.w", &tail_conv_.w, true});
    out.push_back({"tail_conv.b", &tail_conv_.b, true});
    out.push_back({"tail_bn.gamma", &tail_bn_.gamma, true});
    out.push_back({"tail_bn.beta", &tail_bn_.beta, true});
    out.push_back({"tail_bn.running_mean", &tail_bn_.running_mean, false});
    out.push_back({"tail_bn.running_var", &tail_bn_.running_var, false});
    return out;
  }

  std::vector<Tensor*> trainable() {
    std::vector<Tensor*> out;
    for (auto& p : state())
      if (p.trainable) out.push_back(p.tensor);
    return out;
  }

  void zero_grad() {
    for (Tensor* t : trainable()) {
      t->requires_grad();
      t->zero_grad();
    }
  }

  std::string descriptor() const {
    return "arch=xlcnet\nm=" + std::to_string(cfg_.m) +
           "\nfeature_maps=" + std::to_string(cfg_.feature_maps) +
           "\nresidual=subtract\n";
  }

  const XlcnetConfig& config() const { return cfg_; }

  std::vector<Conv2d> convs_;
  std::vector<BatchNorm> bns_;
  std::vector<Relu> relus_;
  Conv2d tail_conv_;
  BatchNorm tail_bn_;

 private:
  XlcnetConfig cfg_;
};

}  // namespace xlce
