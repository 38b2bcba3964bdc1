#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "xlce/channel.hpp"
#include "xlce/complexity.hpp"
#include "xlce/estimators.hpp"
#include "xlce/grad_check.hpp"
#include "xlce/metrics.hpp"
#include "xlce/models.hpp"

namespace xlce {

struct VerifyCheck {
  std::string name;
  double measured = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct VerifyReport {
  std::vector<VerifyCheck> checks;

  void add(const std::string& name, double measured, double tolerance) {
    checks.push_back({name, measured, tolerance, measured < tolerance});
  }
  bool all_pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }
};

/// Max relative-phase error between the near-field vector at distance r and
/// the far-field vector (global phase aligned; magnitudes are 1/sqrt(M) on
/// both sides by construction).
inline double far_field_limit_error(const ArrayConfig& a, double phi, double r) {
  ComplexChannel far = far_field_steering(a, phi);
  ComplexChannel near = near_field_steering(a, phi, r);
  std::complex<double> align = far.dot(near);  // conj(far)^T near
  align /= std::abs(align);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < far.size(); ++i) {
    std::complex<double> ratio = near(i) * std::conj(far(i)) * std::conj(align);
    worst = std::max(worst, std::abs(std::arg(ratio)));
    worst = std::max(worst, std::abs(std::abs(near(i)) / std::abs(far(i)) - 1.0));
  }
  return worst;
}

namespace verify_detail {

inline double steering_norm_error() {
  double worst = 0.0;
  for (int m : {16, 64, 256}) {
    ArrayConfig a;
    a.m = m;
    a.lambda_m = 0.01;
    for (double phi : {-1.4, -0.7, 0.0, 0.3, 1.1, 1.5}) {
      worst = std::max(worst, std::abs(far_field_steering(a, phi).norm() - 1.0));
      for (double r : {5.0, 40.0, 500.0})
        worst = std::max(worst, std::abs(near_field_steering(a, phi, r).norm() - 1.0));
    }
  }
  return worst;
}

inline double far_limit_error() {
  double worst = 0.0;
  for (int m : {64, 256}) {
    ArrayConfig a;
    a.m = m;
    a.lambda_m = 0.01;
    double r = 1e6 * rayleigh_distance(a);
    for (double phi : {-1.2, -0.5, 0.0, 0.4, 0.9, 1.4})
      worst = std::max(worst, far_field_limit_error(a, phi, r));
  }
  return worst;
}

inline double ls_law_error(int n_samples = 10000) {
  ArrayConfig a;
  a.m = 64;
  a.lambda_m = 0.01;
  ChannelConfig chan;
  chan.array = a;
  chan.paths = 6;
  chan.far_paths = 0;
  double d_ray = rayleigh_distance(a);
  chan.r_min_m = 0.1 * d_ray;
  chan.r_max_m = 0.8 * d_ray;
  double worst = 0.0;
  int point = 0;
  for (double snr : {-10.0, 0.0, 10.0, 20.0}) {
    SignalConfig sig = SignalConfig::from_snr_db(snr);
    double err_sum = 0.0, energy_sum = 0.0;
    for (int i = 0; i < n_samples; ++i) {
      Rng rng(derive_seed(2024, "verify/ls/" + std::to_string(point),
                          static_cast<std::uint64_t>(i)));
      ComplexChannel h = generate_channel(sample_paths(chan, rng), a);
      ComplexChannel y = received_signal(h, sig, rng);
      ComplexChannel hat = ls_estimate(y, sig);
      err_sum += (h - hat).squaredNorm();
      energy_sum += h.squaredNorm();
    }
    double db = to_db(err_sum / energy_sum);
    worst = std::max(worst, std::abs(db + snr));
    ++point;
  }
  return worst;
}

inline double pack_roundtrip_error() {
  Rng rng(7);
  ComplexChannel h(16);
  for (int i = 0; i < 16; ++i) h(i) = rng.cgaussian(1.0);
  ComplexChannel back = unpack_real(pack_real(h));
  return (h - back).cwiseAbs().maxCoeff();
}

inline Tensor random_tensor(std::vector<std::int64_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = scale * rng.gaussian();
  return t;
}

inline double grad_linear_error() {
  Rng rng(11);
  Linear layer(5, 7, rng);
  Tensor x = random_tensor({3, 5}, rng);
  x.requires_grad();
  layer.w.zero_grad();
  layer.b.zero_grad();
  Tensor y = layer.forward(x);
  Tensor proj = project_grad(y);
  Tensor dx = layer.backward(proj);
  x.grad = dx.data;
  auto loss = [&layer, &x]() {
    auto copy = layer;
    return project(copy.forward(x));
  };
  return grad_check(loss, {&x, &layer.w, &layer.b}).max_rel_err;
}

inline double grad_conv_error() {
  Rng rng(12);
  Conv2d layer(2, 3, rng);
  Tensor x = random_tensor({1, 4, 4, 2}, rng);
  x.requires_grad();
  layer.w.zero_grad();
  layer.b.zero_grad();
  Tensor y = layer.forward(x);
  Tensor dx = layer.backward(project_grad(y));
  x.grad = dx.data;
  auto loss = [&layer, &x]() {
    auto copy = layer;
    return project(copy.forward(x));
  };
  return grad_check(loss, {&x, &layer.w, &layer.b}).max_rel_err;
}

inline double grad_attention_error() {
  Rng rng(13);
  MultiHeadAttention mha(AttentionConfig{6, 2}, rng);
  Tensor x = random_tensor({1, 4, 6}, rng);
  x.requires_grad();
  for (Tensor* t : {&mha.wq, &mha.wk, &mha.wv, &mha.wo}) t->zero_grad();
  Tensor y = mha.forward(x);
  Tensor dx = mha.backward_self(project_grad(y));
  x.grad = dx.data;
  auto loss = [&mha, &x]() {
    auto copy = mha;
    return project(copy.forward(x));
  };
  return grad_check(loss, {&x, &mha.wq, &mha.wk, &mha.wv, &mha.wo}).max_rel_err;
}

inline double grad_matcenet_error() {
  Rng rng(14);
  MatCenetConfig cfg;
  cfg.m = 16;
  cfg.feature_maps = 8;
  cfg.heads = 2;
  cfg.ffn_hidden = 16;
  MatCenet model(cfg, rng);
  // the tail scale is zero-initialized; re-enable it so gradients reach every layer
  std::fill(model.tail_bn_.gamma.data.begin(), model.tail_bn_.gamma.data.end(), 0.8);
  Tensor x = random_tensor({2, 4, 4, 2}, rng);
  x.requires_grad();
  model.zero_grad();
  Tensor y = model.forward(x, Mode::Train);
  Tensor dx = model.backward(project_grad(y));
  x.grad = dx.data;
  auto loss = [&model, &x]() {
    auto copy = model;  // keep BN running stats of the checked instance intact
    return project(copy.forward(x, Mode::Train));
  };
  std::vector<Tensor*> tensors = model.trainable();
  tensors.push_back(&x);
  return grad_check(loss, tensors).max_rel_err;
}

inline double attention_row_stochastic_error() {
  Rng rng(15);
  MatCenetConfig cfg;
  cfg.m = 16;
  cfg.feature_maps = 8;
  cfg.heads = 2;
  cfg.ffn_hidden = 16;
  MatCenet model(cfg, rng);
  Tensor x = random_tensor({2, 4, 4, 2}, rng);
  MatCenetActivations acts;
  model.forward(x, Mode::Train, &acts);
  double worst = 0.0;
  auto scan = [&worst](const std::vector<std::vector<Tensor>>& groups) {
    for (const auto& heads : groups)
      for (const auto& a : heads)
        for (std::int64_t i = 0; i < a.dim(0); ++i) {
          double s = 0.0;
          for (std::int64_t j = 0; j < a.dim(1); ++j) s += a.at({i, j});
          worst = std::max(worst, std::abs(s - 1.0));
        }
  };
  scan(acts.feature_attention);
  scan(acts.spatial_attention);
  return worst;
}

inline double residual_identity_error() {
  Rng rng(16);
  MatCenetConfig cfg;
  cfg.m = 16;
  cfg.feature_maps = 8;
  cfg.heads = 2;
  cfg.ffn_hidden = 16;
  MatCenet model(cfg, rng);
  std::fill(model.tail_conv_.w.data.begin(), model.tail_conv_.w.data.end(), 0.0);
  std::fill(model.tail_conv_.b.data.begin(), model.tail_conv_.b.data.end(), 0.0);
  std::fill(model.tail_bn_.gamma.data.begin(), model.tail_bn_.gamma.data.end(), 0.0);
  std::fill(model.tail_bn_.beta.data.begin(), model.tail_bn_.beta.data.end(), 0.0);
  Tensor x = random_tensor({2, 4, 4, 2}, rng);
  Tensor y = model.forward(x, Mode::Infer);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.data.size(); ++i)
    worst = std::max(worst, std::abs(y.data[i] - x.data[i]));
  return worst;
}

inline double lmmse_zero_noise_error() {
  Rng rng(17);
  int m = 16;
  std::vector<ComplexChannel> set;
  for (int i = 0; i < 64; ++i) {
    ComplexChannel h(m);
    for (int a = 0; a < m; ++a) h(a) = rng.cgaussian(1.0);
    set.push_back(h);
  }
  CovarianceModel cov = fit_covariance(set);
  SignalConfig sig;
  sig.pilot_power = 4.0;
  sig.noise_variance = 0.0;
  ComplexChannel y(m);
  for (int a = 0; a < m; ++a) y(a) = rng.cgaussian(1.0);
  ComplexChannel lmmse = lmmse_estimate(y, sig, cov);
  ComplexChannel ls = ls_estimate(y, sig);
  return (lmmse - ls).cwiseAbs().maxCoeff();
}

inline double omp_recovery_error() {
  ArrayConfig a;
  a.m = 64;
  a.lambda_m = 0.01;
  Dictionary dict = build_dictionary(a, 64, {});
  ComplexChannel h = 3.0 * dict.atoms.col(17);
  OmpResult r = omp_core(h, dict, {{false, AtomKind::Angular, 1}});
  return r.residual_norms.back();
}

}  // namespace verify_detail

/// The analytic-oracle and gradient-check suite behind `verify`.
inline VerifyReport run_verification() {
  VerifyReport rep;
  {
    ArrayConfig a;
    a.m = 256;
    a.lambda_m = 0.01;
    rep.add("rayleigh_distance_256", std::abs(rayleigh_distance(a) - 327.68), 1e-9);
  }
  rep.add("steering_unit_norm", verify_detail::steering_norm_error(), 1e-12);
  rep.add("far_field_limit", verify_detail::far_limit_error(), 1e-4);
  rep.add("ls_nmse_law_db", verify_detail::ls_law_error(), 0.3);
  rep.add("pack_unpack_roundtrip", verify_detail::pack_roundtrip_error(), 1e-15);
  rep.add("grad_linear", verify_detail::grad_linear_error(), 1e-6);
  rep.add("grad_conv2d", verify_detail::grad_conv_error(), 1e-4);
  rep.add("grad_attention", verify_detail::grad_attention_error(), 1e-4);
  rep.add("grad_matcenet_end_to_end", verify_detail::grad_matcenet_error(), 1e-3);
  rep.add("attention_row_stochastic", verify_detail::attention_row_stochastic_error(), 1e-12);
  rep.add("residual_identity", verify_detail::residual_identity_error(), 1e-15);
  rep.add("lmmse_zero_noise_equals_ls", verify_detail::lmmse_zero_noise_error(), 1e-12);
  rep.add("omp_ongrid_recovery", verify_detail::omp_recovery_error(), 1e-10);
  return rep;
}

}  // namespace xlce
