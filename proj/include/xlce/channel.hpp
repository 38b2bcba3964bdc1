#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <vector>

#include "xlce/rng.hpp"
#include "xlce/tensor.hpp"

namespace xlce {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

using ComplexChannel = Eigen::VectorXcd;

/// Uplink array geometry: M-element half-wavelength ULA by default.
struct ArrayConfig {
  int m = 256;             // antenna count
  double lambda_m = 0.01;  // carrier wavelength [m]
  double spacing_m = 0.0;  // antenna spacing d [m]; 0 means lambda/2

  double spacing() const { return spacing_m > 0.0 ? spacing_m : lambda_m / 2.0; }

  void validate() const {
    if (m < 1) throw std::invalid_argument("array: M must be positive");
    if (!(lambda_m > 0.0)) throw std::invalid_argument("array: lambda must be positive");
    if (!(spacing() > 0.0)) throw std::invalid_argument("array: spacing must be positive");
  }

  /// The (sqrt(M), sqrt(M), 2) network input requires M >= 4 and square.
  int sqrt_m() const {
    int r = static_cast<int>(std::llround(std::sqrt(static_cast<double>(m))));
    if (m < 4 || r * r != m)
      throw std::invalid_argument("array: M must be a perfect square >= 4, got " +
                                  std::to_string(m));
    return r;
  }
};

enum class FieldKind { FarField, NearField };

/// One propagation path: complex gain, azimuth, and (near-field only) the
/// scatterer distance from the array center.
struct PathParams {
  std::complex<double> gain;
  double phi = 0.0;              // radians in [-pi/2, pi/2]
  std::optional<double> r_m;     // engaged iff kind == NearField
  FieldKind kind = FieldKind::FarField;

  void validate() const {
    if (phi < -kPi / 2 - 1e-12 || phi > kPi / 2 + 1e-12)
      throw std::invalid_argument("path: phi outside [-pi/2, pi/2]");
    if (kind == FieldKind::NearField) {
      if (!r_m || !(*r_m > 0.0))
        throw std::invalid_argument("path: near-field path needs r > 0");
    } else if (r_m) {
      throw std::invalid_argument("path: far-field path must not carry r");
    }
  }
};

struct ChannelConfig {
  ArrayConfig array;
  int paths = 6;           // L
  int far_paths = 1;       // L0, 0 <= L0 <= L
  double gain_variance = 1.0;
  double r_min_m = 10.0;
  double r_max_m = 80.0;
  std::uint64_t seed = 0;

  void validate() const {
    array.validate();
    if (paths < 1) throw std::invalid_argument("channel: L must be >= 1");
    if (far_paths < 0 || far_paths > paths)
      throw std::invalid_argument("channel: L0 must satisfy 0 <= L0 <= L");
    if (!(gain_variance > 0.0))
      throw std::invalid_argument("channel: gain variance must be positive");
    if (far_paths < paths) {
      if (!(r_min_m > 0.0) || !(r_max_m > r_min_m))
        throw std::invalid_argument("channel: need 0 < r_min < r_max");
    }
  }
};

/// Pilot model y = sqrt(P) h + eta.
struct SignalConfig {
  double pilot_power = 1.0;      // P (linear)
  double noise_variance = 0.0;   // per-antenna complex noise variance

  void validate() const {
    if (!(pilot_power > 0.0)) throw std::invalid_argument("signal: P must be positive");
    if (noise_variance < 0.0)
      throw std::invalid_argument("signal: noise variance must be >= 0");
  }

  double snr_db() const {
    return 10.0 * std::log10(pilot_power / noise_variance);
  }

  static SignalConfig from_snr_db(double snr_db, double pilot_power = 1.0) {
    SignalConfig s;
    s.pilot_power = pilot_power;
    s.noise_variance = pilot_power / std::pow(10.0, snr_db / 10.0);
    return s;
  }
};

/// Near/far boundary. For d = lambda/2 this is the M^2 lambda / 2 form; for
/// other spacings the general 2 (M-1)^2 d^2 / lambda aperture rule applies.
inline double rayleigh_distance(const ArrayConfig& a) {
  a.validate();
  double d = a.spacing();
  if (std::abs(d - a.lambda_m / 2.0) <= 1e-12 * a.lambda_m)
    return static_cast<double>(a.m) * static_cast<double>(a.m) * a.lambda_m / 2.0;
  double aperture = (a.m - 1) * d;
  return 2.0 * aperture * aperture / a.lambda_m;
}

/// Relative antenna position about the array center: delta_m = (2m - M + 1)/2.
inline double antenna_offset(int m_index, int m_total) {
  return (2.0 * m_index - m_total + 1.0) / 2.0;
}

/// Plane-wave steering vector, unit norm. Entry m = exp(j 2pi (d/lambda) m sin phi)/sqrt(M)
/// with antenna 0 as phase reference; the sign matches the r -> inf limit of
/// the spherical-wave vector below.
inline ComplexChannel far_field_steering(const ArrayConfig& a, double phi) {
  a.validate();
  ComplexChannel v(a.m);
  double scale = 1.0 / std::sqrt(static_cast<double>(a.m));
  double step = 2.0 * kPi * (a.spacing() / a.lambda_m) * std::sin(phi);
  for (int m = 0; m < a.m; ++m) {
    double phase = step * m;
    v(m) = std::complex<double>(scale * std::cos(phase), scale * std::sin(phase));
  }
  return v;
}

/// Spherical-wave steering vector, unit norm, phase referenced to the array
/// center: entry m = exp(-j 2pi (r_m - r)/lambda)/sqrt(M) with
/// r_m = sqrt(r^2 + delta_m^2 d^2 - 2 r delta_m d sin phi).
inline ComplexChannel near_field_steering(const ArrayConfig& a, double phi, double r) {
  a.validate();
  if (!(r > 0.0)) throw std::invalid_argument("steering: near-field r must be > 0");
  ComplexChannel v(a.m);
  double d = a.spacing();
  double scale = 1.0 / std::sqrt(static_cast<double>(a.m));
  double s = std::sin(phi);
  for (int m = 0; m < a.m; ++m) {
    double delta = antenna_offset(m, a.m);
    double rm = std::sqrt(r * r + delta * delta * d * d - 2.0 * r * delta * d * s);
    double phase = -2.0 * kPi * (rm - r) / a.lambda_m;
    v(m) = std::complex<double>(scale * std::cos(phase), scale * std::sin(phase));
  }
  return v;
}

inline ComplexChannel steering(const ArrayConfig& a, const PathParams& p) {
  return p.kind == FieldKind::FarField ? far_field_steering(a, p.phi)
                                       : near_field_steering(a, p.phi, *p.r_m);
}

/// Draws L0 far-field then L-L0 near-field paths. Per path the draw order is
/// phi, (r for near paths), gain; gains are CN(0, sigma^2).
inline std::vector<PathParams> sample_paths(const ChannelConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<PathParams> out;
  out.reserve(static_cast<std::size_t>(cfg.paths));
  for (int l = 0; l < cfg.paths; ++l) {
    PathParams p;
    p.kind = l < cfg.far_paths ? FieldKind::FarField : FieldKind::NearField;
    p.phi = rng.uniform(-kPi / 2, kPi / 2);
    if (p.kind == FieldKind::NearField) p.r_m = rng.uniform(cfg.r_min_m, cfg.r_max_m);
    p.gain = rng.cgaussian(cfg.gain_variance);
    out.push_back(p);
  }
  return out;
}

/// h = sqrt(M/L) * sum_l g_l a_l, with a_l plane- or spherical-wave per path.
inline ComplexChannel generate_channel(const std::vector<PathParams>& paths,
                                       const ArrayConfig& a) {
  if (paths.empty()) throw std::invalid_argument("channel: path list is empty");
  a.validate();
  ComplexChannel h = ComplexChannel::Zero(a.m);
  for (const auto& p : paths) {
    p.validate();
    h += p.gain * steering(a, p);
  }
  double scale = std::sqrt(static_cast<double>(a.m) / static_cast<double>(paths.size()));
  return scale * h;
}

/// y = sqrt(P) h + eta. Zero noise variance adds nothing (and draws nothing).
inline ComplexChannel received_signal(const ComplexChannel& h, const SignalConfig& sig,
                                      Rng& rng) {
  sig.validate();
  ComplexChannel y = std::sqrt(sig.pilot_power) * h;
  if (sig.noise_variance > 0.0) {
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += rng.cgaussian(sig.noise_variance);
  }
  return y;
}

/// LS estimate h_hat = y / sqrt(P).
inline ComplexChannel ls_estimate(const ComplexChannel& y, const SignalConfig& sig) {
  if (!(sig.pilot_power > 0.0))
    throw std::invalid_argument("ls: pilot power must be positive");
  return y / std::sqrt(sig.pilot_power);
}

/// Packs a complex channel into the (sqrt(M), sqrt(M), 2) real tensor:
/// row-major antenna order, plane 0 real, plane 1 imaginary.
inline Tensor pack_real(const ComplexChannel& h) {
  int m = static_cast<int>(h.size());
  ArrayConfig probe;
  probe.m = m;
  probe.lambda_m = 1.0;
  int side = probe.sqrt_m();
  Tensor t({side, side, 2});
  for (int k = 0; k < m; ++k) {
    t.data[static_cast<std::size_t>(2 * k)] = h(k).real();
    t.data[static_cast<std::size_t>(2 * k + 1)] = h(k).imag();
  }
  return t;
}

inline ComplexChannel unpack_real(const Tensor& t) {
  if (t.rank() != 3 || t.dim(0) != t.dim(1) || t.dim(2) != 2)
    throw std::invalid_argument("unpack: expected (s, s, 2) tensor, got " + t.shape_str());
  int m = static_cast<int>(t.dim(0) * t.dim(1));
  ComplexChannel h(m);
  for (int k = 0; k < m; ++k)
    h(k) = std::complex<double>(t.data[static_cast<std::size_t>(2 * k)],
                                t.data[static_cast<std::size_t>(2 * k + 1)]);
  return h;
}

/// Inspection CSV: sample, antenna, re_h, im_h, re_hhat, im_hhat.
inline void export_channels_csv(const std::vector<ComplexChannel>& truth,
                                const std::vector<ComplexChannel>& estimates,
                                const std::string& path) {
  if (truth.size() != estimates.size())
    throw std::invalid_argument("channel csv: sample count mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "sample,antenna,re_h,im_h,re_hhat,im_hhat\n";
  out.precision(17);
  for (std::size_t s = 0; s < truth.size(); ++s) {
    for (Eigen::Index a = 0; a < truth[s].size(); ++a) {
      out << s << ',' << a << ',' << truth[s](a).real() << ',' << truth[s](a).imag()
          << ',' << estimates[s](a).real() << ',' << estimates[s](a).imag() << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace xlce
