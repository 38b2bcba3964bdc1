#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "xlce/channel.hpp"
#include "xlce/io.hpp"
#include "xlce/rng.hpp"

namespace xlce {

/// SNR policy for dataset generation. `Uniform` draws a per-sample SNR from
/// [lo_db, hi_db]; the file header then stores NaN.
struct SnrPolicy {
  enum class Kind { Noiseless, Fixed, Uniform };
  Kind kind = Kind::Fixed;
  double snr_db = 10.0;
  double lo_db = -10.0;
  double hi_db = 20.0;
  double pilot_power = 1.0;

  static SnrPolicy noiseless(double pilot_power = 1.0) {
    SnrPolicy p;
    p.kind = Kind::Noiseless;
    p.pilot_power = pilot_power;
    return p;
  }
  static SnrPolicy fixed(double snr_db, double pilot_power = 1.0) {
    SnrPolicy p;
    p.kind = Kind::Fixed;
    p.snr_db = snr_db;
    p.pilot_power = pilot_power;
    return p;
  }
  static SnrPolicy uniform(double lo_db, double hi_db, double pilot_power = 1.0) {
    SnrPolicy p;
    p.kind = Kind::Uniform;
    p.lo_db = lo_db;
    p.hi_db = hi_db;
    p.pilot_power = pilot_power;
    return p;
  }

  SignalConfig draw(Rng& rng) const {
    switch (kind) {
      case Kind::Noiseless: {
        SignalConfig s;
        s.pilot_power = pilot_power;
        s.noise_variance = 0.0;
        return s;
      }
      case Kind::Fixed:
        return SignalConfig::from_snr_db(snr_db, pilot_power);
      case Kind::Uniform:
      default:
        return SignalConfig::from_snr_db(rng.uniform(lo_db, hi_db), pilot_power);
    }
  }

  float header_snr_db() const {
    switch (kind) {
      case Kind::Noiseless:
        return std::numeric_limits<float>::infinity();
      case Kind::Fixed:
        return static_cast<float>(snr_db);
      case Kind::Uniform:
      default:
        return std::numeric_limits<float>::quiet_NaN();
    }
  }
};

struct Sample {
  ComplexChannel input;   // LS estimate h_hat (network input)
  ComplexChannel target;  // ground-truth h
};

struct Dataset {
  std::uint32_t m = 0;
  float snr_db = std::numeric_limits<float>::quiet_NaN();
  std::vector<Sample> samples;
};

inline float quantize_f32(double v) { return static_cast<float>(v); }

/// n (h_hat, h) pairs. Sample i is drawn entirely from the stream
/// (seed, "dataset", i) — paths, then the SNR (uniform policy), then noise —
/// so generation order or partitioning cannot change the data. Values are
/// quantized to f32 at generation so in-memory data equals the file content.
inline Dataset generate_dataset(const ChannelConfig& chan, const SnrPolicy& policy,
                                int n, std::uint64_t seed) {
  chan.validate();
  chan.array.sqrt_m();  // network input needs square M
  if (n < 1) throw std::invalid_argument("dataset: sample count must be positive");
  Dataset ds;
  ds.m = static_cast<std::uint32_t>(chan.array.m);
  ds.snr_db = policy.header_snr_db();
  ds.samples.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, "dataset", static_cast<std::uint64_t>(i)));
    auto paths = sample_paths(chan, rng);
    ComplexChannel h = generate_channel(paths, chan.array);
    SignalConfig sig = policy.draw(rng);
    ComplexChannel y = received_signal(h, sig, rng);
    ComplexChannel hhat = ls_estimate(y, sig);
    Sample& s = ds.samples[static_cast<std::size_t>(i)];
    s.input.resize(chan.array.m);
    s.target.resize(chan.array.m);
    for (int a = 0; a < chan.array.m; ++a) {
      s.input(a) = {quantize_f32(hhat(a).real()), quantize_f32(hhat(a).imag())};
      s.target(a) = {quantize_f32(h(a).real()), quantize_f32(h(a).imag())};
    }
  }
  return ds;
}

inline constexpr std::uint32_t kDatasetVersion = 1;

/// XLCE file: magic "XLCE", version u32, M u32, sample_count u32, snr_db f32
/// (NaN when per-sample), then per sample 2M f32 (h_hat re/im interleaved)
/// followed by 2M f32 (h re/im interleaved).
inline void save_dataset(const std::string& path, const Dataset& ds) {
  BinaryWriter w(path);
  w.magic("XLCE");
  w.u32(kDatasetVersion);
  w.u32(ds.m);
  w.u32(static_cast<std::uint32_t>(ds.samples.size()));
  w.f32(ds.snr_db);
  for (const auto& s : ds.samples) {
    for (Eigen::Index a = 0; a < s.input.size(); ++a) {
      w.f32(static_cast<float>(s.input(a).real()));
      w.f32(static_cast<float>(s.input(a).imag()));
    }
    for (Eigen::Index a = 0; a < s.target.size(); ++a) {
      w.f32(static_cast<float>(s.target(a).real()));
      w.f32(static_cast<float>(s.target(a).imag()));
    }
  }
  w.close();
}

inline Dataset load_dataset(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic("XLCE");
  std::uint32_t version = r.u32();
  if (version != kDatasetVersion)
    throw std::runtime_error("unsupported dataset version " + std::to_string(version) +
                             " in " + path);
  Dataset ds;
  ds.m = r.u32();
  std::uint32_t count = r.u32();
  ds.snr_db = r.f32();
  ds.samples.resize(count);
  for (auto& s : ds.samples) {
    s.input.resize(ds.m);
    s.target.resize(ds.m);
    for (std::uint32_t a = 0; a < ds.m; ++a) {
      double re = r.f32();
      double im = r.f32();
      s.input(a) = {re, im};
    }
    for (std::uint32_t a = 0; a < ds.m; ++a) {
      double re = r.f32();
      double im = r.f32();
      s.target(a) = {re, im};
    }
  }
  return ds;
}

}  // namespace xlce
