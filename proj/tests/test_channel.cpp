#include <catch2/catch_amalgamated.hpp>

#include <complex>
#include <thread>

#include "xlce/channel.hpp"
#include "xlce/dataset.hpp"
#include "xlce/verify.hpp"

using namespace xlce;
using Catch::Approx;

namespace {

ArrayConfig make_array(int m, double lambda = 0.01, double spacing = 0.0) {
  ArrayConfig a;
  a.m = m;
  a.lambda_m = lambda;
  a.spacing_m = spacing;
  return a;
}

}  // namespace

TEST_CASE("rayleigh distance") {
  ArrayConfig a = make_array(256, 0.01);
  REQUIRE(rayleigh_distance(a) == 256.0 * 256.0 * 0.01 / 2.0);
  REQUIRE(rayleigh_distance(a) == Approx(327.68).margin(1e-10));

  ArrayConfig b = make_array(2, 1.0, 0.5);
  REQUIRE(rayleigh_distance(b) == Approx(2.0).margin(1e-12));

  // general-spacing form: 2 * aperture^2 / lambda
  ArrayConfig c = make_array(8, 1.0, 0.7);
  REQUIRE(rayleigh_distance(c) == Approx(2.0 * 4.9 * 4.9 / 1.0).margin(1e-12));

  ArrayConfig bad = make_array(0, 1.0);
  REQUIRE_THROWS_AS(rayleigh_distance(bad), std::invalid_argument);
  ArrayConfig bad2 = make_array(4, -1.0);
  REQUIRE_THROWS_AS(rayleigh_distance(bad2), std::invalid_argument);
}

TEST_CASE("far-field steering vector") {
  ArrayConfig a = make_array(16);

  SECTION("broadside: every entry 1/sqrt(M)") {
    ComplexChannel v = far_field_steering(a, 0.0);
    for (int i = 0; i < a.m; ++i) {
      REQUIRE(v(i).real() == Approx(0.25).margin(1e-15));
      REQUIRE(v(i).imag() == Approx(0.0).margin(1e-15));
    }
  }

  SECTION("unit norm at any angle") {
    Rng rng(3);
    for (int m : {4, 25, 64, 256}) {
      ArrayConfig arr = make_array(m);
      for (int t = 0; t < 25; ++t) {
        double phi = rng.uniform(-kPi / 2, kPi / 2);
        REQUIRE(std::abs(far_field_steering(arr, phi).norm() - 1.0) < 1e-12);
      }
    }
  }

  SECTION("M=4, phi=pi/2: alternating signs") {
    ComplexChannel v = far_field_steering(make_array(4), kPi / 2);
    double expected[] = {0.5, -0.5, 0.5, -0.5};
    for (int i = 0; i < 4; ++i) {
      REQUIRE(v(i).real() == Approx(expected[i]).margin(1e-12));
      REQUIRE(v(i).imag() == Approx(0.0).margin(1e-12));
    }
  }
}

TEST_CASE("near-field steering vector") {
  SECTION("unit norm") {
    Rng rng(4);
    for (int m : {4, 64, 256}) {
      ArrayConfig arr = make_array(m);
      for (int t = 0; t < 15; ++t) {
        double phi = rng.uniform(-kPi / 2, kPi / 2);
        double r = rng.uniform(1.0, 500.0);
        REQUIRE(std::abs(near_field_steering(arr, phi, r).norm() - 1.0) < 1e-12);
      }
    }
  }

  SECTION("M=2 hand evaluation at broadside") {
    // delta = {-1/2, +1/2}; r_m = sqrt(r^2 + d^2/4); equal phases.
    double lambda = 1.0;
    ArrayConfig arr = make_array(2, lambda);
    double d = lambda / 2.0;
    double r = 10.0 * lambda;
    ComplexChannel v = near_field_steering(arr, 0.0, r);
    double rm = std::sqrt(r * r + d * d / 4.0);
    double phase = -2.0 * kPi * (rm - r) / lambda;
    std::complex<double> want = std::polar(1.0 / std::sqrt(2.0), phase);
    for (int i = 0; i < 2; ++i) {
      REQUIRE(v(i).real() == Approx(want.real()).margin(1e-14));
      REQUIRE(v(i).imag() == Approx(want.imag()).margin(1e-14));
    }
  }

  SECTION("converges to the far-field vector as r -> infinity") {
    for (int m : {16, 64, 256}) {
      ArrayConfig arr = make_array(m);
      double r = 1e6 * rayleigh_distance(arr);
      for (double phi : {-1.3, -0.4, 0.0, 0.2, 0.8, 1.5}) {
        REQUIRE(far_field_limit_error(arr, phi, r) < 1e-4);
      }
    }
  }

  SECTION("rejects r <= 0") {
    REQUIRE_THROWS_AS(near_field_steering(make_array(4), 0.1, 0.0), std::invalid_argument);
    REQUIRE_THROWS_AS(near_field_steering(make_array(4), 0.1, -3.0), std::invalid_argument);
  }
}

TEST_CASE("path sampling") {
  ChannelConfig cfg;
  cfg.array = make_array(16);
  cfg.paths = 6;
  cfg.far_paths = 1;
  cfg.r_min_m = 10.0;
  cfg.r_max_m = 80.0;

  SECTION("1 far + 5 near") {
    Rng rng(5);
    auto paths = sample_paths(cfg, rng);
    REQUIRE(paths.size() == 6);
    int far = 0, near = 0;
    for (const auto& p : paths) {
      if (p.kind == FieldKind::FarField) {
        ++far;
        REQUIRE(!p.r_m.has_value());
      } else {
        ++near;
        REQUIRE(p.r_m.has_value());
        REQUIRE(*p.r_m >= 10.0);
        REQUIRE(*p.r_m <= 80.0);
      }
      REQUIRE(p.phi >= -kPi / 2);
      REQUIRE(p.phi <= kPi / 2);
    }
    REQUIRE(far == 1);
    REQUIRE(near == 5);
  }

  SECTION("all far-field: no r anywhere") {
    ChannelConfig all_far = cfg;
    all_far.paths = 3;
    all_far.far_paths = 3;
    Rng rng(6);
    auto paths = sample_paths(all_far, rng);
    REQUIRE(paths.size() == 3);
    for (const auto& p : paths) {
      REQUIRE(p.kind == FieldKind::FarField);
      REQUIRE(!p.r_m.has_value());
    }
  }

  SECTION("unit gain variance, Monte Carlo") {
    ChannelConfig one = cfg;
    one.paths = 1;
    one.far_paths = 1;
    double sum_re = 0, sum_im = 0, sum_re2 = 0, sum_im2 = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      Rng rng(derive_seed(42, "gain", static_cast<std::uint64_t>(i)));
      auto paths = sample_paths(one, rng);
      double re = paths[0].gain.real(), im = paths[0].gain.imag();
      sum_re += re;
      sum_im += im;
      sum_re2 += re * re;
      sum_im2 += im * im;
    }
    double var = (sum_re2 - sum_re * sum_re / n) / n + (sum_im2 - sum_im * sum_im / n) / n;
    REQUIRE(var == Approx(1.0).epsilon(0.02));
  }

  SECTION("deterministic per seed") {
    Rng a(77), b(77);
    auto pa = sample_paths(cfg, a);
    auto pb = sample_paths(cfg, b);
    for (std::size_t i = 0; i < pa.size(); ++i) {
      REQUIRE(pa[i].phi == pb[i].phi);
      REQUIRE(pa[i].gain == pb[i].gain);
      REQUIRE(pa[i].r_m == pb[i].r_m);
    }
  }

  SECTION("invalid configs rejected") {
    ChannelConfig bad = cfg;
    bad.far_paths = 7;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.paths = 0;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.r_max_m = bad.r_min_m;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
  }
}

TEST_CASE("hybrid channel synthesis") {
  ArrayConfig arr = make_array(16);

  SECTION("single far path with unit gain at broadside gives the all-ones vector") {
    PathParams p;
    p.kind = FieldKind::FarField;
    p.phi = 0.0;
    p.gain = 1.0;
    ComplexChannel h = generate_channel({p}, arr);
    for (int i = 0; i < arr.m; ++i) {
      REQUIRE(h(i).real() == Approx(1.0).margin(1e-12));
      REQUIRE(h(i).imag() == Approx(0.0).margin(1e-12));
    }
  }

  SECTION("zero gains give the zero vector") {
    Rng rng(8);
    ChannelConfig cfg;
    cfg.array = arr;
    cfg.paths = 4;
    cfg.far_paths = 2;
    auto paths = sample_paths(cfg, rng);
    for (auto& p : paths) p.gain = 0.0;
    REQUIRE(generate_channel(paths, arr).norm() == 0.0);
  }

  SECTION("empty path list rejected") {
    REQUIRE_THROWS_AS(generate_channel({}, arr), std::invalid_argument);
  }

  SECTION("mean energy E||h||^2 = M, Monte Carlo") {
    ChannelConfig cfg;
    cfg.array = make_array(64);
    cfg.paths = 6;
    cfg.far_paths = 1;
    double dray = rayleigh_distance(cfg.array);
    cfg.r_min_m = 0.1 * dray;
    cfg.r_max_m = 0.8 * dray;
    double acc = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      Rng rng(derive_seed(9, "energy", static_cast<std::uint64_t>(i)));
      acc += generate_channel(sample_paths(cfg, rng), cfg.array).squaredNorm();
    }
    REQUIRE(acc / n == Approx(64.0).epsilon(0.02));
  }
}

TEST_CASE("received signal model") {
  ArrayConfig arr = make_array(16);
  Rng rng(10);
  ChannelConfig cfg;
  cfg.array = arr;
  cfg.paths = 2;
  cfg.far_paths = 2;
  ComplexChannel h = generate_channel(sample_paths(cfg, rng), arr);

  SECTION("noiseless: y = sqrt(P) h exactly") {
    SignalConfig sig;
    sig.pilot_power = 4.0;
    sig.noise_variance = 0.0;
    Rng r(1);
    ComplexChannel y = received_signal(h, sig, r);
    for (int i = 0; i < arr.m; ++i) REQUIRE(y(i) == 2.0 * h(i));
  }

  SECTION("zero channel: y is exactly the noise draw") {
    SignalConfig sig;
    sig.pilot_power = 2.0;
    sig.noise_variance = 1.0;
    ComplexChannel zero = ComplexChannel::Zero(arr.m);
    Rng r1(123), r2(123);
    ComplexChannel y = received_signal(zero, sig, r1);
    for (int i = 0; i < arr.m; ++i) REQUIRE(y(i) == r2.cgaussian(1.0));
  }

  SECTION("noise power Monte Carlo: E||y - h||^2 / M = 1") {
    SignalConfig sig;
    sig.pilot_power = 1.0;
    sig.noise_variance = 1.0;
    double acc = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      Rng r(derive_seed(11, "noise", static_cast<std::uint64_t>(i)));
      acc += (received_signal(h, sig, r) - h).squaredNorm() / arr.m;
    }
    REQUIRE(acc / n == Approx(1.0).epsilon(0.02));
  }
}

TEST_CASE("LS estimation") {
  SECTION("inverts the noiseless observation") {
    ArrayConfig arr = make_array(16);
    Rng rng(12);
    ChannelConfig cfg;
    cfg.array = arr;
    cfg.paths = 3;
    cfg.far_paths = 3;
    ComplexChannel h = generate_channel(sample_paths(cfg, rng), arr);
    SignalConfig sig;
    sig.pilot_power = 9.0;
    sig.noise_variance = 0.0;
    Rng r(1);
    ComplexChannel y = received_signal(h, sig, r);
    ComplexChannel hat = ls_estimate(y, sig);
    REQUIRE((hat - h).cwiseAbs().maxCoeff() < 1e-14);
  }

  SECTION("scalar division by sqrt(P)") {
    SignalConfig sig;
    sig.pilot_power = 4.0;
    ComplexChannel y(2);
    y << std::complex<double>(2.0, 2.0), std::complex<double>(0.0, 0.0);
    ComplexChannel hat = ls_estimate(y, sig);
    REQUIRE(hat(0) == std::complex<double>(1.0, 1.0));
    REQUIRE(hat(1) == std::complex<double>(0.0, 0.0));
  }

  SECTION("rejects non-positive pilot power") {
    SignalConfig sig;
    sig.pilot_power = 0.0;
    ComplexChannel y(2);
    REQUIRE_THROWS_AS(ls_estimate(y, sig), std::invalid_argument);
  }

  SECTION("NMSE tracks -SNR, ratio of expectations") {
    ChannelConfig cfg;
    cfg.array = make_array(64);
    cfg.paths = 6;
    cfg.far_paths = 6;
    const int n = 10000;
    for (double snr : {0.0, 10.0}) {
      SignalConfig sig = SignalConfig::from_snr_db(snr);
      double err = 0.0, energy = 0.0;
      for (int i = 0; i < n; ++i) {
        Rng r(derive_seed(13, "lslaw", static_cast<std::uint64_t>(i)));
        ComplexChannel h = generate_channel(sample_paths(cfg, r), cfg.array);
        ComplexChannel hat = ls_estimate(received_signal(h, sig, r), sig);
        err += (h - hat).squaredNorm();
        energy += h.squaredNorm();
      }
      REQUIRE(to_db(err / energy) == Approx(-snr).margin(0.2));
    }
  }
}

TEST_CASE("real tensor packing") {
  SECTION("row-major planes, M=4") {
    ComplexChannel h(4);
    h << std::complex<double>(1, 2), std::complex<double>(3, 4), std::complex<double>(5, 6),
        std::complex<double>(7, 8);
    Tensor t = pack_real(h);
    REQUIRE(t.shape == std::vector<std::int64_t>{2, 2, 2});
    REQUIRE(t.at({0, 0, 0}) == 1.0);
    REQUIRE(t.at({0, 1, 0}) == 3.0);
    REQUIRE(t.at({1, 0, 0}) == 5.0);
    REQUIRE(t.at({1, 1, 0}) == 7.0);
    REQUIRE(t.at({0, 0, 1}) == 2.0);
    REQUIRE(t.at({0, 1, 1}) == 4.0);
    REQUIRE(t.at({1, 0, 1}) == 6.0);
    REQUIRE(t.at({1, 1, 1}) == 8.0);
  }

  SECTION("roundtrip is bit exact") {
    Rng rng(14);
    ComplexChannel h(64);
    for (int i = 0; i < 64; ++i) h(i) = rng.cgaussian(1.0);
    ComplexChannel back = unpack_real(pack_real(h));
    for (int i = 0; i < 64; ++i) REQUIRE(back(i) == h(i));
  }

  SECTION("non-square M rejected") {
    ComplexChannel h(6);
    REQUIRE_THROWS_AS(pack_real(h), std::invalid_argument);
  }
}

TEST_CASE("channel generation is thread safe and seed-deterministic") {
  ChannelConfig cfg;
  cfg.array = make_array(16);
  cfg.paths = 4;
  cfg.far_paths = 1;
  cfg.r_min_m = 1.0;
  cfg.r_max_m = 10.0;
  std::vector<ComplexChannel> results(4);
  std::vector<std::thread> workers;
  for (int t = 0; t < 4; ++t)
    workers.emplace_back([&, t] {
      Rng rng(derive_seed(55, "mt", 9));
      results[static_cast<std::size_t>(t)] = generate_channel(sample_paths(cfg, rng), cfg.array);
    });
  for (auto& w : workers) w.join();
  for (int t = 1; t < 4; ++t)
    REQUIRE((results[static_cast<std::size_t>(t)] - results[0]).norm() == 0.0);
}
