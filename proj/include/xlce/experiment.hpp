#pragma once

#include <algorithm>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "xlce/dataset.hpp"
#include "xlce/estimators.hpp"
#include "xlce/metrics.hpp"
#include "xlce/train.hpp"

namespace xlce {

enum class Scenario { NearOnly, FarOnly, Hybrid, HybridL0Sweep };

inline std::string scenario_name(Scenario s) {
  switch (s) {
    case Scenario::NearOnly: return "near_only";
    case Scenario::FarOnly: return "far_only";
    case Scenario::Hybrid: return "hybrid";
    case Scenario::HybridL0Sweep: return "hybrid_l0_sweep";
  }
  return "?";
}

inline Scenario scenario_from_name(const std::string& s) {
  if (s == "near_only") return Scenario::NearOnly;
  if (s == "far_only") return Scenario::FarOnly;
  if (s == "hybrid") return Scenario::Hybrid;
  if (s == "hybrid_l0_sweep") return Scenario::HybridL0Sweep;
  throw std::invalid_argument("unknown scenario '" + s + "'");
}

struct ExperimentConfig {
  Scenario scenario = Scenario::NearOnly;
  ArrayConfig array;
  int paths = 6;
  int far_paths = 1;  // used by the `hybrid` scenario only
  std::vector<double> snr_grid_db = {-10, -5, 0, 5, 10, 15, 20};
  double sweep_snr_db = 10.0;           // SNR of the L0 sweep
  std::vector<int> l0_values;           // empty -> 0..paths
  int n_test = 10000;
  int cov_samples = 2000;               // LMMSE covariance fit set size
  double r_min_m = 10.0;
  double r_max_m = 80.0;
  int omp_angles = 0;                   // 0 -> M
  int omp_rings = 7;
  std::vector<std::string> estimators = {"ls"};
  std::uint64_t seed = 1;
  std::string config_hash;

  void validate() const {
    array.validate();
    if (paths < 1) throw std::invalid_argument("experiment: paths must be >= 1");
    if (far_paths < 0 || far_paths > paths)
      throw std::invalid_argument("experiment: far_paths outside 0..paths");
    if (n_test < 1) throw std::invalid_argument("experiment: n_test must be >= 1");
    if (estimators.empty())
      throw std::invalid_argument("experiment: estimator list is empty");
    if (scenario != Scenario::HybridL0Sweep && snr_grid_db.empty())
      throw std::invalid_argument("experiment: SNR grid is empty");
    if (!(r_min_m > 0.0) || !(r_max_m > r_min_m))
      throw std::invalid_argument("experiment: need 0 < r_min < r_max");
  }
};

struct NmseRow {
  std::string scenario;
  std::string estimator;
  double x = 0.0;  // snr_db or L0
  double nmse_linear = 0.0;
  double nmse_db = 0.0;
  std::int64_t n_samples = 0;
  double ci95_halfwidth_db = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
  double nmse_ros_linear = 0.0;  // ratio-of-sums companion metric
  double nmse_ros_db = 0.0;
};

struct NmseReport {
  std::string x_name = "snr_db";
  std::vector<NmseRow> rows;

  void write_csv(std::ostream& out) const {
    out << "scenario,estimator," << x_name
        << ",nmse_linear,nmse_db,n_samples,ci95_halfwidth_db,seed,config_hash,"
           "nmse_ros_linear,nmse_ros_db\n";
    out.precision(12);
    for (const auto& r : rows) {
      out << r.scenario << ',' << r.estimator << ',' << r.x << ',' << r.nmse_linear
          << ',' << r.nmse_db << ',' << r.n_samples << ',' << r.ci95_halfwidth_db << ','
          << r.seed << ',' << r.config_hash << ',' << r.nmse_ros_linear << ','
          << r.nmse_ros_db << '\n';
    }
  }

  const NmseRow& row(const std::string& estimator, double x, double x_tol = 1e-9) const {
    for (const auto& r : rows)
      if (r.estimator == estimator && std::abs(r.x - x) <= x_tol) return r;
    throw std::invalid_argument("report: no row for " + estimator);
  }
};

namespace detail {

struct TestPoint {
  double x = 0.0;
  double snr_db = 0.0;
  int far_paths = 0;
};

struct TestSet {
  std::vector<ComplexChannel> truth;
  std::vector<ComplexChannel> observations;  // y
  SignalConfig sig;
};

inline ChannelConfig point_channel_config(const ExperimentConfig& exp, int far_paths) {
  ChannelConfig c;
  c.array = exp.array;
  c.paths = exp.paths;
  c.far_paths = far_paths;
  c.r_min_m = exp.r_min_m;
  c.r_max_m = exp.r_max_m;
  return c;
}

inline TestSet make_test_set(const ExperimentConfig& exp, const TestPoint& pt,
                             std::size_t point_index) {
  ChannelConfig chan = point_channel_config(exp, pt.far_paths);
  chan.validate();
  TestSet ts;
  ts.sig = SignalConfig::from_snr_db(pt.snr_db);
  ts.truth.reserve(static_cast<std::size_t>(exp.n_test));
  ts.observations.reserve(static_cast<std::size_t>(exp.n_test));
  std::string tag = "test/" + scenario_name(exp.scenario) + "/" + std::to_string(point_index);
  for (int i = 0; i < exp.n_test; ++i) {
    Rng rng(derive_seed(exp.seed, tag, static_cast<std::uint64_t>(i)));
    auto paths = sample_paths(chan, rng);
    ComplexChannel h = generate_channel(paths, chan.array);
    ts.truth.push_back(h);
    ts.observations.push_back(received_signal(h, ts.sig, rng));
  }
  return ts;
}

inline CovarianceModel fit_point_covariance(const ExperimentConfig& exp,
                                            const TestPoint& pt, std::size_t point_index) {
  ChannelConfig chan = point_channel_config(exp, pt.far_paths);
  chan.validate();
  std::vector<ComplexChannel> set;
  set.reserve(static_cast<std::size_t>(exp.cov_samples));
  std::string tag = "cov/" + scenario_name(exp.scenario) + "/" + std::to_string(point_index);
  for (int i = 0; i < exp.cov_samples; ++i) {
    Rng rng(derive_seed(exp.seed, tag, static_cast<std::uint64_t>(i)));
    set.push_back(generate_channel(sample_paths(chan, rng), chan.array));
  }
  return fit_covariance(set);
}

template <class Model>
inline std::vector<ComplexChannel> nn_estimates(Model& model, const TestSet& ts,
                                                int batch = 256) {
  if (model.config().m != static_cast<int>(ts.truth.front().size()))
    throw std::invalid_argument("eval: model M=" + std::to_string(model.config().m) +
                                " does not match test data M=" +
                                std::to_string(ts.truth.front().size()));
  std::vector<Sample> samples(ts.truth.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i].input = ls_estimate(ts.observations[i], ts.sig);
    samples[i].target = ts.truth[i];
  }
  std::vector<std::uint32_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::uint32_t>(i);
  std::vector<ComplexChannel> out;
  out.reserve(samples.size());
  std::size_t pos = 0;
  while (pos < samples.size()) {
    std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(batch),
                                              samples.size() - pos);
    Tensor in = pack_batch(samples, order, pos, count, false);
    Tensor y = model.forward(in, Mode::Infer);
    for (std::size_t b = 0; b < count; ++b)
      out.push_back(unpack_real(slice_sample(y, static_cast<std::int64_t>(b))));
    pos += count;
  }
  return out;
}

}  // namespace detail

/// Runs one experiment: per grid point a fresh seeded test set, every
/// configured estimator evaluated on the identical samples. Neural
/// estimators are passed in pre-loaded (nullptr when unused).
inline NmseReport run_experiment(const ExperimentConfig& exp, MatCenet* matcenet = nullptr,
                                 Xlcnet* xlcnet = nullptr) {
  exp.validate();
  NmseReport report;
  std::vector<detail::TestPoint> points;
  if (exp.scenario == Scenario::HybridL0Sweep) {
    report.x_name = "l0";
    std::vector<int> l0s = exp.l0_values;
    if (l0s.empty())
      for (int l0 = 0; l0 <= exp.paths; ++l0) l0s.push_back(l0);
    for (int l0 : l0s)
      points.push_back({static_cast<double>(l0), exp.sweep_snr_db, l0});
  } else {
    report.x_name = "snr_db";
    int far = exp.scenario == Scenario::NearOnly  ? 0
              : exp.scenario == Scenario::FarOnly ? exp.paths
                                                  : exp.far_paths;
    for (double snr : exp.snr_grid_db) points.push_back({snr, snr, far});
  }

  for (const auto& name : exp.estimators) {
    if (name != "ls" && name != "lmmse" && name != "omp" && name != "hyomp" &&
        name != "matcenet" && name != "xlcnet")
      throw std::invalid_argument("unknown estimator '" + name + "'");
    if (name == "matcenet" && !matcenet)
      throw std::invalid_argument("estimator 'matcenet' requested without a checkpoint");
    if (name == "xlcnet" && !xlcnet)
      throw std::invalid_argument("estimator 'xlcnet' requested without a checkpoint");
  }

  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    const auto& pt = points[pi];
    detail::TestSet ts = detail::make_test_set(exp, pt, pi);

    std::optional<CovarianceModel> cov;
    std::optional<Dictionary> dict;
    for (const auto& name : exp.estimators) {
      std::vector<ComplexChannel> est;
      est.reserve(ts.truth.size());
      if (name == "ls") {
        for (const auto& y : ts.observations) est.push_back(ls_estimate(y, ts.sig));
      } else if (name == "lmmse") {
        if (!cov) cov = detail::fit_point_covariance(exp, pt, pi);
        for (const auto& y : ts.observations) est.push_back(lmmse_estimate(y, ts.sig, *cov));
      } else if (name == "omp" || name == "hyomp") {
        if (!dict) {
          int n_angles = exp.omp_angles > 0 ? exp.omp_angles : exp.array.m;
          dict = build_dictionary(exp.array, n_angles,
                                  geometric_rings(exp.r_min_m, exp.r_max_m, exp.omp_rings));
        }
        for (const auto& y : ts.observations) {
          if (name == "omp") {
            est.push_back(omp_estimate(y, ts.sig, *dict, exp.paths));
          } else {
            est.push_back(hybrid_omp_estimate(y, ts.sig, *dict, pt.far_paths,
                                              exp.paths - pt.far_paths));
          }
        }
      } else if (name == "matcenet") {
        est = detail::nn_estimates(*matcenet, ts);
      } else if (name == "xlcnet") {
        est = detail::nn_estimates(*xlcnet, ts);
      }
      NmseResult n = nmse(ts.truth, est);
      NmseRow row;
      row.scenario = scenario_name(exp.scenario);
      row.estimator = name;
      row.x = pt.x;
      row.nmse_linear = n.linear;
      row.nmse_db = n.db();
      row.n_samples = n.n_used;
      row.ci95_halfwidth_db = n.ci95_halfwidth_db;
      row.seed = exp.seed;
      row.config_hash = exp.config_hash;
      row.nmse_ros_linear = n.ratio_of_sums;
      row.nmse_ros_db = n.ratio_of_sums_db();
      report.rows.push_back(row);
    }
  }
  return report;
}

}  // namespace xlce
