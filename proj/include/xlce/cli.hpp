#pragma once

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "xlce/checkpoint.hpp"
#include "xlce/config.hpp"
#include "xlce/verify.hpp"

namespace xlce {

/// Every command writes <out>.manifest.json: the fully resolved config, the
/// seed, and the produced files with sizes and hashes, so a run can be
/// reproduced from the manifest alone.
inline void write_manifest(const std::string& command, const json& resolved,
                           const std::vector<std::string>& outputs, double wall_seconds,
                           const std::string& manifest_path,
                           const json& extra = json::object()) {
  json m;
  m["command"] = command;
  m["tool_version"] = kToolVersion;
  m["seed"] = seed_from(resolved);
  m["config"] = resolved;
  m["config_hash"] = config_hash(resolved);
  m["wall_seconds"] = wall_seconds;
  json outs = json::array();
  for (const auto& path : outputs) {
    auto bytes = read_file_bytes(path);
    outs.push_back({{"path", path},
                    {"bytes", bytes.size()},
                    {"fnv1a64", hex_u64(fnv1a64_bytes(bytes))}});
  }
  m["outputs"] = outs;
  if (!extra.empty()) m["notes"] = extra;
  std::ofstream out(manifest_path);
  if (!out) throw std::runtime_error("cannot open for writing: " + manifest_path);
  out << m.dump(2) << '\n';
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------------------

inline void cmd_generate(const json& cfg, const std::string& out_path,
                         const std::string& csv_path = "") {
  Stopwatch sw;
  ArrayConfig array = array_from(cfg);
  ChannelConfig chan = channel_from(cfg, array);
  SnrPolicy policy = policy_from(cfg);
  int n = require_key<int>(cfg, "generate", "n_samples");
  Dataset ds = generate_dataset(chan, policy, n, seed_from(cfg));
  save_dataset(out_path, ds);
  std::vector<std::string> outputs = {out_path};
  if (!csv_path.empty()) {
    std::vector<ComplexChannel> truth, est;
    truth.reserve(ds.samples.size());
    est.reserve(ds.samples.size());
    for (const auto& s : ds.samples) {
      truth.push_back(s.target);
      est.push_back(s.input);
    }
    export_channels_csv(truth, est, csv_path);
    outputs.push_back(csv_path);
  }
  write_manifest("generate", cfg, outputs, sw.seconds(), out_path + ".manifest.json");
}

// ---------------------------------------------------------------------------

namespace clidetail {

inline void write_train_log(const std::string& path, const std::vector<EpochLog>& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "epoch,train_loss,val_nmse_db,wall_seconds\n";
  out.precision(12);
  for (const auto& e : history)
    out << e.epoch << ',' << e.train_loss << ',' << e.val_nmse_db << ',' << e.wall_seconds
        << '\n';
}

template <class Model>
void run_training(Model& model, const json& cfg, const Dataset& ds,
                  const std::string& out_ckpt, int start_epoch) {
  TrainConfig tc = train_from(cfg);
  if (tc.n_train + tc.n_val > static_cast<int>(ds.samples.size()))
    throw std::invalid_argument("train: dataset holds " +
                                std::to_string(ds.samples.size()) + " samples, config asks " +
                                std::to_string(tc.n_train) + "+" + std::to_string(tc.n_val));
  std::vector<Sample> train_set(ds.samples.begin(), ds.samples.begin() + tc.n_train);
  std::vector<Sample> val_set(ds.samples.end() - tc.n_val, ds.samples.end());
  std::vector<EpochLog> history;
  std::string log_path = out_ckpt + ".log.csv";
  auto save = [&](int completed_epoch) {
    std::string desc = model.descriptor() + "epoch=" + std::to_string(completed_epoch) +
                       "\nconfig_hash=" + config_hash(cfg) + "\n";
    save_checkpoint(out_ckpt, model.state(), desc);
  };
  try {
    TrainResult res = train(model, train_set, val_set, tc, start_epoch,
                            [&](const EpochLog& e) { history.push_back(e); });
    write_train_log(log_path, history);
    save(std::max(tc.n_epochs, start_epoch));
    std::cout << "trained " << history.size() << " epochs; init val NMSE "
              << res.init_val_nmse_db << " dB, best " << res.best_val_nmse_db
              << " dB (epoch " << res.best_epoch << ")\n";
  } catch (const DivergenceError&) {
    write_train_log(log_path, history);  // partial log retained
    throw;
  }
}

}  // namespace clidetail

inline void cmd_train(const json& cfg, const std::string& dataset_path,
                      const std::string& out_ckpt, bool resume = false) {
  Stopwatch sw;
  Dataset ds = load_dataset(dataset_path);
  int m = require_key<int>(cfg, "array", "m");
  if (static_cast<int>(ds.m) != m)
    throw std::invalid_argument("train: dataset M=" + std::to_string(ds.m) +
                                " does not match config array.m=" + std::to_string(m));
  std::string type = model_type_from(cfg);
  int start_epoch = 0;
  if (type == "matcenet") {
    MatCenetConfig mc = matcenet_from(cfg, m);
    Rng init(derive_seed(seed_from(cfg), "init/matcenet"));
    MatCenet model(mc, init);
    if (resume) {
      std::string desc = load_checkpoint(out_ckpt, model.state());
      check_descriptor(model.descriptor(), desc, out_ckpt);
      start_epoch = std::stoi(descriptor_map(desc).at("epoch"));
    } else {
      model.zero_residual_branches();
    }
    clidetail::run_training(model, cfg, ds, out_ckpt, start_epoch);
  } else {
    XlcnetConfig xc = xlcnet_from(cfg, m);
    Rng init(derive_seed(seed_from(cfg), "init/xlcnet"));
    Xlcnet model(xc, init);
    if (resume) {
      std::string desc = load_checkpoint(out_ckpt, model.state());
      check_descriptor(model.descriptor(), desc, out_ckpt);
      start_epoch = std::stoi(descriptor_map(desc).at("epoch"));
    } else {
      model.zero_residual_branches();
    }
    clidetail::run_training(model, cfg, ds, out_ckpt, start_epoch);
  }
  write_manifest("train", cfg, {out_ckpt, out_ckpt + ".log.csv"}, sw.seconds(),
                 out_ckpt + ".manifest.json",
                 json{{"dataset", dataset_path}, {"resume", resume}});
}

// ---------------------------------------------------------------------------

inline MatCenet load_matcenet(const std::string& path) {
  auto desc = descriptor_map(read_checkpoint_descriptor(path));
  if (desc["arch"] != "matcenet")
    throw std::invalid_argument("checkpoint " + path + " is arch=" + desc["arch"] +
                                ", expected matcenet");
  MatCenetConfig cfg;
  cfg.m = std::stoi(desc.at("m"));
  cfg.feature_maps = std::stoi(desc.at("feature_maps"));
  cfg.heads = std::stoi(desc.at("heads"));
  cfg.ffn_hidden = std::stoi(desc.at("ffn_hidden"));
  Rng rng(0);
  MatCenet model(cfg, rng);
  check_descriptor(model.descriptor(), load_checkpoint(path, model.state()), path);
  return model;
}

inline Xlcnet load_xlcnet(const std::string& path) {
  auto desc = descriptor_map(read_checkpoint_descriptor(path));
  if (desc["arch"] != "xlcnet")
    throw std::invalid_argument("checkpoint " + path + " is arch=" + desc["arch"] +
                                ", expected xlcnet");
  XlcnetConfig cfg;
  cfg.m = std::stoi(desc.at("m"));
  cfg.feature_maps = std::stoi(desc.at("feature_maps"));
  Rng rng(0);
  Xlcnet model(cfg, rng);
  check_descriptor(model.descriptor(), load_checkpoint(path, model.state()), path);
  return model;
}

inline void cmd_eval(const json& cfg, const std::string& matcenet_ckpt,
                     const std::string& xlcnet_ckpt, const std::string& out_csv) {
  Stopwatch sw;
  ExperimentConfig exp = experiment_from(cfg);
  std::optional<MatCenet> matcenet;
  std::optional<Xlcnet> xlcnet;
  for (const auto& est : exp.estimators) {
    if (est == "matcenet") {
      if (matcenet_ckpt.empty())
        throw std::invalid_argument("estimator 'matcenet' requires --matcenet CKPT");
      matcenet = load_matcenet(matcenet_ckpt);
      if (matcenet->config().m != exp.array.m)
        throw std::invalid_argument("checkpoint M=" + std::to_string(matcenet->config().m) +
                                    " does not match config array.m=" +
                                    std::to_string(exp.array.m));
    } else if (est == "xlcnet") {
      if (xlcnet_ckpt.empty())
        throw std::invalid_argument("estimator 'xlcnet' requires --xlcnet CKPT");
      xlcnet = load_xlcnet(xlcnet_ckpt);
      if (xlcnet->config().m != exp.array.m)
        throw std::invalid_argument("checkpoint M=" + std::to_string(xlcnet->config().m) +
                                    " does not match config array.m=" +
                                    std::to_string(exp.array.m));
    }
  }
  NmseReport report = run_experiment(exp, matcenet ? &*matcenet : nullptr,
                                     xlcnet ? &*xlcnet : nullptr);
  std::ofstream out(out_csv);
  if (!out) throw std::runtime_error("cannot open for writing: " + out_csv);
  report.write_csv(out);
  out.close();
  json notes = json::object();
  for (const auto& est : exp.estimators)
    if (est == "hyomp")
      notes["hyomp"] =
          "HY-OMP (reimpl.): two-stage greedy over an explicit angular+polar grid";
  write_manifest("eval", cfg, {out_csv}, sw.seconds(), out_csv + ".manifest.json", notes);
}

// ---------------------------------------------------------------------------

inline void cmd_flops(const json& cfg, std::ostream& out) {
  int m = require_key<int>(cfg, "array", "m");
  MatCenetConfig mc = matcenet_from(cfg, m);
  XlcnetConfig xc;
  xc.m = m;
  xc.feature_maps = require_key<int>(cfg, "model", "feature_maps");
  for (const FlopsReport& r : {count_params_flops(mc), count_params_flops(xc)}) {
    out << "# model=" << r.model << "\n";
    r.write_csv(out);
    out << "# assumptions: " << r.assumptions << "\n";
  }
}

inline void cmd_flops_file(const json& cfg, const std::string& out_path) {
  Stopwatch sw;
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot open for writing: " + out_path);
  cmd_flops(cfg, out);
  out.close();
  write_manifest("flops", cfg, {out_path}, sw.seconds(), out_path + ".manifest.json");
}

// ---------------------------------------------------------------------------

inline int cmd_verify(std::ostream& out) {
  VerifyReport rep = run_verification();
  for (const auto& c : rep.checks) {
    std::ostringstream line;
    line.precision(3);
    line << std::scientific << c.measured;
    out << (c.pass ? "PASS" : "FAIL") << "  " << c.name << "  measured=" << line.str()
        << " tol=" << c.tolerance << "\n";
  }
  out << (rep.all_pass() ? "verify: all checks passed\n" : "verify: FAILURES present\n");
  return rep.all_pass() ? 0 : 2;
}

}  // namespace xlce
