#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>

#include "xlce/cli.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::string profile = "none";
  std::uint64_t seed = 0;
  bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON config file");
  cmd->add_option("--profile", f.profile,
                  "baseline defaults: desk (M=64 laptop scale) or paper (M=256)")
      ->check(CLI::IsMember({"none", "desk", "paper"}));
  cmd->add_option("--seed", f.seed, "master seed (overrides config)");
  cmd->add_flag("--deterministic", f.deterministic,
                "force serial reduction order (execution is serial and seeded already; "
                "accepted for command-line compatibility)");
}

xlce::json resolve(const CLI::App* cmd, const CommonFlags& f) {
  const std::uint64_t* seed = cmd->count("--seed") ? &f.seed : nullptr;
  return xlce::resolve_config(f.profile, f.config_path, seed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xlce: hybrid near/far-field XL-MIMO channel estimation lab"};
  app.set_version_flag("--version", std::string(xlce::kToolVersion));
  app.require_subcommand(1);

  CommonFlags gen_f, train_f, eval_f, flops_f;
  std::string gen_out, gen_csv;
  auto* gen = app.add_subcommand("generate", "generate an XLCE dataset");
  add_common(gen, gen_f);
  gen->add_option("--out", gen_out, "output dataset path")->required();
  gen->add_option("--csv", gen_csv, "also export channels as CSV");

  std::string train_data, train_out;
  bool train_resume = false;
  auto* train = app.add_subcommand("train", "train matcenet or xlcnet on a dataset");
  add_common(train, train_f);
  train->add_option("--data", train_data, "XLCE dataset path")->required();
  train->add_option("--out", train_out, "output checkpoint path")->required();
  train->add_flag("--resume", train_resume, "continue training from the checkpoint at --out");

  std::string eval_out, eval_matcenet, eval_xlcnet;
  auto* eval = app.add_subcommand("eval", "run an NMSE experiment, write results CSV");
  add_common(eval, eval_f);
  eval->add_option("--out", eval_out, "output results CSV path")->required();
  eval->add_option("--matcenet", eval_matcenet, "MAT-CENet checkpoint");
  eval->add_option("--xlcnet", eval_xlcnet, "XLCNet checkpoint");

  std::string flops_out;
  auto* flops = app.add_subcommand("flops", "per-layer parameter/MAC/FLOP report");
  add_common(flops, flops_f);
  flops->add_option("--out", flops_out, "output CSV path (default: stdout)");

  auto* verify = app.add_subcommand("verify", "run the built-in oracle and gradient checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      xlce::cmd_generate(resolve(gen, gen_f), gen_out, gen_csv);
    } else if (train->parsed()) {
      xlce::cmd_train(resolve(train, train_f), train_data, train_out, train_resume);
    } else if (eval->parsed()) {
      xlce::cmd_eval(resolve(eval, eval_f), eval_matcenet, eval_xlcnet, eval_out);
    } else if (flops->parsed()) {
      xlce::json cfg = resolve(flops, flops_f);
      if (flops_out.empty())
        xlce::cmd_flops(cfg, std::cout);
      else
        xlce::cmd_flops_file(cfg, flops_out);
    } else if (verify->parsed()) {
      return xlce::cmd_verify(std::cout);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
