#pragma once

#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "xlce/models.hpp"

namespace xlce {

struct FlopsEntry {
  std::string name;
  std::string kind;
  std::int64_t params = 0;
  std::int64_t macs = 0;   // multiply-accumulates
  std::int64_t flops = 0;  // 2 * macs for mul-add layers, = macs for elementwise
};

struct FlopsReport {
  std::string model;
  std::vector<FlopsEntry> entries;
  std::string assumptions;

  std::int64_t total_params() const {
    std::int64_t s = 0;
    for (const auto& e : entries) s += e.params;
    return s;
  }
  std::int64_t total_macs() const {
    std::int64_t s = 0;
    for (const auto& e : entries) s += e.macs;
    return s;
  }
  std::int64_t total_flops() const {
    std::int64_t s = 0;
    for (const auto& e : entries) s += e.flops;
    return s;
  }

  void write_csv(std::ostream& out) const {
    out << "layer,kind,params,macs,flops\n";
    for (const auto& e : entries)
      out << e.name << ',' << e.kind << ',' << e.params << ',' << e.macs << ','
          << e.flops << '\n';
    out << "total,," << total_params() << ',' << total_macs() << ',' << total_flops()
        << '\n';
  }
};

namespace detail {

inline FlopsEntry conv_entry(const std::string& name, std::int64_t nx, std::int64_t ny,
                             std::int64_t k, std::int64_t c_in, std::int64_t c_out) {
  FlopsEntry e;
  e.name = name;
  e.kind = "conv2d";
  e.params = k * k * c_in * c_out + c_out;
  e.macs = nx * ny * k * k * c_in * c_out;
  e.flops = 2 * e.macs;
  return e;
}

inline FlopsEntry bn_entry(const std::string& name, std::int64_t channels,
                           std::int64_t elements) {
  FlopsEntry e;
  e.name = name;
  e.kind = "batchnorm";
  e.params = 2 * channels;
  e.macs = elements;  // scale + shift per element at inference
  e.flops = 2 * e.macs;
  return e;
}

inline FlopsEntry attention_entry(const std::string& name, std::int64_t tokens,
                                  std::int64_t d_model) {
  // Packed projections Q/K/V (3 T D^2), per-head scores and context
  // (2 T^2 D total across heads), output projection (T D^2).
  FlopsEntry e;
  e.name = name;
  e.kind = "multi_head_attention";
  e.params = 4 * d_model * d_model;
  e.macs = 4 * tokens * d_model * d_model + 2 * tokens * tokens * d_model;
  e.flops = 2 * e.macs;
  return e;
}

inline FlopsEntry fc_entry(const std::string& name, std::int64_t tokens,
                           std::int64_t z_in, std::int64_t z_out) {
  FlopsEntry e;
  e.name = name;
  e.kind = "fc";
  e.params = z_in * z_out + z_out;
  e.macs = tokens * z_in * z_out;
  e.flops = 2 * e.macs;
  return e;
}

inline FlopsEntry ln_entry(const std::string& name, std::int64_t tokens,
                           std::int64_t dim) {
  FlopsEntry e;
  e.name = name;
  e.kind = "layernorm";
  e.params = 2 * dim;
  e.macs = tokens * dim;
  e.flops = 2 * e.macs;
  return e;
}

}  // namespace detail

/// Per-layer parameter and MAC/FLOP counts for MAT-CENet (single-sample
/// inference). Conv cost is N_x N_y K^2 C_in C_out; attention and FC costs
/// follow the implemented layout (tokens x d_model per module).
inline FlopsReport count_params_flops(const MatCenetConfig& cfg) {
  cfg.validate();
  std::int64_t s = cfg.side();
  std::int64_t f = cfg.feature_maps;
  std::int64_t m = cfg.m;
  FlopsReport r;
  r.model = "matcenet";
  r.entries.push_back(detail::conv_entry("conv1", s, s, 3, 2, f));
  r.entries.push_back(detail::bn_entry("bn1", f, s * s * f));
  for (int i = 2; i <= MatCenetConfig::kFrontConvs; ++i) {
    r.entries.push_back(detail::conv_entry("conv" + std::to_string(i), s, s, 3, f, f));
    r.entries.push_back(detail::bn_entry("bn" + std::to_string(i), f, s * s * f));
  }
  for (int e = 1; e <= MatCenetConfig::kEncoders; ++e) {
    std::string p = "enc" + std::to_string(e);
    // feature attention: F tokens of dimension M
    r.entries.push_back(detail::attention_entry(p + ".feat", f, m));
    // spatial attention: M tokens of dimension F
    r.entries.push_back(detail::attention_entry(p + ".spat", m, f));
    r.entries.push_back(detail::fc_entry(p + ".ffn1", m, f, cfg.ffn()));
    r.entries.push_back(detail::fc_entry(p + ".ffn2", m, cfg.ffn(), f));
    r.entries.push_back(detail::ln_entry(p + ".ln", m, f));
  }
  r.entries.push_back(detail::conv_entry("tail_conv", s, s, 3, f, 2));
  r.entries.push_back(detail::bn_entry("tail_bn", 2, s * s * 2));
  r.assumptions =
      "heads=" + std::to_string(cfg.heads) + "; d_head=d_model/heads; ffn_hidden=" +
      std::to_string(cfg.ffn()) +
      "; feature attention d_model=M, spatial attention d_model=F; "
      "macs = multiply-accumulates, flops = 2*macs";
  return r;
}

inline FlopsReport count_params_flops(const XlcnetConfig& cfg) {
  cfg.validate();
  std::int64_t s = cfg.side();
  std::int64_t f = cfg.feature_maps;
  FlopsReport r;
  r.model = "xlcnet";
  r.entries.push_back(detail::conv_entry("conv1", s, s, 3, 2, f));
  r.entries.push_back(detail::bn_entry("bn1", f, s * s * f));
  for (int i = 2; i <= XlcnetConfig::kConvBlocks; ++i) {
    r.entries.push_back(detail::conv_entry("conv" + std::to_string(i), s, s, 3, f, f));
    r.entries.push_back(detail::bn_entry("bn" + std::to_string(i), f, s * s * f));
  }
  r.entries.push_back(detail::conv_entry("tail_conv", s, s, 3, f, 2));
  r.entries.push_back(detail::bn_entry("tail_bn", 2, s * s * 2));
  r.assumptions = "macs = multiply-accumulates, flops = 2*macs";
  return r;
}

}  // namespace xlce
