#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "xlce/io.hpp"
#include "xlce/layers.hpp"

namespace xlce {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// XLNW weight file: magic "XLNW", version u32, count u32, then per tensor
/// name (u16 length + UTF-8), rank u8, dims (u32 each), f32 data. A
/// length-prefixed text trailer ("DESC" + u32 + bytes) carries the
/// architecture descriptor plus bookkeeping lines (epoch, config hash).
inline void save_checkpoint(const std::string& path,
                            const std::vector<NamedParam>& state,
                            const std::string& descriptor) {
  BinaryWriter w(path);
  w.magic("XLNW");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(state.size()));
  for (const auto& p : state) {
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    w.u8(static_cast<std::uint8_t>(p.tensor->rank()));
    for (auto d : p.tensor->shape) w.u32(static_cast<std::uint32_t>(d));
    for (double v : p.tensor->data) w.f32(static_cast<float>(v));
  }
  w.magic("DESC");
  w.u32(static_cast<std::uint32_t>(descriptor.size()));
  w.bytes(descriptor.data(), descriptor.size());
  w.close();
}

/// Loads weights into `state`, requiring the file's tensor names and shapes
/// to match the model definition exactly. Returns the descriptor text.
inline std::string load_checkpoint(const std::string& path,
                                   const std::vector<NamedParam>& state) {
  BinaryReader r(path);
  r.expect_magic("XLNW");
  std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) +
                             " in " + path);
  std::uint32_t count = r.u32();
  std::map<std::string, std::pair<std::vector<std::int64_t>, std::vector<double>>> loaded;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t len = r.u16();
    std::string name(len, '\0');
    r.bytes(name.data(), len);
    std::uint8_t rank = r.u8();
    std::vector<std::int64_t> dims(rank);
    std::int64_t n = 1;
    for (auto& d : dims) {
      d = static_cast<std::int64_t>(r.u32());
      n *= d;
    }
    std::vector<double> data(static_cast<std::size_t>(n));
    for (auto& v : data) v = static_cast<double>(r.f32());
    if (!loaded.emplace(name, std::make_pair(std::move(dims), std::move(data))).second)
      throw std::runtime_error("duplicate tensor '" + name + "' in " + path);
  }
  if (loaded.size() != state.size())
    throw std::runtime_error("checkpoint " + path + " holds " +
                             std::to_string(loaded.size()) + " tensors, model defines " +
                             std::to_string(state.size()));
  for (const auto& p : state) {
    auto it = loaded.find(p.name);
    if (it == loaded.end())
      throw std::runtime_error("checkpoint " + path + " is missing tensor '" + p.name + "'");
    if (it->second.first != p.tensor->shape)
      throw std::runtime_error("checkpoint " + path + " tensor '" + p.name +
                               "' has wrong shape");
    p.tensor->data = it->second.second;
  }
  r.expect_magic("DESC");
  std::uint32_t len = r.u32();
  std::string descriptor(len, '\0');
  r.bytes(descriptor.data(), len);
  return descriptor;
}

/// Reads only the descriptor trailer (used to pick the model type/shape
/// before constructing it).
inline std::string read_checkpoint_descriptor(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic("XLNW");
  if (r.u32() != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path);
  std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t len = r.u16();
    std::string name(len, '\0');
    r.bytes(name.data(), len);
    std::uint8_t rank = r.u8();
    std::int64_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) n *= static_cast<std::int64_t>(r.u32());
    std::vector<float> skip(static_cast<std::size_t>(n));
    r.bytes(skip.data(), skip.size() * sizeof(float));
  }
  r.expect_magic("DESC");
  std::uint32_t len = r.u32();
  std::string descriptor(len, '\0');
  r.bytes(descriptor.data(), len);
  return descriptor;
}

inline std::map<std::string, std::string> descriptor_map(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream iss(text);
  std::string line;
  while (std::getline(iss, line)) {
    auto eq = line.find('=');
    if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

/// Checks every key of `expected` (the model's own descriptor) against the
/// loaded checkpoint descriptor; extra bookkeeping keys in the file are fine.
inline void check_descriptor(const std::string& expected, const std::string& loaded,
                             const std::string& path) {
  auto want = descriptor_map(expected);
  auto got = descriptor_map(loaded);
  for (const auto& [k, v] : want) {
    auto it = got.find(k);
    std::string have = it == got.end() ? "<missing>" : it->second;
    if (have != v)
      throw std::runtime_error("checkpoint " + path + " architecture mismatch: " + k +
                               "=" + have + ", model expects " + k + "=" + v);
  }
}

}  // namespace xlce
