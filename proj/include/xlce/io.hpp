#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace xlce {

/// Little-endian binary file writer. All multi-byte fields in the XLCE /
/// XLNW / XLCV formats go through these helpers.
class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open for writing: " + path);
  }

  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw std::runtime_error("write failed: " + path_);
  }
  void magic(const char tag[4]) { bytes(tag, 4); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) { bytes(&v, 2); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f32(float v) { bytes(&v, 4); }
  void f64(double v) { bytes(&v, 8); }

  void close() {
    out_.close();
    if (!out_) throw std::runtime_error("close failed: " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open for reading: " + path);
  }

  const std::string& path() const { return path_; }

  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n))
      throw std::runtime_error("truncated file: " + path_);
  }
  void expect_magic(const char tag[4]) {
    char got[4];
    bytes(got, 4);
    if (std::memcmp(got, tag, 4) != 0)
      throw std::runtime_error("bad magic in " + path_ + " (expected " +
                               std::string(tag, 4) + ")");
  }
  std::uint8_t u8() { std::uint8_t v; bytes(&v, 1); return v; }
  std::uint16_t u16() { std::uint16_t v; bytes(&v, 2); return v; }
  std::uint32_t u32() { std::uint32_t v; bytes(&v, 4); return v; }
  std::uint64_t u64() { std::uint64_t v; bytes(&v, 8); return v; }
  float f32() { float v; bytes(&v, 4); return v; }
  double f64() { double v; bytes(&v, 8); return v; }

  bool at_eof() { return in_.peek() == std::ifstream::traits_type::eof(); }

 private:
  std::string path_;
  std::ifstream in_;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

inline std::uint64_t fnv1a64_bytes(const std::vector<std::uint8_t>& b) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::uint8_t c : b) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex_u64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

}  // namespace xlce
