#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "vipflow/error.hpp"

namespace vipflow::detail {

// Little-endian scalar I/O for the model files.
class LeWriter {
 public:
  explicit LeWriter(const std::filesystem::path& path) : os_(path, std::ios::binary), path_(path) {
    if (!os_) throw IoError("cannot write " + path.string());
  }
  void magic(const char (&tag)[9]) { os_.write(tag, 8); }
  void u32(std::uint32_t v) { bytes(v); }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    bytes(bits);
  }
  void finish() {
    os_.flush();
    if (!os_) throw IoError("write failed: " + path_.string());
  }

 private:
  template <typename U>
  void bytes(U v) {
    std::array<char, sizeof(U)> b;
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os_.write(b.data(), b.size());
  }

  std::ofstream os_;
  std::filesystem::path path_;
};

class LeReader {
 public:
  explicit LeReader(const std::filesystem::path& path) : is_(path, std::ios::binary), path_(path) {
    if (!is_) throw IoError("cannot open " + path.string());
  }
  void expect_magic(const char (&tag)[9]) {
    char got[8];
    if (!is_.read(got, 8) || std::memcmp(got, tag, 8) != 0) {
      throw IoError("bad magic in " + path_.string() + ", expected " + std::string(tag, 8));
    }
  }
  std::uint32_t u32() { return bytes<std::uint32_t>(); }
  double f64() {
    const auto bits = bytes<std::uint64_t>();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

 private:
  template <typename U>
  U bytes() {
    std::array<unsigned char, sizeof(U)> b;
    if (!is_.read(reinterpret_cast<char*>(b.data()), b.size())) throw IoError("truncated file: " + path_.string());
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
    return v;
  }

  std::ifstream is_;
  std::filesystem::path path_;
};

}  // namespace vipflow::detail
