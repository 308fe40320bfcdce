#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "advart/error.hpp"

namespace advart {

// Little-endian binary file helpers for the versioned checkpoint containers.
class BinWriter {
 public:
  explicit BinWriter(const std::string& path) : path_(path), f_(std::fopen(path.c_str(), "wb")) {
    require(f_ != nullptr, "cannot open " + path + " for writing");
  }
  ~BinWriter() {
    if (f_) std::fclose(f_);
  }
  BinWriter(const BinWriter&) = delete;
  BinWriter& operator=(const BinWriter&) = delete;

  void magic(const std::string& tag) { raw(tag.data(), tag.size()); }
  void u8(std::uint8_t v) { raw(&v, 1); }
  void u32(std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    raw(b, 4);
  }
  void u64(std::uint64_t v) {
    u32(static_cast<std::uint32_t>(v));
    u32(static_cast<std::uint32_t>(v >> 32));
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void f64_array(const std::vector<double>& v) {
    for (double x : v) f64(x);
  }

 private:
  void raw(const void* p, std::size_t n) {
    require(std::fwrite(p, 1, n, f_) == n, "write failed for " + path_);
  }
  std::string path_;
  std::FILE* f_;
};

class BinReader {
 public:
  explicit BinReader(const std::string& path) : path_(path), f_(std::fopen(path.c_str(), "rb")) {
    require(f_ != nullptr, "cannot open " + path);
  }
  ~BinReader() {
    if (f_) std::fclose(f_);
  }
  BinReader(const BinReader&) = delete;
  BinReader& operator=(const BinReader&) = delete;

  void expect_magic(const std::string& tag) {
    std::vector<char> buf(tag.size());
    raw(buf.data(), buf.size());
    require(std::memcmp(buf.data(), tag.data(), tag.size()) == 0,
            path_ + " is not a \"" + tag.substr(0, tag.find('\n')) + "\" file");
  }
  std::uint8_t u8() {
    std::uint8_t v;
    raw(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    unsigned char b[4];
    raw(b, 4);
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
  }
  std::uint64_t u64() {
    std::uint64_t lo = u32();
    std::uint64_t hi = u32();
    return lo | hi << 32;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::vector<double> f64_array(std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }

 private:
  void raw(void* p, std::size_t n) {
    require(std::fread(p, 1, n, f_) == n, "unexpected end of file in " + path_);
  }
  std::string path_;
  std::FILE* f_;
};

}  // namespace advart
