#pragma once

// Bounds-checked little-endian binary readers/writers shared by the
// checkpoint and dataset containers. Readers work on a fully loaded buffer so
// truncation is always detected before any allocation is sized from the data.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "editbench/errors.hpp"

namespace editbench::binio {

class Writer {
 public:
  void u8(uint8_t v) { raw(&v, 1); }
  void u32(uint32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void i32(int32_t v) { raw(&v, 4); }
  void f64(double v) { raw(&v, 8); }
  void f64_array(const double* p, size_t n) { raw(p, n * 8); }
  void i32_array(const int32_t* p, size_t n) { raw(p, n * 4); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void magic(const char (&m)[5]) { raw(m, 4); }

  const std::vector<char>& bytes() const { return buf_; }

  void write_file(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + path.string());
  }

 private:
  void raw(const void* p, size_t n) {
    const char* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : buf_(std::move(bytes)) {}

  static Reader from_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open " + path.string());
    const std::streamsize n = in.tellg();
    in.seekg(0);
    std::vector<char> bytes(static_cast<size_t>(n));
    in.read(bytes.data(), n);
    if (!in) throw IoError("read failed: " + path.string());
    return Reader(std::move(bytes));
  }

  uint8_t u8() { uint8_t v; raw(&v, 1); return v; }
  uint32_t u32() { uint32_t v; raw(&v, 4); return v; }
  uint64_t u64() { uint64_t v; raw(&v, 8); return v; }
  int32_t i32() { int32_t v; raw(&v, 4); return v; }
  double f64() { double v; raw(&v, 8); return v; }

  std::vector<double> f64_array(size_t n) {
    need(n * 8);
    std::vector<double> v(n);
    std::memcpy(v.data(), buf_.data() + pos_, n * 8);
    pos_ += n * 8;
    return v;
  }

  std::vector<int32_t> i32_array(size_t n) {
    need(n * 4);
    std::vector<int32_t> v(n);
    std::memcpy(v.data(), buf_.data() + pos_, n * 4);
    pos_ += n * 4;
    return v;
  }

  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  void expect_magic(const char (&m)[5], const char* what) {
    char got[4];
    raw(got, 4);
    if (std::memcmp(got, m, 4) != 0)
      throw FormatError(std::string("bad magic bytes in ") + what);
  }

  size_t remaining() const { return buf_.size() - pos_; }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(size_t n) const {
    if (buf_.size() - pos_ < n) throw FormatError("truncated file");
  }
  void raw(void* p, size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }

  std::vector<char> buf_;
  size_t pos_ = 0;
};

}  // namespace editbench::binio
