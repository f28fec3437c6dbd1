#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "divo/errors.hpp"

namespace divo::io {

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw UsageError("write to '" + path + "' failed");
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Little-endian byte sink.
class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void i64(std::int64_t v) { put(static_cast<std::uint64_t>(v), 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }

  void raw(const char* data, std::size_t n) { bytes_.insert(bytes_.end(), data, data + n); }

  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }

  template <typename Derived>
  void f64_array(const Eigen::DenseBase<Derived>& a) {
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      for (Eigen::Index i = 0; i < a.rows(); ++i) f64(a(i, j));
  }

  // Length-prefixed vector.
  void vec(const Eigen::VectorXd& v) {
    u64(static_cast<std::uint64_t>(v.size()));
    f64_array(v);
  }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }


 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  std::vector<std::uint8_t> bytes_;
};

// Little-endian byte source that reports the offset of every failure.
class Reader {
 public:
  explicit Reader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}

  static Reader from_file(const std::string& path) { return Reader(read_file(path)); }

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::int64_t i64() { return static_cast<std::int64_t>(get(8)); }
  double f64() { return std::bit_cast<double>(get(8)); }

  std::string str(std::uint64_t max_len = 1u << 26) {
    const std::uint64_t n = u64();
    if (n > max_len) fail("string length " + std::to_string(n) + " exceeds limit");
    require(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void magic(const char (&expected)[5]) {
    require(4);
    if (std::memcmp(bytes_.data() + pos_, expected, 4) != 0)
      fail(std::string("bad magic, expected \"") + expected + "\"");
    pos_ += 4;
  }

  Eigen::MatrixXd f64_matrix(Eigen::Index rows, Eigen::Index cols) {
    require(static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(cols) * 8);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = f64();
    return m;
  }

  Eigen::VectorXd vec() {
    const std::uint64_t n = u64();
    if (n > remaining() / 8) fail("array length " + std::to_string(n) + " exceeds remaining bytes");
    return f64_matrix(static_cast<Eigen::Index>(n), 1);
  }

  std::uint64_t offset() const { return pos_; }
  std::uint64_t remaining() const { return bytes_.size() - pos_; }

  [[noreturn]] void fail(const std::string& what) const { throw FormatError(what, pos_); }

  void expect_end() const {
    if (pos_ != bytes_.size()) fail(std::to_string(remaining()) + " trailing bytes");
  }

  void require(std::uint64_t n) const {
    if (remaining() < n) fail("truncated: need " + std::to_string(n) + " bytes, have " + std::to_string(remaining()));
  }

 private:
  std::uint64_t get(int n) {
    require(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }

  std::vector<std::uint8_t> bytes_;
  std::uint64_t pos_ = 0;
};

}  // namespace divo::io
