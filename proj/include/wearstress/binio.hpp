/// @file binio.hpp
/// Little-endian byte buffers for the epoch container and model files.

#pragma once

#include "wearstress/core.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace wearstress::binio {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class Writer {
 public:
  template <class T>
    requires std::is_trivially_copyable_v<T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }

  void put_string(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_.append(s.data(), s.size());
  }

  void put_doubles(std::span<const double> v) {
    put<std::uint64_t>(v.size());
    buf_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  }

  void put_ints(std::span<const int> v) {
    put<std::uint64_t>(v.size());
    for (int x : v) put<std::int32_t>(x);
  }

  void put_matrix(const Matrix& m) {
    put<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    buf_.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
  }

  void put_bytes(std::string_view bytes) { buf_.append(bytes); }

  const std::string& bytes() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data, std::string context = "binary data")
      : data_(data), context_(std::move(context)) {}

  template <class T>
    requires std::is_trivially_copyable_v<T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  std::vector<double> get_doubles() {
    const auto n = get<std::uint64_t>();
    if (n > (data_.size() - pos_) / sizeof(double)) fail();
    std::vector<double> v(static_cast<std::size_t>(n));
    std::memcpy(v.data(), data_.data() + pos_, v.size() * sizeof(double));
    pos_ += v.size() * sizeof(double);
    return v;
  }

  std::vector<int> get_ints() {
    const auto n = get<std::uint64_t>();
    if (n > (data_.size() - pos_) / sizeof(std::int32_t)) fail();
    std::vector<int> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = get<std::int32_t>();
    return v;
  }

  Matrix get_matrix() {
    const auto r = get<std::uint64_t>();
    const auto c = get<std::uint64_t>();
    if (c != 0 && r > (data_.size() - pos_) / sizeof(double) / c) fail();
    Matrix m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    std::memcpy(m.data(), data_.data() + pos_, static_cast<std::size_t>(m.size()) * sizeof(double));
    pos_ += static_cast<std::size_t>(m.size()) * sizeof(double);
    return m;
  }

  std::string_view get_bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == data_.size(); }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > data_.size() - pos_) fail();
  }
  [[noreturn]] void fail() const { throw FormatError(context_ + ": truncated or corrupt"); }

  std::string_view data_;
  std::size_t pos_ = 0;
  std::string context_;
};

inline std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_all(const std::filesystem::path& p, std::string_view bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + p.string());
}

}  // namespace wearstress::binio
