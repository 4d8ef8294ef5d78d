#pragma once

// Flat binary tensor dumps: 16-byte header of four little-endian uint32 dims
// (n, c, h, w) followed by n*c*h*w little-endian 64-bit floats, row-major.
// Written byte by byte so the files are identical on any host.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "fcmnet/tensor.hpp"

namespace fcmnet {

namespace detail {

inline void put_u32_le(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff), static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("tensor dump: truncated header");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) | (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

inline void put_f64_le(std::ostream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw IoError("tensor dump: truncated payload");
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace detail

template <class T>
void write_tensor(std::ostream& os, const Tensor4<T>& t) {
  detail::put_u32_le(os, static_cast<uint32_t>(t.shape.n));
  detail::put_u32_le(os, static_cast<uint32_t>(t.shape.c));
  detail::put_u32_le(os, static_cast<uint32_t>(t.shape.h));
  detail::put_u32_le(os, static_cast<uint32_t>(t.shape.w));
  for (T v : t.data) detail::put_f64_le(os, static_cast<double>(v));
}

template <class T>
TensorPtr<T> read_tensor(std::istream& is) {
  Shape4 s;
  s.n = detail::get_u32_le(is);
  s.c = detail::get_u32_le(is);
  s.h = detail::get_u32_le(is);
  s.w = detail::get_u32_le(is);
  check_shape_valid(s, "read_tensor");
  auto t = make_tensor<T>(s);
  for (auto& v : t->data) v = static_cast<T>(detail::get_f64_le(is));
  return t;
}

template <class T>
void write_tensor_file(const std::string& path, const Tensor4<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  write_tensor(os, t);
  if (!os) throw IoError("write failed: " + path);
}

template <class T>
TensorPtr<T> read_tensor_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  return read_tensor<T>(is);
}

template <class T>
std::string tensor_to_bytes(const Tensor4<T>& t) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  return os.str();
}

// Channel-mean grayscale view of the first sample, min-max normalized to
// 8-bit. Binary PGM (P5, maxval 255).
template <class T>
std::string tensor_to_pgm(const Tensor4<T>& t) {
  const Shape4 s = t.shape;
  std::vector<double> mean(static_cast<size_t>(s.h * s.w), 0.0);
  for (int64_t c = 0; c < s.c; ++c) {
    const T* px = t.data.data() + t.offset(0, c, 0, 0);
    for (int64_t i = 0; i < s.h * s.w; ++i) mean[static_cast<size_t>(i)] += static_cast<double>(px[i]);
  }
  for (auto& v : mean) v /= static_cast<double>(s.c);
  double lo = mean[0], hi = mean[0];
  for (double v : mean) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::ostringstream os(std::ios::binary);
  os << "P5\n" << s.w << " " << s.h << "\n255\n";
  const double range = hi - lo;
  for (double v : mean) {
    const int byte = range > 0 ? static_cast<int>(std::llround(255.0 * (v - lo) / range)) : 0;
    os.put(static_cast<char>(byte < 0 ? 0 : (byte > 255 ? 255 : byte)));
  }
  return os.str();
}

template <class T>
void write_pgm_file(const std::string& path, const Tensor4<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  const std::string bytes = tensor_to_pgm(t);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed: " + path);
}

// Loss curves as CSV with a header row; values printed with enough digits to
// round-trip doubles exactly.
template <class T>
std::string losses_to_csv(const std::vector<T>& losses) {
  std::ostringstream os;
  os << "step,loss\n";
  os << std::setprecision(17);
  for (size_t i = 0; i < losses.size(); ++i) {
    os << i << "," << static_cast<double>(losses[i]) << "\n";
  }
  return os.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!os) throw IoError("write failed: " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace fcmnet
