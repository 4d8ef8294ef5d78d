#pragma once

// Rank-4 tensor core: shapes, storage, gradient slots, error types.
// Layout is dense row-major (batch, channel, row, col), double precision
// by default; every structure is templated on the scalar so the training
// demo can run in single precision.

#include <algorithm>
#include <cstdint>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fcmnet {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/operator shape violations (mismatched dims, empty outputs).
struct ShapeError : Error {
  using Error::Error;
};

// Invalid configuration values (bad groups, bad split ratio, unknown keys).
struct ConfigError : Error {
  using Error::Error;
};

// API misuse (backward through unrecorded values, probing nonlinear maps).
struct UsageError : Error {
  using Error::Error;
};

// Closed-form vs constructed parameter count mismatch.
struct AuditError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// Text parse failure with position info.
struct ParseError : Error {
  int line = 0;
  int col = 0;
  ParseError(const std::string& msg, int line_, int col_)
      : Error(msg + " (line " + std::to_string(line_) + ", col " + std::to_string(col_) + ")"),
        line(line_),
        col(col_) {}
};

struct Shape4 {
  int64_t n = 1;
  int64_t c = 1;
  int64_t h = 1;
  int64_t w = 1;

  int64_t numel() const { return n * c * h * w; }

  bool operator==(const Shape4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
  bool operator!=(const Shape4& o) const { return !(*this == o); }

  std::string str() const {
    std::ostringstream os;
    os << "[" << n << "," << c << "," << h << "," << w << "]";
    return os.str();
  }
};

inline void check_shape_valid(const Shape4& s, const char* who) {
  if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
    throw ShapeError(std::string(who) + ": all dimensions must be >= 1, got " + s.str());
  }
}

// Value of the system. Immutable once produced by an op; the grad buffer is
// the only part mutated afterwards (accumulation during a backward pass).
template <class T>
struct Tensor4 {
  Shape4 shape{1, 1, 1, 1};
  std::vector<T> data;
  std::vector<T> grad;  // empty until gradients are requested

  Tensor4() : data(1, T(0)) {}
  explicit Tensor4(Shape4 s, T fill = T(0)) : shape(s) {
    check_shape_valid(s, "Tensor4");
    data.assign(static_cast<size_t>(s.numel()), fill);
  }

  int64_t numel() const { return shape.numel(); }

  bool has_grad() const { return !grad.empty(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }

  int64_t offset(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return ((n * shape.c + c) * shape.h + h) * shape.w + w;
  }
  T& at(int64_t n, int64_t c, int64_t h, int64_t w) { return data[static_cast<size_t>(offset(n, c, h, w))]; }
  const T& at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data[static_cast<size_t>(offset(n, c, h, w))];
  }
};

template <class T>
using TensorPtr = std::shared_ptr<Tensor4<T>>;

template <class T>
TensorPtr<T> make_tensor(Shape4 s, T fill = T(0)) {
  return std::make_shared<Tensor4<T>>(s, fill);
}

template <class T>
TensorPtr<T> make_scalar(T v) {
  auto t = make_tensor<T>(Shape4{1, 1, 1, 1});
  t->data[0] = v;
  return t;
}

template <class T>
TensorPtr<T> make_tensor_from(Shape4 s, std::vector<T> values) {
  check_shape_valid(s, "make_tensor_from");
  if (static_cast<int64_t>(values.size()) != s.numel()) {
    throw ShapeError("make_tensor_from: " + std::to_string(values.size()) + " values for shape " + s.str());
  }
  auto t = std::make_shared<Tensor4<T>>(s);
  t->data = std::move(values);
  return t;
}

template <class T>
TensorPtr<T> clone_tensor(const Tensor4<T>& src) {
  auto t = std::make_shared<Tensor4<T>>(src.shape);
  t->data = src.data;
  return t;
}

}  // namespace fcmnet
