#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "accunet/common.hpp"

namespace accunet {

// Dense rank-4 shape (batch, channels, rows, cols).
struct Shape {
  int n = 1, c = 1, h = 1, w = 1;

  int64_t numel() const { return int64_t(n) * c * h * w; }
  int64_t chw() const { return int64_t(c) * h * w; }
  int64_t hw() const { return int64_t(h) * w; }

  bool operator==(const Shape& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
  }

  void validate() const {
    if (n < 1 || c < 1 || h < 1 || w < 1)
      throw ShapeError("all dimensions must be >= 1, got " + str());
  }
};

inline std::atomic<int64_t>& tensor_id_counter() {
  static std::atomic<int64_t> counter{0};
  return counter;
}

// Value-semantic tensor handle. Copies share the underlying buffer; tensors
// are treated as immutable once produced by an op. `id` is the tape handle.
template <typename T>
struct TensorT {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  int64_t id = -1;

  TensorT() = default;

  explicit TensorT(Shape s) : shape(s) {
    shape.validate();
    data = std::make_shared<std::vector<T>>(size_t(s.numel()), T(0));
    id = tensor_id_counter().fetch_add(1);
  }

  TensorT(Shape s, std::vector<T> values) : shape(s) {
    shape.validate();
    if (int64_t(values.size()) != s.numel())
      throw ShapeError("data length " + std::to_string(values.size()) +
                       " does not match shape " + s.str());
    data = std::make_shared<std::vector<T>>(std::move(values));
    id = tensor_id_counter().fetch_add(1);
  }

  static TensorT zeros(Shape s) { return TensorT(s); }

  static TensorT full(Shape s, T value) {
    TensorT t(s);
    for (auto& v : *t.data) v = value;
    return t;
  }

  static TensorT uniform(Shape s, Rng& rng, T lo, T hi) {
    TensorT t(s);
    for (auto& v : *t.data) v = T(rng.uniform(double(lo), double(hi)));
    return t;
  }

  int64_t numel() const { return shape.numel(); }

  T* ptr() { return data->data(); }
  const T* ptr() const { return data->data(); }

  T& at(int in, int ic, int iy, int ix) {
    return (*data)[((size_t(in) * shape.c + ic) * shape.h + iy) * shape.w + ix];
  }
  T at(int in, int ic, int iy, int ix) const {
    return (*data)[((size_t(in) * shape.c + ic) * shape.h + iy) * shape.w + ix];
  }

  T scalar() const {
    if (numel() != 1) throw ShapeError("scalar() on tensor of shape " + shape.str());
    return (*data)[0];
  }

  // Fresh buffer with the same contents (new id).
  TensorT clone() const {
    TensorT t(shape);
    *t.data = *data;
    return t;
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> t(shape);
    for (int64_t i = 0; i < numel(); ++i) (*t.data)[i] = U((*data)[i]);
    return t;
  }

  bool all_finite() const {
    for (const T& v : *data)
      if (!std::isfinite(double(v))) return false;
    return true;
  }
};

// Global switch for post-op finiteness checks (the NaN/Inf error state).
inline std::atomic<bool>& finite_checks_enabled() {
  static std::atomic<bool> enabled{true};
  return enabled;
}

template <typename T>
inline void check_finite(const TensorT<T>& t, const char* op) {
  if (!finite_checks_enabled().load(std::memory_order_relaxed)) return;
  if (!t.all_finite())
    throw NumericError(std::string(op) + " produced a non-finite value");
}

using Tensor = TensorT<float>;

}  // namespace accunet
