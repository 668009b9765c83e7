#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace spi {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major N-dimensional array. The single numeric carrier for the
// whole project: double for measurement models, solvers and metrics, float
// for network training.
template <class T>
struct TensorT {
  Shape shape;
  std::vector<T> data;

  TensorT() = default;

  explicit TensorT(Shape s) : shape(std::move(s)) {
    check_extents(shape);
    data.assign(static_cast<size_t>(shape_numel(shape)), T(0));
  }

  TensorT(Shape s, T fill) : TensorT(std::move(s)) {
    for (auto& v : data) v = fill;
  }

  static TensorT zeros(Shape s) { return TensorT(std::move(s)); }

  static TensorT from(Shape s, std::vector<T> d) {
    check_extents(s);
    if (shape_numel(s) != static_cast<int64_t>(d.size()))
      throw std::invalid_argument("tensor: data length " + std::to_string(d.size()) +
                                  " does not match shape " + shape_str(s));
    TensorT t;
    t.shape = std::move(s);
    t.data = std::move(d);
    return t;
  }

  int rank() const { return static_cast<int>(shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t extent(int i) const { return shape.at(static_cast<size_t>(i)); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator()(int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator()(int64_t i) const { return data[static_cast<size_t>(i)]; }

  T& operator()(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
  const T& operator()(int64_t i, int64_t j) const {
    return data[static_cast<size_t>(i * shape[1] + j)];
  }

  T& operator()(int64_t b, int64_t c, int64_t y, int64_t x) {
    return data[static_cast<size_t>(((b * shape[1] + c) * shape[2] + y) * shape[3] + x)];
  }
  const T& operator()(int64_t b, int64_t c, int64_t y, int64_t x) const {
    return data[static_cast<size_t>(((b * shape[1] + c) * shape[2] + y) * shape[3] + x)];
  }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  // NaN/Inf is a contract violation; callers check at module boundaries.
  void ensure_finite(const std::string& what) const {
    for (const T& v : data)
      if (!std::isfinite(static_cast<double>(v)))
        throw std::runtime_error(what + ": non-finite value in tensor " + shape_str(shape));
  }

  template <class U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

 private:
  static void check_extents(const Shape& s) {
    for (int64_t e : s)
      if (e <= 0) throw std::invalid_argument("tensor: non-positive extent in " + shape_str(s));
  }
};

using Tensor = TensorT<double>;
using Tensorf = TensorT<float>;

}  // namespace spi
