#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "adadepth/core/error.hpp"

namespace adadepth {

/// Batch x channels x height x width.
struct Shape4 {
  int n = 0, c = 0, h = 0, w = 0;

  std::size_t size() const { return std::size_t(n) * c * h * w; }
  std::size_t plane() const { return std::size_t(h) * w; }
  std::size_t sample() const { return std::size_t(c) * h * w; }
  bool operator==(const Shape4&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

/// Dense NCHW tensor with value semantics.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape4 s, T fill = T(0)) : shape_(s), data_(s.size(), fill) {}
  Tensor(int n, int c, int h, int w, T fill = T(0)) : Tensor(Shape4{n, c, h, w}, fill) {}

  const Shape4& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  std::span<T> sample(int n) { return {data_.data() + n * shape_.sample(), shape_.sample()}; }
  std::span<const T> sample(int n) const {
    return {data_.data() + n * shape_.sample(), shape_.sample()};
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    require_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  void axpy(T a, const Tensor& o) {
    require_same(o, "axpy");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += a * o.data_[i];
  }

  void require_same(const Tensor& o, const char* what) const {
    if (!(shape_ == o.shape_))
      throw ShapeError(std::string(what) + ": " + shape_.str() + " vs " + o.shape_.str());
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = U(data_[i]);
    return out;
  }

  bool operator==(const Tensor&) const = default;

 private:
  std::size_t index(int n, int c, int y, int x) const {
    return ((std::size_t(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  Shape4 shape_{};
  std::vector<T> data_;
};

inline void require_shape(const Shape4& got, const Shape4& want, const char* what) {
  if (!(got == want)) throw ShapeError(std::string(what) + ": got " + got.str() + ", want " + want.str());
}

}  // namespace adadepth
