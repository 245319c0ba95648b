// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "liso/error.hpp"

namespace liso {

/// Dimensions of a dense row-major array. Image batches use NCHW.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int> dims) : dims_(dims) {}
  explicit Shape(std::vector<int> dims) : dims_(std::move(dims)) {}

  std::size_t rank() const { return dims_.size(); }
  int operator[](std::size_t i) const { return dims_[i]; }
  const std::vector<int>& dims() const { return dims_; }

  std::size_t numel() const {
    std::size_t n = 1;
    for (int d : dims_) n *= static_cast<std::size_t>(d);
    return n;
  }

  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
    os << ')';
    return os.str();
  }

 private:
  std::vector<int> dims_;
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)), data_(shape_.numel(), fill) {
    for (int d : shape_.dims()) require(d >= 0, ErrorCode::InvalidArgument, "negative dimension");
  }
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(data_.size() == shape_.numel(), ErrorCode::ShapeMismatch,
            "data size does not match shape " + shape_.str());
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T{0}); }
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_, T{0}); }

  const Shape& shape() const { return shape_; }
  int dim(std::size_t i) const { return shape_[i]; }
  std::size_t rank() const { return shape_.rank(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() & { return data_; }
  const std::vector<T>& storage() const& { return data_; }
  std::vector<T> storage() && { return std::move(data_); }  // safe in range-for over temporaries

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // NCHW accessors for rank-4 tensors.
  T& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  const T& at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  Tensor reshaped(Shape shape) const {
    require(shape.numel() == data_.size(), ErrorCode::ShapeMismatch,
            "cannot reshape " + shape_.str() + " to " + shape.str());
    return Tensor(std::move(shape), data_);
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    check_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    check_same(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, T s) { return a *= s; }

  void check_same(const Tensor& o, const char* op) const {
    require(shape_ == o.shape_, ErrorCode::ShapeMismatch,
            std::string(op) + ": " + shape_.str() + " vs " + o.shape_.str());
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <class T>
T sum(const Tensor<T>& t) {
  return std::accumulate(t.storage().begin(), t.storage().end(), T{0});
}

template <class T>
T max_abs(const Tensor<T>& t) {
  T m{0};
  for (T v : t.storage()) m = std::max(m, static_cast<T>(std::abs(v)));
  return m;
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  a.check_same(b, "max_abs_diff");
  T m{0};
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<T>(std::abs(a[i] - b[i])));
  return m;
}

template <class T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.storage().begin(), t.storage().end(), [](T v) { return std::isfinite(v); });
}

/// Extracts image `n` of a batch as a (1,C,H,W) tensor.
template <class T>
Tensor<T> slice_batch(const Tensor<T>& batch, int n) {
  require(batch.rank() == 4 && n >= 0 && n < batch.dim(0), ErrorCode::InvalidArgument, "slice_batch");
  const std::size_t per = batch.size() / batch.dim(0);
  Tensor<T> out(Shape{1, batch.dim(1), batch.dim(2), batch.dim(3)});
  std::copy_n(batch.data() + per * n, per, out.data());
  return out;
}

/// Stacks same-shaped (1,C,H,W) tensors into one (N,C,H,W) batch.
template <class T>
Tensor<T> stack_batch(std::span<const Tensor<T>> items) {
  require(!items.empty(), ErrorCode::InvalidArgument, "stack_batch of nothing");
  const Shape& s = items.front().shape();
  require(s.rank() == 4 && s[0] == 1, ErrorCode::ShapeMismatch, "stack_batch expects (1,C,H,W)");
  Tensor<T> out(Shape{static_cast<int>(items.size()), s[1], s[2], s[3]});
  for (std::size_t i = 0; i < items.size(); ++i) {
    require(items[i].shape() == s, ErrorCode::ShapeMismatch, "stack_batch shape mismatch");
    std::copy(items[i].storage().begin(), items[i].storage().end(), out.data() + i * items[i].size());
  }
  return out;
}

}  // namespace liso
