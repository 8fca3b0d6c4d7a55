#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "petroseg/error.hpp"

namespace petroseg::net {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Dense row-major tensor with an explicit shape.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, T fill = T(0))
      : shape_(std::move(shape)), values_(count(shape_), fill) {}
  Tensor(std::vector<int> shape, std::vector<T> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != count(shape_)) {
      throw internal_error("tensor value count does not match its shape");
    }
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  /// (n, c, y, x) accessor for rank-4 tensors.
  T& at(int n, int c, int y, int x) {
    return values_[offset(n, c, y, x)];
  }
  const T& at(int n, int c, int y, int x) const {
    return values_[offset(n, c, y, x)];
  }

  bool all_finite() const {
    for (const T& v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  static std::size_t count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int s : shape) {
      if (s < 0) throw internal_error("negative tensor extent");
      n *= static_cast<std::size_t>(s);
    }
    return n;
  }

 private:
  std::size_t offset(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
  }

  std::vector<int> shape_;
  std::vector<T> values_;
};

/// One image's activations: `data` is channels x (height*width).
template <class T>
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  Matrix<T> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w) : channels(c), height(h), width(w), data(Matrix<T>::Zero(c, h * w)) {}

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
};

}  // namespace petroseg::net
