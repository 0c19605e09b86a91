#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mvbev/error.hpp"

namespace mvbev {

using Shape = std::vector<int>;

/// Channels of every rendered view image.
inline constexpr int kImageChannels = 3;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
}

/// Dense row-major tensor. `Real` is float for production runs; the
/// gradient checks instantiate the same code with double.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real{0})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    for (int d : shape_)
      if (d < 0) throw InvalidArgument("negative tensor dimension in " + shape_str(shape_));
  }
  Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_))
      throw ShapeMismatch("data size " + std::to_string(data_.size()) + " does not match shape " +
                          shape_str(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }
  std::span<Real> span() noexcept { return data_; }
  std::span<const Real> span() const noexcept { return data_; }
  std::vector<Real>& vec() noexcept { return data_; }
  const std::vector<Real>& vec() const noexcept { return data_; }

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  const Real& operator[](std::size_t i) const noexcept { return data_[i]; }

  // 2-D and 3-D accessors for the (C,H,W) / (H,W) layouts used throughout.
  Real& at(int i, int j) noexcept { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
  const Real& at(int i, int j) const noexcept {
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }
  Real& at(int c, int i, int j) noexcept {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + i) * shape_[2] + j];
  }
  const Real& at(int c, int i, int j) const noexcept {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + i) * shape_[2] + j];
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, std::vector<Other>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<Real> data_;
};

template <typename Real>
void require_shape(const Tensor<Real>& t, const Shape& expected, const char* what) {
  if (t.shape() != expected)
    throw ShapeMismatch(std::string(what) + ": expected " + shape_str(expected) + ", got " +
                        shape_str(t.shape()));
}

template <typename Real>
Real dot(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) throw ShapeMismatch("dot of " + shape_str(a.shape()) + " and " +
                                                  shape_str(b.shape()));
  Real s{0};
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace mvbev
