#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cxr/grid.hpp"

namespace cxr {

using Shape = std::vector<int>;

std::string to_string(const Shape& shape);

/// Dense row-major real array. Batched network activations use the
/// N x C x H x W layout; single images are C x H x W.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }

  const Shape& shape() const noexcept { return shape_; }
  int dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double& at(int h, int w) noexcept { return data_[offset(h, w)]; }
  double at(int h, int w) const noexcept { return data_[offset(h, w)]; }
  double& at(int c, int h, int w) noexcept { return data_[offset(c, h, w)]; }
  double at(int c, int h, int w) const noexcept { return data_[offset(c, h, w)]; }
  double& at(int n, int c, int h, int w) noexcept { return data_[offset(n, c, h, w)]; }
  double at(int n, int c, int h, int w) const noexcept { return data_[offset(n, c, h, w)]; }

  /// Pointer to the contiguous block that starts at leading index `i`.
  double* slice(int i) noexcept { return data_.data() + static_cast<std::size_t>(i) * stride0(); }
  const double* slice(int i) const noexcept {
    return data_.data() + static_cast<std::size_t>(i) * stride0();
  }
  std::size_t stride0() const noexcept { return shape_.empty() ? 0 : data_.size() / shape_[0]; }

  void fill(double value);
  Tensor reshaped(Shape shape) const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double scale);

  bool operator==(const Tensor& other) const = default;

 private:
  std::size_t offset(int h, int w) const noexcept {
    assert(shape_.size() == 2);
    return static_cast<std::size_t>(h) * shape_[1] + w;
  }
  std::size_t offset(int c, int h, int w) const noexcept {
    assert(shape_.size() == 3);
    return (static_cast<std::size_t>(c) * shape_[1] + h) * shape_[2] + w;
  }
  std::size_t offset(int n, int c, int h, int w) const noexcept {
    assert(shape_.size() == 4);
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  Shape shape_;
  std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);

void require_same_shape(const Tensor& a, const Tensor& b, const char* context);

/// Largest |a - b| over all elements.
double max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

/// 1 x H x W tensor from a real-valued raster and back.
Tensor to_tensor(const RealMap& map);
RealMap to_map(const Tensor& plane);

}  // namespace cxr
