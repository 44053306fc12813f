#include "cxr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cxr {

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("Tensor: negative dimension in " + to_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor Tensor::reshaped(Shape shape) const {
  if (element_count(shape) != data_.size()) {
    throw std::invalid_argument("Tensor::reshaped: " + to_string(shape_) + " -> " +
                                to_string(shape));
  }
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same_shape(*this, other, "operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double scale) {
  for (auto& v : data_) v *= scale;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator*(Tensor a, double s) { return a *= s; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* context) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(context) + ": shape mismatch " + to_string(a.shape()) +
                                " vs " + to_string(b.shape()));
  }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor to_tensor(const RealMap& map) {
  Tensor t({1, map.height(), map.width()});
  std::copy(map.begin(), map.end(), t.data());
  return t;
}

RealMap to_map(const Tensor& plane) {
  if (plane.rank() != 3 || plane.dim(0) != 1) {
    throw std::invalid_argument("to_map: expected 1xHxW, got " + to_string(plane.shape()));
  }
  RealMap map(plane.dim(1), plane.dim(2));
  std::copy(plane.data(), plane.data() + plane.size(), map.values().begin());
  return map;
}

}  // namespace cxr
