#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cxr {

/// Row-major 2-D raster. Used for binary masks (uint8_t), raw prior counts
/// (int32_t) and real-valued maps (double).
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, T fill = T{})
      : height_(height), width_(width) {
    if (height < 0 || width < 0) {
      throw std::invalid_argument("Grid: negative extent " + std::to_string(height) + "x" +
                                  std::to_string(width));
    }
    data_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill);
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int row, int col) { return data_[index(row, col)]; }
  const T& operator()(int row, int col) const { return data_[index(row, col)]; }

  bool contains(int row, int col) const noexcept {
    return row >= 0 && col >= 0 && row < height_ && col < width_;
  }

  bool same_extent(const Grid& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  bool operator==(const Grid& other) const = default;

 private:
  std::size_t index(int row, int col) const noexcept {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

using BinaryMask = Grid<std::uint8_t>;
using RealMap = Grid<double>;
using CountMap = Grid<std::int32_t>;

template <typename To, typename From>
Grid<To> grid_cast(const Grid<From>& in) {
  Grid<To> out(in.height(), in.width());
  for (std::size_t i = 0; i < in.size(); ++i) {
    out.values()[i] = static_cast<To>(in.values()[i]);
  }
  return out;
}

inline std::size_t count_nonzero(const BinaryMask& mask) {
  std::size_t n = 0;
  for (auto v : mask) n += (v != 0);
  return n;
}

}  // namespace cxr
