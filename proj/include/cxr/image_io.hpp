#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cxr/grid.hpp"
#include "cxr/tensor.hpp"

namespace cxr {

/// 8-bit interleaved RGB raster for rendered overlays.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}
  std::uint8_t* at(int row, int col) { return &pixels[(static_cast<std::size_t>(row) * width + col) * 3]; }
};

using TextChunks = std::vector<std::pair<std::string, std::string>>;

/// Decodes an 8- or 16-bit grayscale/RGB(A) PNG into a C x H x W tensor with
/// values in [0, 1]; C is 1 for grayscale input and 3 for colour. Alpha is dropped.
Tensor read_image(const std::filesystem::path& path);

/// Raw 16-bit grayscale samples (8-bit files are widened by x257).
Grid<std::uint16_t> read_gray16(const std::filesystem::path& path);

void write_gray8(const std::filesystem::path& path, const Grid<std::uint8_t>& image,
                 const TextChunks& text = {});
void write_gray16(const std::filesystem::path& path, const Grid<std::uint16_t>& image);
void write_rgb8(const std::filesystem::path& path, const RgbImage& image,
                const TextChunks& text = {});

/// Quantizes a [0,1] single-channel tensor/map to 8 bits.
Grid<std::uint8_t> to_gray8(const RealMap& map);

}  // namespace cxr
