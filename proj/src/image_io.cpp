#include "cxr/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace cxr {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) {
    throw std::runtime_error(std::string("cannot open image file for ") +
                             (mode[0] == 'r' ? "reading: " : "writing: ") + path.string());
  }
  return f;
}

/// Decoded PNG rows after libpng expansion: 1 or 3 channels, 8 or 16 bits.
struct DecodedPng {
  int height = 0;
  int width = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint8_t> bytes;

  unsigned sample(std::size_t row, std::size_t col, int ch) const {
    std::size_t idx = (row * width + col) * channels + ch;
    if (bit_depth == 16) {
      return static_cast<unsigned>(bytes[2 * idx]) << 8 | bytes[2 * idx + 1];
    }
    return bytes[idx];
  }
};

// The setjmp frames below hold only plain values, so longjmp cannot
// clobber C++ state.
bool read_png_info(png_structp png, png_infop info, std::FILE* file, png_uint_32* width,
                   png_uint_32* height, int* channels, int* bit_depth) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, file);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  *width = png_get_image_width(png, info);
  *height = png_get_image_height(png, info);
  *channels = png_get_channels(png, info);
  *bit_depth = png_get_bit_depth(png, info);
  return true;
}

bool read_png_rows(png_structp png, png_bytep* rows) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_read_image(png, rows);
  png_read_end(png, nullptr);
  return true;
}

DecodedPng decode_png(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  png_byte signature[8];
  if (std::fread(signature, 1, 8, file.get()) != 8 || png_sig_cmp(signature, 0, 8) != 0) {
    throw std::runtime_error("not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  DecodedPng out;
  png_uint_32 width = 0, height = 0;
  int channels = 0, bit_depth = 0;
  if (!read_png_info(png, info, file.get(), &width, &height, &channels, &bit_depth)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("corrupt PNG file: " + path.string());
  }
  out.width = static_cast<int>(width);
  out.height = static_cast<int>(height);
  out.channels = channels;
  out.bit_depth = bit_depth;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  out.bytes.resize(rowbytes * out.height);
  std::vector<png_bytep> rows(out.height);
  for (int r = 0; r < out.height; ++r) rows[r] = out.bytes.data() + rowbytes * r;
  const bool ok = read_png_rows(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  if (!ok) throw std::runtime_error("corrupt PNG file: " + path.string());

  if (out.channels != 1 && out.channels != 3) {
    throw std::runtime_error("unsupported PNG channel layout in " + path.string());
  }
  return out;
}

bool write_png_rows(png_structp png, png_infop info, std::FILE* file, int height, int width,
                    int color_type, int bit_depth, png_bytep* rows, png_text* chunks,
                    int n_chunks) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, file);
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (n_chunks > 0) png_set_text(png, info, chunks, n_chunks);
  png_write_info(png, info);
  png_write_image(png, rows);
  png_write_end(png, nullptr);
  return true;
}

void encode_png(const std::filesystem::path& path, int height, int width, int color_type,
                int bit_depth, const std::vector<std::uint8_t>& bytes, const TextChunks& text) {
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng initialisation failed");
  }
  const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  const std::size_t rowbytes = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
  std::vector<png_bytep> rows(height);
  for (int r = 0; r < height; ++r) {
    rows[r] = const_cast<png_bytep>(bytes.data()) + rowbytes * r;
  }
  std::vector<png_text> chunks(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    chunks[i].compression = PNG_TEXT_COMPRESSION_NONE;
    chunks[i].key = const_cast<char*>(text[i].first.c_str());
    chunks[i].text = const_cast<char*>(text[i].second.c_str());
  }
  const bool ok = write_png_rows(png, info, file.get(), height, width, color_type, bit_depth,
                                 rows.data(), chunks.data(), static_cast<int>(chunks.size()));
  png_destroy_write_struct(&png, &info);
  if (!ok) throw std::runtime_error("failed to encode PNG: " + path.string());
  if (std::fflush(file.get()) != 0) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

Tensor read_image(const std::filesystem::path& path) {
  DecodedPng png = decode_png(path);
  const double scale = png.bit_depth == 16 ? 65535.0 : 255.0;
  Tensor out({png.channels, png.height, png.width});
  for (int c = 0; c < png.channels; ++c) {
    for (int r = 0; r < png.height; ++r) {
      for (int col = 0; col < png.width; ++col) {
        out.at(c, r, col) = png.sample(r, col, c) / scale;
      }
    }
  }
  return out;
}

Grid<std::uint16_t> read_gray16(const std::filesystem::path& path) {
  DecodedPng png = decode_png(path);
  if (png.channels != 1) throw std::runtime_error("expected grayscale PNG: " + path.string());
  Grid<std::uint16_t> out(png.height, png.width);
  for (int r = 0; r < png.height; ++r) {
    for (int c = 0; c < png.width; ++c) {
      unsigned v = png.sample(r, c, 0);
      out(r, c) = static_cast<std::uint16_t>(png.bit_depth == 16 ? v : v * 257u);
    }
  }
  return out;
}

void write_gray8(const std::filesystem::path& path, const Grid<std::uint8_t>& image,
                 const TextChunks& text) {
  encode_png(path, image.height(), image.width(), PNG_COLOR_TYPE_GRAY, 8, image.values(), text);
}

void write_gray16(const std::filesystem::path& path, const Grid<std::uint16_t>& image) {
  std::vector<std::uint8_t> bytes(image.size() * 2);
  for (std::size_t i = 0; i < image.size(); ++i) {
    bytes[2 * i] = static_cast<std::uint8_t>(image.values()[i] >> 8);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(image.values()[i] & 0xFF);
  }
  encode_png(path, image.height(), image.width(), PNG_COLOR_TYPE_GRAY, 16, bytes, {});
}

void write_rgb8(const std::filesystem::path& path, const RgbImage& image, const TextChunks& text) {
  encode_png(path, image.height, image.width, PNG_COLOR_TYPE_RGB, 8, image.pixels, text);
}

Grid<std::uint8_t> to_gray8(const RealMap& map) {
  Grid<std::uint8_t> out(map.height(), map.width());
  for (std::size_t i = 0; i < map.size(); ++i) {
    double v = std::clamp(map.values()[i], 0.0, 1.0);
    out.values()[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

}  // namespace cxr
