#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "cxr/grid.hpp"
#include "cxr/tensor.hpp"

namespace cxr {

/// Lung-field segmentation backend. Returns a probability map with the
/// image's spatial extent and values in [0,1].
class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual RealMap segment(const Tensor& image, const std::string& image_id) const = 0;
  virtual const char* name() const = 0;
};

/// Non-clinical fallback: Otsu threshold, keep dark regions that do not touch
/// the image border (border-connected dark pixels are air outside the body).
class OtsuSegmenter final : public Segmenter {
 public:
  RealMap segment(const Tensor& image, const std::string& image_id) const override;
  const char* name() const override { return "fallback"; }
};

/// Reads pre-computed probability maps `<dir>/<image_id>` (8/16-bit PNG).
class ExternalSegmenter final : public Segmenter {
 public:
  explicit ExternalSegmenter(std::filesystem::path dir) : dir_(std::move(dir)) {}
  RealMap segment(const Tensor& image, const std::string& image_id) const override;
  const char* name() const override { return "external"; }

 private:
  std::filesystem::path dir_;
};

enum class RoiProvenance { segmenter, fallback, external };
const char* provenance_name(RoiProvenance p);

struct RoiMask {
  BinaryMask mask;
  RoiProvenance provenance = RoiProvenance::segmenter;
};

struct RoiParams {
  double threshold = 0.5;
  int keep_islands = 2;
  int dilation_radius = 8;   // at the working resolution
  int working_edge = 256;    // short edge the chain runs at
};

BinaryMask binarize(const RealMap& prob, double threshold = 0.5);

struct Component {
  int label = 0;       // 1-based label in Components::labels
  long area = 0;
  double centroid_row = 0;
  double centroid_col = 0;
  int min_row = 0, min_col = 0, max_row = 0, max_col = 0;  // inclusive
};

struct Components {
  Grid<int> labels;  // 0 = background
  std::vector<Component> items;
};

/// 8-connected component labelling in raster order.
Components label_components(const BinaryMask& mask);

/// Keeps the k largest 8-connected components (ties: smaller centroid row,
/// then smaller centroid column).
BinaryMask keep_largest_islands(const BinaryMask& mask, int k = 2);

struct PixelPoint {
  long x = 0;  // column
  long y = 0;  // row
  bool operator==(const PixelPoint&) const = default;
};

/// Counter-clockwise hull (in x-right, y-down pixel axes: clockwise on
/// screen) without collinear points; duplicates removed.
std::vector<PixelPoint> convex_hull(std::vector<PixelPoint> points);

/// Sets every pixel whose centre lies in the convex hull of all foreground
/// pixels, boundary included.
BinaryMask convex_hull_fill(const BinaryMask& mask);

/// Dilation by a disc {dx^2 + dy^2 <= r^2}.
BinaryMask dilate(const BinaryMask& mask, int radius);

/// binarize -> keep_largest_islands -> convex_hull_fill -> dilate at the
/// working resolution, then nearest-neighbour back to the image's resolution.
RoiMask generate_roi_mask(const Tensor& image, const std::string& image_id,
                          const Segmenter& segmenter, const RoiParams& params);

/// Post-processing chain alone, on a probability map.
BinaryMask roi_postprocess(const RealMap& prob, const RoiParams& params);

BinaryMask resize_nearest(const BinaryMask& mask, int height, int width);

/// Masks on disk are 8-bit {0,255}; reading treats > 127 as foreground.
void save_roi_mask(const std::filesystem::path& path, const BinaryMask& mask);
BinaryMask load_roi_mask(const std::filesystem::path& path);

/// Mean of the image's channels.
RealMap to_gray(const Tensor& image);

}  // namespace cxr
