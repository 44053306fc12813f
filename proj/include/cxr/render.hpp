#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "cxr/evaluation.hpp"
#include "cxr/image_io.hpp"

namespace cxr {

struct OverlayStyle {
  double heatmap_alpha = 0.45;
  double positive_threshold = 0.5;  // predicted probability that triggers an overlay
  int heatmap_threshold = 127;
};

/// Jet-style colour for t in [0, 1].
std::array<std::uint8_t, 3> heat_color(double t);

/// Grey copy of the crop frame (channel 0 of a preprocessed image, with the
/// normalization undone).
RgbImage crop_to_rgb(const Tensor& image, const PreprocessSpec& spec);

void blend_heatmap(RgbImage& canvas, const Grid<std::uint8_t>& heatmap, double alpha);

/// Ground truth: solid green. Predictions: dashed red.
void draw_box(RgbImage& canvas, const BBox& box, bool dashed, std::array<std::uint8_t, 3> color);

/// Writes one PNG per predicted-positive class (heatmap blend, ground-truth
/// and predicted boxes), or a single grey copy when nothing is positive.
/// Each file carries a caption text chunk. Returns the paths written.
std::vector<std::filesystem::path> render_overlays(Model& model, const SampleSource& source,
                                                   const ImageRecord& record,
                                                   const std::vector<std::string>& class_names,
                                                   const std::vector<BBoxAnnotation>& boxes,
                                                   const std::filesystem::path& out_dir,
                                                   const OverlayStyle& style = {});

}  // namespace cxr
