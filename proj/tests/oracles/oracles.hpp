#pragma once

// Deliberately naive reference implementations used only by the tests.
// None of them calls into the library code they check.

#include <cstdint>
#include <vector>

#include "cxr/apam.hpp"
#include "cxr/data_pipeline.hpp"
#include "cxr/evaluation.hpp"
#include "cxr/grid.hpp"

namespace oracle {

/// Nested-loop APAM forward. F is N x C x H x W, M is N x 1 x H x W.
/// Batch norm uses batch statistics when `training`, else running ones.
/// Returns A (same layout as F); `weight` receives W (N x C) when non-null.
std::vector<double> apam(const std::vector<double>& F, const std::vector<double>& M, int N,
                         int C, int H, int W, const cxr::ApamParams& params, bool training,
                         std::vector<double>* weight = nullptr);

/// Count of boxes whose area covers each pixel centre, divided by the
/// maximum (all ones when no box lands anywhere).
struct PriorOracle {
  std::vector<int> counts;
  std::vector<double> map;
};
PriorOracle prior_map(const std::vector<cxr::BBoxAnnotation>& boxes, int class_id, int height,
                      int width);

/// Pixel-centre-in-hull test by exhaustive triangles over the foreground
/// pixel centres (exact integer arithmetic).
cxr::BinaryMask hull_fill(const cxr::BinaryMask& mask);

/// 8-connected BFS; one [min, max+1) box per component, sorted.
std::vector<cxr::BBox> component_boxes(const cxr::BinaryMask& mask);

/// IoU of integer boxes by counting unit pixels.
double pixel_iou(const cxr::BBox& a, const cxr::BBox& b);

/// Counts positive/negative pairs: (wins + ties / 2) / pairs.
double pair_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels);

/// Mean binary cross-entropy in long double.
long double bce(const std::vector<double>& logits, const std::vector<double>& labels);

}  // namespace oracle
