#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cxr/data_pipeline.hpp"
#include "cxr/grid.hpp"
#include "cxr/model.hpp"
#include "cxr/sample_loader.hpp"

namespace cxr {

/// Axis-aligned box, [x_min, x_max) x [y_min, y_max) in pixels.
struct BBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double area() const { return (x_max - x_min) * (y_max - y_min); }
  bool valid() const { return x_max > x_min && y_max > y_min; }
  bool operator==(const BBox&) const = default;
};

/// Probability that a random positive outscores a random negative, ties
/// counted as one half. Throws std::domain_error unless both classes occur.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);
/// As roc_auc, but nullopt when labels hold a single class.
std::optional<double> try_roc_auc(std::span<const double> scores,
                                  std::span<const std::uint8_t> labels);

/// Bilinear upsample to edge x edge, min-max scale to [0, 255], round.
/// A constant heatmap maps to all zeros.
Grid<std::uint8_t> normalize_heatmap(const RealMap& heatmap, int edge = 224);

/// 1 where value > threshold (strict).
BinaryMask heatmap_to_mask(const Grid<std::uint8_t>& map, int threshold = 127);

/// Outer borders found by Suzuki-Abe border following (8-connected
/// foreground). Points are (row, col).
struct Contour {
  std::vector<std::pair<int, int>> points;
  bool outer = true;
};
std::vector<Contour> find_contours(const BinaryMask& mask);

/// One box per 8-connected foreground region: the extent of its outer
/// border, in raster order of the border's starting pixel.
std::vector<BBox> extract_boxes(const BinaryMask& mask);

double iou(const BBox& a, const BBox& b);

/// One (image, class) localization case: predicted boxes vs ground truth.
struct LocalizationCase {
  int class_id = 0;
  std::vector<BBox> predicted;
  std::vector<BBox> truth;
  /// Negative cases (no ground truth) count as correct when the predicted
  /// probability stays below 0.5; only used with include_negatives.
  double probability = 0;
};

/// Correct iff some predicted box has IoU > threshold with some truth box.
bool case_correct(const LocalizationCase& c, double threshold);

struct LocalizationResult {
  std::vector<double> accuracy;  // per class, NaN when no cases
  std::vector<int> cases;
  std::vector<int> correct;
};

LocalizationResult localization_score(std::span<const LocalizationCase> cases, int n_classes,
                                      double threshold);

struct EvalReport {
  std::vector<std::string> class_names;
  std::vector<std::optional<double>> auc;
  std::optional<double> mean_auc;  // over classes with a defined AUC
  int n_images = 0;
  std::vector<double> thresholds;
  std::vector<LocalizationResult> localization;  // one per threshold
  std::vector<int> localization_classes;         // class ids that were scored

  std::string to_json() const;
  std::string to_table() const;
};

/// Mean of the defined entries; nullopt when none is defined.
std::optional<double> mean_defined(const std::vector<std::optional<double>>& values);

struct Predictions {
  Tensor probabilities;  // N x K
  std::vector<std::vector<std::uint8_t>> labels;  // per class, N entries
};

/// Evaluation-mode forward over records (centre crop) in batches.
Predictions predict(Model& model, const SampleSource& source,
                    const std::vector<ImageRecord>& records, int batch_size = 16);

std::vector<std::optional<double>> per_class_auc(const Predictions& p);

struct LocalizationOptions {
  std::vector<double> thresholds{0.1, 0.3};
  bool include_negatives = false;
  int heatmap_threshold = 127;
};

/// Per-image CAMs for the listed classes, each N x h x w at feature
/// resolution, plus probabilities; single evaluation-mode forward.
struct CamBatch {
  Tensor probabilities;            // N x K
  std::vector<Tensor> heatmaps;    // per class, N x h x w
  std::vector<CropWindow> windows;
};
CamBatch compute_cams(Model& model, const SampleSource& source,
                      const std::vector<ImageRecord>& records,
                      const std::vector<std::size_t>& indices);

/// Boxes predicted for one heatmap in the 224 crop frame.
std::vector<BBox> predict_boxes(const RealMap& heatmap, int edge, int threshold);

/// Builds cases from annotated records: every (image, class) with at least
/// one unflagged box; with include_negatives also images labelled negative
/// for a localization class.
std::vector<LocalizationCase> localization_cases(Model& model, const SampleSource& source,
                                                 const Dataset& dataset,
                                                 const std::vector<std::size_t>& records,
                                                 const LocalizationOptions& options,
                                                 int batch_size = 16);

EvalReport evaluate_classification(Model& model, const SampleSource& source,
                                   const Dataset& dataset,
                                   const std::vector<std::size_t>& records);

void add_localization(EvalReport& report, Model& model, const SampleSource& source,
                      const Dataset& dataset, const std::vector<std::size_t>& records,
                      const LocalizationOptions& options);

}  // namespace cxr
