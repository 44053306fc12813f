#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "cxr/data_pipeline.hpp"
#include "cxr/model.hpp"
#include "cxr/prior_maps.hpp"
#include "cxr/roi_mask.hpp"

namespace cxr {

/// Where per-image model inputs come from.
struct SampleSource {
  PreprocessSpec preprocess;
  /// Required when the model uses prior attention.
  const PriorMapSet* priors = nullptr;
  /// Pre-computed ROI masks named after the image id; when unset the
  /// fallback segmenter runs on the fly.
  std::optional<std::filesystem::path> roi_dir;
  RoiParams roi_params;
  bool need_roi = false;
  bool need_priors = false;
  int feature_extent = 7;
};

SampleSource make_sample_source(const ModelConfig& config, const PriorMapSet* priors,
                                std::optional<std::filesystem::path> roi_dir,
                                CropMode crop_mode);

struct Sample {
  Tensor image;   // 3 x 224 x 224
  Tensor roi;     // 1 x e x e (empty unless needed)
  Tensor priors;  // K x e x e (empty unless needed)
  CropWindow window;
};

/// `rng` drives the random crop; pass nullptr for centre crops.
Sample load_sample(const SampleSource& source, const ImageRecord& record, Rng* rng);

/// ROI mask at the image's source resolution.
BinaryMask roi_for(const SampleSource& source, const ImageRecord& record, const Tensor& image);

/// Loads records[indices[i]] in parallel. Sample i uses an RNG seeded with
/// derive_seed(seed, indices[i]) so results do not depend on scheduling.
ModelInput load_batch(const SampleSource& source, const std::vector<ImageRecord>& records,
                      const std::vector<std::size_t>& indices, std::optional<std::uint64_t> seed,
                      std::vector<CropWindow>* windows = nullptr);

}  // namespace cxr
