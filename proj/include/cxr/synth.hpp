#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cxr/data_pipeline.hpp"
#include "cxr/grid.hpp"

namespace cxr {

/// Integer pixel rectangle [x, x+w) x [y, y+h).
struct PixelRect {
  int x = 0, y = 0, w = 0, h = 0;
};

/// Desk-scale substitute for NIH data: chest phantoms (two dark lung fields on
/// a brighter body) with bright elliptical lesions planted in a per-class region.
struct SynthConfig {
  int n_images = 2000;
  int image_edge = 256;
  std::vector<std::string> class_names;
  std::vector<PixelRect> lesion_regions;  // one per class, canonical coords
  double lesion_delta = 0.35;
  double noise_sigma = 0.04;
  double positive_rate = 0.3;
  int lesion_radius_min = 7;
  int lesion_radius_max = 13;
  std::uint64_t seed = 7;

  int n_classes() const { return static_cast<int>(class_names.size()); }
  void validate() const;
};

/// The reference desk-scale configuration: 2,000 images, 4 classes, seed 7.
SynthConfig reference_synth_config();

struct SynthSample {
  ImageRecord record;
  std::vector<BBoxAnnotation> boxes;
  Grid<std::uint8_t> image;
};

/// Deterministic per index: sample i depends only on (config, i).
SynthSample synth_sample(const SynthConfig& config, int index);

struct SynthDataset {
  std::vector<Grid<std::uint8_t>> images;
  std::vector<ImageRecord> records;
  std::vector<BBoxAnnotation> boxes;
};

SynthDataset synth_generate(const SynthConfig& config);

/// Writes images/, labels.csv, bboxes.csv, classes.txt and
/// localization_classes.txt under `dir` (the DatasetLayout defaults).
void write_synth_dataset(const SynthConfig& config, const std::filesystem::path& dir);

/// Mixes a base seed with a stream index (splitmix64 finaliser).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace cxr
