#include "cxr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

#include "cxr/image_io.hpp"
#include "cxr/parallel.hpp"

namespace cxr {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

void SynthConfig::validate() const {
  if (n_images < 0) throw std::invalid_argument("synth: n_images must be >= 0");
  if (image_edge < 32) throw std::invalid_argument("synth: image_edge must be >= 32");
  if (class_names.empty()) throw std::invalid_argument("synth: no classes");
  if (lesion_regions.size() != class_names.size()) {
    throw std::invalid_argument("synth: one lesion region per class required");
  }
  if (lesion_radius_min < 1 || lesion_radius_max < lesion_radius_min) {
    throw std::invalid_argument("synth: invalid lesion radius range");
  }
  if (positive_rate < 0 || positive_rate > 1) {
    throw std::invalid_argument("synth: positive_rate outside [0,1]");
  }
  for (std::size_t c = 0; c < lesion_regions.size(); ++c) {
    const auto& r = lesion_regions[c];
    if (r.x < 0 || r.y < 0 || r.w <= 0 || r.h <= 0 || r.x + r.w > image_edge ||
        r.y + r.h > image_edge) {
      throw std::invalid_argument("synth: lesion region of '" + class_names[c] +
                                  "' lies outside the canvas");
    }
    if (r.w < 2 * lesion_radius_max + 1 || r.h < 2 * lesion_radius_max + 1) {
      throw std::invalid_argument("synth: lesion region of '" + class_names[c] +
                                  "' cannot hold the largest lesion");
    }
  }
}

SynthConfig reference_synth_config() {
  SynthConfig cfg;
  cfg.n_images = 2000;
  cfg.image_edge = 256;
  cfg.seed = 7;
  cfg.class_names = {"Nodule", "Mass", "Effusion", "Atelectasis"};
  // Upper/lower zones of the image-left and image-right lung fields.
  cfg.lesion_regions = {{48, 56, 64, 56}, {144, 56, 64, 56}, {44, 144, 72, 52}, {140, 144, 72, 52}};
  return cfg;
}

namespace {

double scaled(const SynthConfig& cfg, double v) { return v * cfg.image_edge / 256.0; }

}  // namespace

SynthSample synth_sample(const SynthConfig& cfg, int index) {
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(index)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
  const int edge = cfg.image_edge;

  SynthSample s;
  char name[32];
  std::snprintf(name, sizeof(name), "synth_%05d.png", index);
  s.record.image_id = name;
  s.record.patient_id = "P" + std::to_string(index);
  s.record.labels.assign(cfg.class_names.size(), 0);

  // Phantom anatomy with a small per-image jitter.
  const double jx = (unit(rng) - 0.5) * scaled(cfg, 6);
  const double jy = (unit(rng) - 0.5) * scaled(cfg, 6);
  const double lung_rx = scaled(cfg, 46), lung_ry = scaled(cfg, 84);
  const double lung_cy = scaled(cfg, 128) + jy;
  const double left_cx = scaled(cfg, 80) + jx, right_cx = scaled(cfg, 176) + jx;

  RealMap img(edge, edge);
  for (int r = 0; r < edge; ++r) {
    for (int c = 0; c < edge; ++c) {
      double y = r + 0.5, x = c + 0.5;
      double v = 0.62 + 0.08 * (y / edge);
      auto in_lung = [&](double cx) {
        double dx = (x - cx) / lung_rx, dy = (y - lung_cy) / lung_ry;
        return dx * dx + dy * dy <= 1.0;
      };
      if (in_lung(left_cx) || in_lung(right_cx)) v = 0.24 + 0.06 * (y / edge);
      img(r, c) = v;
    }
  }

  for (int c = 0; c < cfg.n_classes(); ++c) {
    if (unit(rng) >= cfg.positive_rate) continue;
    s.record.labels[c] = 1;
    const auto& region = cfg.lesion_regions[c];
    std::uniform_int_distribution<int> radius(cfg.lesion_radius_min, cfg.lesion_radius_max);
    const int rx = radius(rng), ry = radius(rng);
    // Centre on the half-pixel grid so the ellipse stays inside the region.
    std::uniform_int_distribution<int> pick_x(region.x + rx, region.x + region.w - rx - 1);
    std::uniform_int_distribution<int> pick_y(region.y + ry, region.y + region.h - ry - 1);
    const double cx = pick_x(rng) + 0.5, cy = pick_y(rng) + 0.5;
    int min_r = edge, max_r = -1, min_c = edge, max_c = -1;
    for (int r = static_cast<int>(cy - ry) - 1; r <= static_cast<int>(cy + ry) + 1; ++r) {
      for (int col = static_cast<int>(cx - rx) - 1; col <= static_cast<int>(cx + rx) + 1; ++col) {
        if (r < 0 || col < 0 || r >= edge || col >= edge) continue;
        double dx = (col + 0.5 - cx) / rx, dy = (r + 0.5 - cy) / ry;
        if (dx * dx + dy * dy > 1.0) continue;
        img(r, col) += cfg.lesion_delta;
        min_r = std::min(min_r, r);
        max_r = std::max(max_r, r);
        min_c = std::min(min_c, col);
        max_c = std::max(max_c, col);
      }
    }
    BBoxAnnotation box;
    box.image_id = s.record.image_id;
    box.class_id = c;
    box.x = min_c;
    box.y = min_r;
    box.w = max_c - min_c + 1;
    box.h = max_r - min_r + 1;
    s.boxes.push_back(box);
  }

  s.image = Grid<std::uint8_t>(edge, edge);
  for (std::size_t i = 0; i < img.size(); ++i) {
    double v = std::clamp(img.values()[i] + noise(rng), 0.0, 1.0);
    s.image.values()[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return s;
}

namespace {

void assign_synth_splits(std::vector<ImageRecord>& records, std::uint64_t seed) {
  assign_splits(records, {0.7, 0.1, 0.2}, derive_seed(seed, 0xC0FFEE));
}

}  // namespace

SynthDataset synth_generate(const SynthConfig& config) {
  config.validate();
  std::vector<SynthSample> samples(config.n_images);
  parallel_for(samples.size(), [&](std::size_t i) {
    samples[i] = synth_sample(config, static_cast<int>(i));
  });
  SynthDataset ds;
  for (auto& s : samples) {
    ds.images.push_back(std::move(s.image));
    ds.records.push_back(std::move(s.record));
    for (auto& b : s.boxes) ds.boxes.push_back(b);
  }
  assign_synth_splits(ds.records, config.seed);
  return ds;
}

void write_synth_dataset(const SynthConfig& config, const std::filesystem::path& dir) {
  config.validate();
  const auto images_dir = dir / "images";
  std::filesystem::create_directories(images_dir);
  std::vector<ImageRecord> records(config.n_images);
  std::vector<std::vector<BBoxAnnotation>> boxes(config.n_images);
  parallel_for(records.size(), [&](std::size_t i) {
    SynthSample s = synth_sample(config, static_cast<int>(i));
    write_gray8(images_dir / s.record.image_id, s.image);
    records[i] = std::move(s.record);
    boxes[i] = std::move(s.boxes);
  });
  assign_synth_splits(records, config.seed);
  std::vector<BBoxAnnotation> all_boxes;
  for (auto& b : boxes) all_boxes.insert(all_boxes.end(), b.begin(), b.end());
  write_label_csv(dir / "labels.csv", records, config.class_names);
  write_bbox_csv(dir / "bboxes.csv", all_boxes, config.class_names);
  save_class_names(dir / "classes.txt", config.class_names);
  save_class_names(dir / "localization_classes.txt", config.class_names);
}

}  // namespace cxr
