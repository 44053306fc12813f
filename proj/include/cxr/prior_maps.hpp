#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cxr/data_pipeline.hpp"
#include "cxr/grid.hpp"

namespace cxr {

/// Disease-specific anatomical prior: the per-pixel count of annotation boxes
/// covering a pixel, divided by the largest count. Classes without any box
/// get an all-ones map.
struct PriorMap {
  int class_id = 0;
  RealMap map;     // values in [0,1]
  CountMap raw;    // per-pixel box count
  int n_images = 0;
};

struct PriorMapSet {
  std::vector<std::string> class_names;
  std::vector<PriorMap> maps;  // one per class, same order as class_names
  int height = 0;
  int width = 0;

  std::size_t size() const { return maps.size(); }
  const PriorMap& at(int class_id) const { return maps.at(class_id); }
};

/// 1 inside [x, x+w) x [y, y+h) by pixel-centre inclusion (exact for integer
/// boxes), 0 elsewhere. Throws if the box leaves the canvas.
BinaryMask rasterize_bbox(const BBoxAnnotation& box, int height, int width);

/// Elementwise sum of same-shaped binary masks.
CountMap accumulate_raw_map(std::span<const BinaryMask> masks, int height, int width);

/// Divides by the maximum count; an all-zero raw map yields all ones.
RealMap normalize_map(const CountMap& raw);

PriorMapSet build_prior_set(std::span<const BBoxAnnotation> boxes,
                            const std::vector<std::string>& class_names, int height, int width);

/// Writes `<class>.png` (16-bit, round(65535 p)) per class plus manifest.json.
void save_prior_set(const PriorMapSet& set, const std::filesystem::path& dir);

/// Loads and verifies a directory written by save_prior_set. Maps are
/// reconstructed exactly from the stored counts' maxima.
PriorMapSet load_prior_set(const std::filesystem::path& dir);

/// Re-keys a prior set to another class list. `mapping` sends target class
/// name -> source class name; unmapped targets (and names absent from the
/// source) fall back to all ones.
PriorMapSet remap_prior_set(const PriorMapSet& source,
                            const std::vector<std::string>& target_classes,
                            const std::map<std::string, std::string>& mapping);

/// Two-column CSV `target,source`.
std::map<std::string, std::string> load_class_mapping(const std::filesystem::path& path);

std::string prior_file_name(const std::string& class_name);

}  // namespace cxr
