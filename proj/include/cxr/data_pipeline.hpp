#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cxr/grid.hpp"
#include "cxr/tensor.hpp"

namespace cxr {

using Rng = std::mt19937_64;

enum class Split { train, val, test, unassigned };

const char* split_name(Split split);
Split parse_split(const std::string& name);

/// The 15 NIH ChestX-ray14 classes (14 findings plus "No Finding").
const std::vector<std::string>& nih_class_names();
/// The 8 NIH classes that carry bounding-box annotations.
const std::vector<std::string>& nih_localization_classes();

/// One class name per non-empty line.
std::vector<std::string> load_class_names(const std::filesystem::path& path);
void save_class_names(const std::filesystem::path& path, const std::vector<std::string>& names);

int class_index(const std::vector<std::string>& class_names, const std::string& name);

struct ImageRecord {
  std::string image_id;
  std::filesystem::path path;
  std::vector<std::uint8_t> labels;  // one 0/1 entry per class
  Split split = Split::unassigned;
  std::string patient_id;
};

struct BBoxAnnotation {
  std::string image_id;
  int class_id = 0;
  double x = 0, y = 0, w = 0, h = 0;  // source-resolution pixels
  /// Class is outside the localization class set; kept but not scored.
  bool flagged = false;
};

/// Parses a label CSV with `Image Index` and `Finding Labels` (pipe-separated)
/// columns. Optional `Patient ID` and `Split` columns are honoured.
std::vector<ImageRecord> load_label_index(const std::filesystem::path& csv_path,
                                          const std::vector<std::string>& class_names,
                                          const std::filesystem::path& images_dir = {});

/// Parses a bounding-box CSV: `Image Index`, `Finding Label`, then four numeric
/// columns x, y, w, h (the NIH `Bbox [x,y,w,h]` header splits into four).
/// Annotations whose class is outside `localization_classes` are flagged.
std::vector<BBoxAnnotation> load_bbox_index(const std::filesystem::path& csv_path,
                                            const std::vector<std::string>& class_names,
                                            const std::vector<std::string>& localization_classes);

void write_label_csv(const std::filesystem::path& path, const std::vector<ImageRecord>& records,
                     const std::vector<std::string>& class_names);
void write_bbox_csv(const std::filesystem::path& path, const std::vector<BBoxAnnotation>& boxes,
                    const std::vector<std::string>& class_names);

/// Assigns train/val/test by shuffling patient groups (or single images when no
/// patient ids exist) with `seed` and filling the fractions by image count.
void assign_splits(std::vector<ImageRecord>& records, std::array<double, 3> fractions,
                   std::uint64_t seed);

enum class CropMode { random, center };

struct PreprocessSpec {
  int resize_edge = 256;
  int crop_edge = 224;
  CropMode crop_mode = CropMode::center;
  std::array<double, 3> channel_mean{0.485, 0.456, 0.406};
  std::array<double, 3> channel_std{0.229, 0.224, 0.225};

  void validate() const;
};

/// Geometry shared by an image and its masks: the source extent, the
/// short-edge-resized frame, and the crop taken from that frame.
struct CropWindow {
  int source_height = 0;
  int source_width = 0;
  int resized_height = 0;
  int resized_width = 0;
  int x = 0;
  int y = 0;
  int size = 0;

  bool operator==(const CropWindow&) const = default;
};

CropWindow make_crop_window(int source_height, int source_width, const PreprocessSpec& spec,
                            Rng* rng);

/// Resize-crop-normalize. Grayscale input is replicated to three channels.
std::pair<Tensor, CropWindow> preprocess_image(const Tensor& image, const PreprocessSpec& spec,
                                               Rng* rng);

/// Same as above after decoding `path`; decode failures name the file.
std::pair<Tensor, CropWindow> preprocess_image(const std::filesystem::path& path,
                                               const PreprocessSpec& spec, Rng* rng);

/// Applies the image's resize/crop to a canonical-resolution map and
/// area-averages it down to target_h x target_w. Output is 1 x h x w.
Tensor transform_aligned(const RealMap& map, const CropWindow& window, int target_h,
                         int target_w);

/// Exact area-weighted resampling of the source rectangle
/// [y0, y1) x [x0, x1) (fractional pixel coordinates) onto an out_h x out_w grid.
RealMap resample_area(const RealMap& src, double y0, double x0, double y1, double x1, int out_h,
                      int out_w);

/// Bilinear resize with half-pixel centres and edge clamping.
RealMap resize_bilinear(const RealMap& src, int out_h, int out_w);

/// Maps a source-resolution box into the crop frame, clipped to the crop.
/// Returns nullopt when nothing of the box survives the crop.
struct FrameBox {
  double x_min, y_min, x_max, y_max;
};
std::optional<FrameBox> box_to_crop_frame(const BBoxAnnotation& box, const CropWindow& window);

/// Files that make up a dataset directory.
struct DatasetLayout {
  std::filesystem::path root;
  std::string labels_csv = "labels.csv";
  std::string bbox_csv = "bboxes.csv";
  std::string images_dir = "images";
  std::string classes_file = "classes.txt";
  std::string localization_classes_file = "localization_classes.txt";
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<std::string> localization_classes;
  std::vector<ImageRecord> records;
  std::vector<BBoxAnnotation> boxes;
};

/// Loads a dataset directory. Missing classes file falls back to the NIH list;
/// a missing bbox CSV yields no boxes. Unassigned splits are filled with the
/// 70/10/20 patient-disjoint default using `split_seed`.
Dataset load_dataset(const DatasetLayout& layout, std::uint64_t split_seed = 0);

}  // namespace cxr
