#include "cxr/data_pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "cxr/csv.hpp"
#include "cxr/image_io.hpp"

namespace cxr {

const char* split_name(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: return "unassigned";
  }
  return "unassigned";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  if (name.empty() || name == "unassigned") return Split::unassigned;
  throw std::invalid_argument("unknown split '" + name + "'");
}

const std::vector<std::string>& nih_class_names() {
  static const std::vector<std::string> names = {
      "Atelectasis", "Cardiomegaly", "Effusion",         "Infiltration",       "Mass",
      "Nodule",      "Pneumonia",    "Pneumothorax",     "Consolidation",      "Edema",
      "Emphysema",   "Fibrosis",     "Pleural_Thickening", "Hernia",           "No Finding"};
  return names;
}

const std::vector<std::string>& nih_localization_classes() {
  // NIH's bbox list spells Infiltration as "Infiltrate"; it is normalised on load.
  static const std::vector<std::string> names = {"Atelectasis", "Cardiomegaly", "Effusion",
                                                 "Infiltration", "Mass",        "Nodule",
                                                 "Pneumonia",    "Pneumothorax"};
  return names;
}

std::vector<std::string> load_class_names(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open class list: " + path.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    auto name = trim(line);
    if (name.empty()) continue;
    if (std::find(names.begin(), names.end(), name) != names.end()) {
      throw std::runtime_error(path.string() + ": duplicate class '" + name + "'");
    }
    names.push_back(name);
  }
  if (names.empty()) throw std::runtime_error("class list is empty: " + path.string());
  return names;
}

void save_class_names(const std::filesystem::path& path, const std::vector<std::string>& names) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write class list: " + path.string());
  for (const auto& n : names) out << n << "\n";
}

int class_index(const std::vector<std::string>& class_names, const std::string& name) {
  auto it = std::find(class_names.begin(), class_names.end(), name);
  if (it != class_names.end()) return static_cast<int>(it - class_names.begin());
  if (name == "Infiltrate") return class_index(class_names, "Infiltration");
  return -1;
}

namespace {

std::string row_context(const std::filesystem::path& path, const CsvTable& t, std::size_t row) {
  return path.string() + " line " + std::to_string(t.lines[row]);
}

double parse_number(const std::string& text, const std::string& context) {
  auto s = trim(text);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw std::runtime_error(context + ": not a number '" + s + "'");
  }
  return value;
}

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

std::vector<ImageRecord> load_label_index(const std::filesystem::path& csv_path,
                                          const std::vector<std::string>& class_names,
                                          const std::filesystem::path& images_dir) {
  CsvTable table = read_csv(csv_path);
  const auto id_col = table.require_column("Image Index", csv_path);
  const auto label_col = table.require_column("Finding Labels", csv_path);
  const auto patient_col = table.column("Patient ID");
  const auto split_col = table.column("Split");

  std::vector<ImageRecord> records;
  records.reserve(table.rows.size());
  std::set<std::string> seen;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    auto field = [&](std::size_t col) -> std::string {
      return col < row.size() ? trim(row[col]) : std::string();
    };
    ImageRecord rec;
    rec.image_id = field(id_col);
    if (rec.image_id.empty()) {
      throw std::runtime_error(row_context(csv_path, table, r) + ": empty Image Index");
    }
    if (!seen.insert(rec.image_id).second) {
      throw std::runtime_error(row_context(csv_path, table, r) + ": duplicate image '" +
                               rec.image_id + "'");
    }
    rec.path = images_dir.empty() ? std::filesystem::path(rec.image_id) : images_dir / rec.image_id;
    rec.labels.assign(class_names.size(), 0);
    std::string labels = field(label_col);
    std::size_t start = 0;
    while (start <= labels.size() && !labels.empty()) {
      auto bar = labels.find('|', start);
      auto token = trim(labels.substr(start, bar == std::string::npos ? std::string::npos
                                                                      : bar - start));
      const int c = token.empty() ? -1 : class_index(class_names, token);
      if (!token.empty() && !(c < 0 && token == "No Finding")) {  // NIH's empty label
        if (c < 0) {
          throw std::runtime_error(row_context(csv_path, table, r) + " (image " + rec.image_id +
                                   "): unknown class '" + token + "'");
        }
        rec.labels[c] = 1;
      }
      if (bar == std::string::npos) break;
      start = bar + 1;
    }
    if (patient_col) rec.patient_id = field(*patient_col);
    if (split_col) {
      try {
        rec.split = parse_split(field(*split_col));
      } catch (const std::invalid_argument& e) {
        throw std::runtime_error(row_context(csv_path, table, r) + ": " + e.what());
      }
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<BBoxAnnotation> load_bbox_index(const std::filesystem::path& csv_path,
                                            const std::vector<std::string>& class_names,
                                            const std::vector<std::string>& localization_classes) {
  CsvTable table = read_csv(csv_path);
  const auto id_col = table.require_column("Image Index", csv_path);
  const auto label_col = table.require_column("Finding Label", csv_path);
  const std::size_t first_num = label_col + 1;

  std::vector<BBoxAnnotation> boxes;
  boxes.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto ctx = row_context(csv_path, table, r);
    if (row.size() < first_num + 4) throw std::runtime_error(ctx + ": expected x, y, w, h");
    BBoxAnnotation box;
    box.image_id = trim(row[id_col]);
    const auto name = trim(row[label_col]);
    box.class_id = class_index(class_names, name);
    if (box.class_id < 0) throw std::runtime_error(ctx + ": unknown class '" + name + "'");
    box.x = parse_number(row[first_num], ctx);
    box.y = parse_number(row[first_num + 1], ctx);
    box.w = parse_number(row[first_num + 2], ctx);
    box.h = parse_number(row[first_num + 3], ctx);
    if (!(box.w > 0) || !(box.h > 0)) {
      throw std::runtime_error(ctx + ": box extent must be positive (w=" + format_number(box.w) +
                               ", h=" + format_number(box.h) + ")");
    }
    if (box.x < 0 || box.y < 0) throw std::runtime_error(ctx + ": negative box origin");
    box.flagged = class_index(localization_classes, class_names[box.class_id]) < 0;
    boxes.push_back(std::move(box));
  }
  return boxes;
}

void write_label_csv(const std::filesystem::path& path, const std::vector<ImageRecord>& records,
                     const std::vector<std::string>& class_names) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "Image Index,Finding Labels,Patient ID,Split\n";
  const int no_finding = class_index(class_names, "No Finding");
  for (const auto& rec : records) {
    std::string labels;
    for (std::size_t c = 0; c < rec.labels.size(); ++c) {
      if (!rec.labels[c]) continue;
      if (!labels.empty()) labels += '|';
      labels += class_names[c];
    }
    if (labels.empty() && no_finding >= 0) labels = class_names[no_finding];
    out << csv_escape(rec.image_id) << ',' << csv_escape(labels) << ','
        << csv_escape(rec.patient_id) << ',' << split_name(rec.split) << '\n';
  }
}

void write_bbox_csv(const std::filesystem::path& path, const std::vector<BBoxAnnotation>& boxes,
                    const std::vector<std::string>& class_names) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "Image Index,Finding Label,Bbox [x,y,w,h]\n";
  for (const auto& b : boxes) {
    out << csv_escape(b.image_id) << ',' << csv_escape(class_names.at(b.class_id)) << ','
        << format_number(b.x) << ',' << format_number(b.y) << ',' << format_number(b.w) << ','
        << format_number(b.h) << '\n';
  }
}

void assign_splits(std::vector<ImageRecord>& records, std::array<double, 3> fractions,
                   std::uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (!(total > 0) || fractions[0] < 0 || fractions[1] < 0 || fractions[2] < 0) {
    throw std::invalid_argument("assign_splits: invalid fractions");
  }
  // Group by patient; records without a patient id form singleton groups.
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& pid = records[i].patient_id;
    groups[pid.empty() ? "\x01" + records[i].image_id : pid].push_back(i);
  }
  std::vector<const std::vector<std::size_t>*> order;
  order.reserve(groups.size());
  for (const auto& [key, members] : groups) order.push_back(&members);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const double n = static_cast<double>(records.size());
  const double train_end = n * fractions[0] / total;
  const double val_end = n * (fractions[0] + fractions[1]) / total;
  std::size_t placed = 0;
  for (const auto* members : order) {
    Split s = placed < train_end ? Split::train : placed < val_end ? Split::val : Split::test;
    for (auto i : *members) records[i].split = s;
    placed += members->size();
  }
}

void PreprocessSpec::validate() const {
  if (crop_edge <= 0 || resize_edge <= 0 || crop_edge > resize_edge) {
    throw std::invalid_argument("preprocess: need 0 < crop_edge <= resize_edge");
  }
  for (double s : channel_std) {
    if (!(s > 0)) throw std::invalid_argument("preprocess: channel_std must be positive");
  }
}

CropWindow make_crop_window(int source_height, int source_width, const PreprocessSpec& spec,
                            Rng* rng) {
  spec.validate();
  if (source_height <= 0 || source_width <= 0) {
    throw std::invalid_argument("make_crop_window: empty image");
  }
  CropWindow win;
  win.source_height = source_height;
  win.source_width = source_width;
  const double short_edge = std::min(source_height, source_width);
  win.resized_height = static_cast<int>(std::lround(source_height * spec.resize_edge / short_edge));
  win.resized_width = static_cast<int>(std::lround(source_width * spec.resize_edge / short_edge));
  win.size = spec.crop_edge;
  const int slack_y = win.resized_height - spec.crop_edge;
  const int slack_x = win.resized_width - spec.crop_edge;
  if (spec.crop_mode == CropMode::random) {
    if (!rng) throw std::invalid_argument("random crop requires an RNG");
    win.y = std::uniform_int_distribution<int>(0, slack_y)(*rng);
    win.x = std::uniform_int_distribution<int>(0, slack_x)(*rng);
  } else {
    win.y = slack_y / 2;
    win.x = slack_x / 2;
  }
  return win;
}

namespace {

struct AxisWeights {
  std::vector<int> first;                  // first source index per output
  std::vector<std::vector<double>> taps;   // normalised overlap weights
};

AxisWeights area_weights(double a0, double a1, int n_out, int n_src) {
  AxisWeights aw;
  aw.first.resize(n_out);
  aw.taps.resize(n_out);
  const double step = (a1 - a0) / n_out;
  for (int o = 0; o < n_out; ++o) {
    double lo = std::clamp(a0 + o * step, 0.0, static_cast<double>(n_src));
    double hi = std::clamp(a0 + (o + 1) * step, 0.0, static_cast<double>(n_src));
    int p0 = static_cast<int>(std::floor(lo));
    int p1 = static_cast<int>(std::ceil(hi));
    p1 = std::max(p1, p0 + 1);
    p0 = std::min(p0, n_src - 1);
    p1 = std::min(p1, n_src);
    aw.first[o] = p0;
    double total = 0;
    for (int p = p0; p < p1; ++p) {
      double w = std::min<double>(hi, p + 1) - std::max<double>(lo, p);
      w = std::max(w, 0.0);
      aw.taps[o].push_back(w);
      total += w;
    }
    if (total <= 0) {
      // Degenerate (zero-width) interval: sample the nearest pixel.
      aw.taps[o].assign(p1 - p0, 0.0);
      aw.taps[o][0] = 1.0;
      total = 1.0;
    }
    for (auto& w : aw.taps[o]) w /= total;
  }
  return aw;
}

}  // namespace

RealMap resample_area(const RealMap& src, double y0, double x0, double y1, double x1, int out_h,
                      int out_w) {
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resample_area: empty target");
  if (src.empty()) throw std::invalid_argument("resample_area: empty source");
  if (!(y1 > y0) || !(x1 > x0)) throw std::invalid_argument("resample_area: empty rectangle");
  const AxisWeights wy = area_weights(y0, y1, out_h, src.height());
  const AxisWeights wx = area_weights(x0, x1, out_w, src.width());

  // Horizontal pass over the rows the vertical pass will touch.
  const int row_lo = wy.first.front();
  const int row_hi = wy.first.back() + static_cast<int>(wy.taps.back().size());
  RealMap tmp(row_hi - row_lo, out_w);
  for (int r = row_lo; r < row_hi; ++r) {
    for (int o = 0; o < out_w; ++o) {
      double acc = 0;
      const auto& taps = wx.taps[o];
      for (std::size_t t = 0; t < taps.size(); ++t) acc += taps[t] * src(r, wx.first[o] + t);
      tmp(r - row_lo, o) = acc;
    }
  }
  RealMap out(out_h, out_w);
  for (int o = 0; o < out_h; ++o) {
    const auto& taps = wy.taps[o];
    for (int c = 0; c < out_w; ++c) {
      double acc = 0;
      for (std::size_t t = 0; t < taps.size(); ++t) acc += taps[t] * tmp(wy.first[o] + t - row_lo, c);
      out(o, c) = acc;
    }
  }
  return out;
}

RealMap resize_bilinear(const RealMap& src, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0 || src.empty()) {
    throw std::invalid_argument("resize_bilinear: empty extent");
  }
  auto coord = [](int o, int n_in, int n_out, int& i0, int& i1, double& t) {
    double s = (o + 0.5) * n_in / n_out - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(n_in - 1));
    i0 = static_cast<int>(std::floor(s));
    i1 = std::min(i0 + 1, n_in - 1);
    t = s - i0;
  };
  RealMap out(out_h, out_w);
  for (int r = 0; r < out_h; ++r) {
    int r0, r1;
    double tr;
    coord(r, src.height(), out_h, r0, r1, tr);
    for (int c = 0; c < out_w; ++c) {
      int c0, c1;
      double tc;
      coord(c, src.width(), out_w, c0, c1, tc);
      double top = src(r0, c0) * (1 - tc) + src(r0, c1) * tc;
      double bottom = src(r1, c0) * (1 - tc) + src(r1, c1) * tc;
      out(r, c) = top * (1 - tr) + bottom * tr;
    }
  }
  return out;
}

namespace {

RealMap channel_plane(const Tensor& image, int c) {
  RealMap plane(image.dim(1), image.dim(2));
  const double* p = image.slice(c);
  std::copy(p, p + plane.size(), plane.values().begin());
  return plane;
}

/// Crop `window` out of the resized frame of one channel.
RealMap crop_resized(const RealMap& plane, const CropWindow& win) {
  const double sy = static_cast<double>(win.source_height) / win.resized_height;
  const double sx = static_cast<double>(win.source_width) / win.resized_width;
  if (sy >= 1.0 && sx >= 1.0) {
    return resample_area(plane, win.y * sy, win.x * sx, (win.y + win.size) * sy,
                         (win.x + win.size) * sx, win.size, win.size);
  }
  RealMap resized = resize_bilinear(plane, win.resized_height, win.resized_width);
  RealMap out(win.size, win.size);
  for (int r = 0; r < win.size; ++r) {
    for (int c = 0; c < win.size; ++c) out(r, c) = resized(win.y + r, win.x + c);
  }
  return out;
}

}  // namespace

std::pair<Tensor, CropWindow> preprocess_image(const Tensor& image, const PreprocessSpec& spec,
                                               Rng* rng) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw std::invalid_argument("preprocess_image: expected 1xHxW or 3xHxW, got " +
                                to_string(image.shape()));
  }
  CropWindow win = make_crop_window(image.dim(1), image.dim(2), spec, rng);
  Tensor out({3, win.size, win.size});
  RealMap gray;
  for (int c = 0; c < 3; ++c) {
    RealMap cropped;
    if (image.dim(0) == 1) {
      if (c == 0) gray = crop_resized(channel_plane(image, 0), win);
      cropped = gray;
    } else {
      cropped = crop_resized(channel_plane(image, c), win);
    }
    double* dst = out.slice(c);
    for (std::size_t i = 0; i < cropped.size(); ++i) {
      dst[i] = (cropped.values()[i] - spec.channel_mean[c]) / spec.channel_std[c];
    }
  }
  return {std::move(out), win};
}

std::pair<Tensor, CropWindow> preprocess_image(const std::filesystem::path& path,
                                               const PreprocessSpec& spec, Rng* rng) {
  return preprocess_image(read_image(path), spec, rng);
}

Tensor transform_aligned(const RealMap& map, const CropWindow& window, int target_h,
                         int target_w) {
  if (map.height() != window.source_height || map.width() != window.source_width) {
    throw std::invalid_argument(
        "transform_aligned: map resolution " + std::to_string(map.height()) + "x" +
        std::to_string(map.width()) + " does not match image resolution " +
        std::to_string(window.source_height) + "x" + std::to_string(window.source_width));
  }
  const double sy = static_cast<double>(window.source_height) / window.resized_height;
  const double sx = static_cast<double>(window.source_width) / window.resized_width;
  RealMap out = resample_area(map, window.y * sy, window.x * sx, (window.y + window.size) * sy,
                              (window.x + window.size) * sx, target_h, target_w);
  for (auto& v : out) v = std::clamp(v, 0.0, 1.0);
  return to_tensor(out);
}

std::optional<FrameBox> box_to_crop_frame(const BBoxAnnotation& box, const CropWindow& window) {
  const double sy = static_cast<double>(window.resized_height) / window.source_height;
  const double sx = static_cast<double>(window.resized_width) / window.source_width;
  const double size = window.size;
  FrameBox fb;
  fb.x_min = std::clamp(box.x * sx - window.x, 0.0, size);
  fb.x_max = std::clamp((box.x + box.w) * sx - window.x, 0.0, size);
  fb.y_min = std::clamp(box.y * sy - window.y, 0.0, size);
  fb.y_max = std::clamp((box.y + box.h) * sy - window.y, 0.0, size);
  if (!(fb.x_max > fb.x_min) || !(fb.y_max > fb.y_min)) return std::nullopt;
  return fb;
}

Dataset load_dataset(const DatasetLayout& layout, std::uint64_t split_seed) {
  Dataset ds;
  const auto classes_path = layout.root / layout.classes_file;
  ds.class_names = std::filesystem::exists(classes_path) ? load_class_names(classes_path)
                                                         : nih_class_names();
  const auto loc_path = layout.root / layout.localization_classes_file;
  if (std::filesystem::exists(loc_path)) {
    ds.localization_classes = load_class_names(loc_path);
  } else {
    for (const auto& name : nih_localization_classes()) {
      if (class_index(ds.class_names, name) >= 0) ds.localization_classes.push_back(name);
    }
  }
  ds.records = load_label_index(layout.root / layout.labels_csv, ds.class_names,
                                layout.root / layout.images_dir);
  const auto bbox_path = layout.root / layout.bbox_csv;
  if (std::filesystem::exists(bbox_path)) {
    ds.boxes = load_bbox_index(bbox_path, ds.class_names, ds.localization_classes);
  }
  bool any_unassigned = std::any_of(ds.records.begin(), ds.records.end(), [](const auto& r) {
    return r.split == Split::unassigned;
  });
  if (any_unassigned) assign_splits(ds.records, {0.7, 0.1, 0.2}, split_seed);
  return ds;
}

}  // namespace cxr
