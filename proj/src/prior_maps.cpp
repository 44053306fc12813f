#include "cxr/prior_maps.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "cxr/csv.hpp"
#include "cxr/hash.hpp"
#include "cxr/image_io.hpp"

namespace cxr {

namespace {

constexpr int kPriorFormatVersion = 1;
constexpr double kBoundsSlack = 1e-6;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string manifest_checksum(nlohmann::json manifest) {
  manifest.erase("checksum");
  return fnv1a_hex(manifest.dump());
}

}  // namespace

BinaryMask rasterize_bbox(const BBoxAnnotation& box, int height, int width) {
  if (box.x < -kBoundsSlack || box.y < -kBoundsSlack || !(box.w > 0) || !(box.h > 0) ||
      box.x + box.w > width + kBoundsSlack || box.y + box.h > height + kBoundsSlack) {
    std::ostringstream msg;
    msg << "rasterize_bbox: box (" << box.x << "," << box.y << "," << box.w << "," << box.h
        << ") of image '" << box.image_id << "' lies outside the " << height << "x" << width
        << " canvas";
    throw std::out_of_range(msg.str());
  }
  BinaryMask mask(height, width, 0);
  // Pixel (r, c) is inside when its centre lies in [x, x+w) x [y, y+h).
  const int c0 = std::max(0, static_cast<int>(std::ceil(box.x - 0.5)));
  const int c1 = std::min(width, static_cast<int>(std::ceil(box.x + box.w - 0.5)));
  const int r0 = std::max(0, static_cast<int>(std::ceil(box.y - 0.5)));
  const int r1 = std::min(height, static_cast<int>(std::ceil(box.y + box.h - 0.5)));
  for (int r = r0; r < r1; ++r) {
    for (int c = c0; c < c1; ++c) mask(r, c) = 1;
  }
  return mask;
}

CountMap accumulate_raw_map(std::span<const BinaryMask> masks, int height, int width) {
  CountMap raw(height, width, 0);
  for (std::size_t k = 0; k < masks.size(); ++k) {
    if (masks[k].height() != height || masks[k].width() != width) {
      throw std::invalid_argument("accumulate_raw_map: mask " + std::to_string(k) + " is " +
                                  std::to_string(masks[k].height()) + "x" +
                                  std::to_string(masks[k].width()) + ", expected " +
                                  std::to_string(height) + "x" + std::to_string(width));
    }
    for (std::size_t i = 0; i < raw.size(); ++i) raw.values()[i] += masks[k].values()[i];
  }
  return raw;
}

RealMap normalize_map(const CountMap& raw) {
  RealMap map(raw.height(), raw.width(), 1.0);
  const std::int32_t peak = raw.empty() ? 0 : *std::max_element(raw.begin(), raw.end());
  if (peak <= 0) return map;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    map.values()[i] = static_cast<double>(raw.values()[i]) / peak;
  }
  return map;
}

PriorMapSet build_prior_set(std::span<const BBoxAnnotation> boxes,
                            const std::vector<std::string>& class_names, int height, int width) {
  if (height <= 0 || width <= 0) throw std::invalid_argument("build_prior_set: empty canvas");
  PriorMapSet set;
  set.class_names = class_names;
  set.height = height;
  set.width = width;
  set.maps.resize(class_names.size());
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    set.maps[c].class_id = static_cast<int>(c);
    set.maps[c].raw = CountMap(height, width, 0);
  }
  for (const auto& box : boxes) {
    if (box.class_id < 0 || box.class_id >= static_cast<int>(class_names.size())) {
      throw std::out_of_range("build_prior_set: class id " + std::to_string(box.class_id) +
                              " outside the class list");
    }
    BinaryMask mask = rasterize_bbox(box, height, width);
    auto& pm = set.maps[box.class_id];
    for (std::size_t i = 0; i < mask.size(); ++i) pm.raw.values()[i] += mask.values()[i];
    ++pm.n_images;
  }
  for (auto& pm : set.maps) pm.map = normalize_map(pm.raw);
  return set;
}

std::string prior_file_name(const std::string& class_name) {
  std::string name = class_name;
  for (auto& ch : name) {
    if (ch == '/' || ch == '\\' || ch == ':') ch = '_';
  }
  return name + ".png";
}

void save_prior_set(const PriorMapSet& set, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format_version"] = kPriorFormatVersion;
  manifest["classes"] = set.class_names;
  manifest["resolution"] = {set.height, set.width};
  nlohmann::json counts = nlohmann::json::array(), maxima = nlohmann::json::array(),
                 files = nlohmann::json::array();
  for (std::size_t c = 0; c < set.maps.size(); ++c) {
    const auto& pm = set.maps[c];
    Grid<std::uint16_t> q(set.height, set.width);
    for (std::size_t i = 0; i < q.size(); ++i) {
      q.values()[i] = static_cast<std::uint16_t>(
          std::lround(std::clamp(pm.map.values()[i], 0.0, 1.0) * 65535.0));
    }
    const auto file = prior_file_name(set.class_names[c]);
    write_gray16(dir / file, q);
    const std::int32_t peak =
        pm.raw.empty() ? 0 : *std::max_element(pm.raw.begin(), pm.raw.end());
    counts.push_back(pm.n_images);
    maxima.push_back(peak);
    files.push_back({{"file", file}, {"fnv1a64", fnv1a_hex(read_file(dir / file))}});
  }
  manifest["counts"] = counts;
  manifest["raw_max"] = maxima;
  manifest["files"] = files;
  manifest["checksum"] = manifest_checksum(manifest);
  const auto tmp = dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << manifest.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, dir / "manifest.json");
}

PriorMapSet load_prior_set(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(manifest_path.string() + ": malformed manifest: " + e.what());
  }
  if (!manifest.contains("checksum") || manifest["checksum"] != manifest_checksum(manifest)) {
    throw std::runtime_error(manifest_path.string() + ": manifest checksum mismatch");
  }
  if (manifest.value("format_version", 0) != kPriorFormatVersion) {
    throw std::runtime_error(manifest_path.string() + ": unsupported format version");
  }
  PriorMapSet set;
  set.class_names = manifest.at("classes").get<std::vector<std::string>>();
  set.height = manifest.at("resolution").at(0).get<int>();
  set.width = manifest.at("resolution").at(1).get<int>();
  const auto& counts = manifest.at("counts");
  const auto& maxima = manifest.at("raw_max");
  const auto& files = manifest.at("files");
  if (counts.size() != set.class_names.size() || maxima.size() != set.class_names.size() ||
      files.size() != set.class_names.size()) {
    throw std::runtime_error(manifest_path.string() + ": per-class arrays disagree in length");
  }
  for (std::size_t c = 0; c < set.class_names.size(); ++c) {
    const auto& name = set.class_names[c];
    const auto path = dir / files[c].at("file").get<std::string>();
    if (!std::filesystem::exists(path)) {
      throw std::runtime_error("prior map for class '" + name + "' is missing: " + path.string());
    }
    if (fnv1a_hex(read_file(path)) != files[c].at("fnv1a64").get<std::string>()) {
      throw std::runtime_error("prior map for class '" + name + "' fails its checksum");
    }
    Grid<std::uint16_t> q = read_gray16(path);
    if (q.height() != set.height || q.width() != set.width) {
      throw std::runtime_error("prior map for class '" + name + "' has the wrong resolution");
    }
    PriorMap pm;
    pm.class_id = static_cast<int>(c);
    pm.n_images = counts[c].get<int>();
    const int peak = maxima[c].get<int>();
    pm.raw = CountMap(set.height, set.width, 0);
    if (peak > 0) {
      for (std::size_t i = 0; i < q.size(); ++i) {
        pm.raw.values()[i] =
            static_cast<std::int32_t>(std::lround(q.values()[i] * static_cast<double>(peak) / 65535.0));
      }
      pm.map = normalize_map(pm.raw);
    } else {
      pm.map = RealMap(set.height, set.width);
      for (std::size_t i = 0; i < q.size(); ++i) pm.map.values()[i] = q.values()[i] / 65535.0;
    }
    set.maps.push_back(std::move(pm));
  }
  return set;
}

PriorMapSet remap_prior_set(const PriorMapSet& source,
                            const std::vector<std::string>& target_classes,
                            const std::map<std::string, std::string>& mapping) {
  PriorMapSet out;
  out.class_names = target_classes;
  out.height = source.height;
  out.width = source.width;
  for (std::size_t c = 0; c < target_classes.size(); ++c) {
    PriorMap pm;
    auto it = mapping.find(target_classes[c]);
    int src = it == mapping.end() ? -1 : class_index(source.class_names, it->second);
    if (src >= 0) {
      pm = source.maps[src];
    } else {
      pm.raw = CountMap(source.height, source.width, 0);
      pm.map = RealMap(source.height, source.width, 1.0);
    }
    pm.class_id = static_cast<int>(c);
    out.maps.push_back(std::move(pm));
  }
  return out;
}

std::map<std::string, std::string> load_class_mapping(const std::filesystem::path& path) {
  CsvTable t = read_csv(path);
  const auto tcol = t.require_column("target", path);
  const auto scol = t.require_column("source", path);
  std::map<std::string, std::string> mapping;
  for (const auto& row : t.rows) {
    if (row.size() <= std::max(tcol, scol)) continue;
    mapping[trim(row[tcol])] = trim(row[scol]);
  }
  return mapping;
}

}  // namespace cxr
