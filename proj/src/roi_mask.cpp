#include "cxr/roi_mask.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cxr/data_pipeline.hpp"
#include "cxr/image_io.hpp"

namespace cxr {

const char* provenance_name(RoiProvenance p) {
  switch (p) {
    case RoiProvenance::segmenter: return "segmenter";
    case RoiProvenance::fallback: return "fallback";
    case RoiProvenance::external: return "external";
  }
  return "segmenter";
}

RealMap to_gray(const Tensor& image) {
  if (image.rank() != 3) throw std::invalid_argument("to_gray: expected CxHxW image");
  const int channels = image.dim(0);
  RealMap gray(image.dim(1), image.dim(2), 0.0);
  for (int c = 0; c < channels; ++c) {
    const double* p = image.slice(c);
    for (std::size_t i = 0; i < gray.size(); ++i) gray.values()[i] += p[i] / channels;
  }
  return gray;
}

BinaryMask binarize(const RealMap& prob, double threshold) {
  BinaryMask out(prob.height(), prob.width(), 0);
  for (std::size_t i = 0; i < prob.size(); ++i) out.values()[i] = prob.values()[i] >= threshold;
  return out;
}

Components label_components(const BinaryMask& mask) {
  Components result;
  result.labels = Grid<int>(mask.height(), mask.width(), 0);
  std::vector<std::pair<int, int>> stack;
  int next = 0;
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      if (!mask(r, c) || result.labels(r, c)) continue;
      Component comp;
      comp.label = ++next;
      comp.min_row = comp.max_row = r;
      comp.min_col = comp.max_col = c;
      double sum_r = 0, sum_c = 0;
      stack.assign(1, {r, c});
      result.labels(r, c) = comp.label;
      while (!stack.empty()) {
        auto [y, x] = stack.back();
        stack.pop_back();
        ++comp.area;
        sum_r += y;
        sum_c += x;
        comp.min_row = std::min(comp.min_row, y);
        comp.max_row = std::max(comp.max_row, y);
        comp.min_col = std::min(comp.min_col, x);
        comp.max_col = std::max(comp.max_col, x);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            int ny = y + dy, nx = x + dx;
            if ((dy || dx) && mask.contains(ny, nx) && mask(ny, nx) && !result.labels(ny, nx)) {
              result.labels(ny, nx) = comp.label;
              stack.emplace_back(ny, nx);
            }
          }
        }
      }
      comp.centroid_row = sum_r / comp.area;
      comp.centroid_col = sum_c / comp.area;
      result.items.push_back(comp);
    }
  }
  return result;
}

BinaryMask keep_largest_islands(const BinaryMask& mask, int k) {
  if (k < 0) throw std::invalid_argument("keep_largest_islands: k must be >= 0");
  Components comps = label_components(mask);
  std::vector<Component> ranked = comps.items;
  std::stable_sort(ranked.begin(), ranked.end(), [](const Component& a, const Component& b) {
    if (a.area != b.area) return a.area > b.area;
    if (a.centroid_row != b.centroid_row) return a.centroid_row < b.centroid_row;
    return a.centroid_col < b.centroid_col;
  });
  std::vector<std::uint8_t> keep(comps.items.size() + 1, 0);
  for (int i = 0; i < std::min<int>(k, static_cast<int>(ranked.size())); ++i) {
    keep[ranked[i].label] = 1;
  }
  BinaryMask out(mask.height(), mask.width(), 0);
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = keep[comps.labels.values()[i]];
  return out;
}

namespace {

long cross(const PixelPoint& o, const PixelPoint& a, const PixelPoint& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

}  // namespace

std::vector<PixelPoint> convex_hull(std::vector<PixelPoint> pts) {
  std::sort(pts.begin(), pts.end(), [](const PixelPoint& a, const PixelPoint& b) {
    return a.x != b.x ? a.x < b.x : a.y < b.y;
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() <= 2) return pts;
  std::vector<PixelPoint> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

BinaryMask convex_hull_fill(const BinaryMask& mask) {
  // Row extremes suffice: every other pixel lies between its row's extremes.
  std::vector<PixelPoint> pts;
  for (int r = 0; r < mask.height(); ++r) {
    int lo = -1, hi = -1;
    for (int c = 0; c < mask.width(); ++c) {
      if (mask(r, c)) {
        if (lo < 0) lo = c;
        hi = c;
      }
    }
    if (lo >= 0) {
      pts.push_back({lo, r});
      if (hi != lo) pts.push_back({hi, r});
    }
  }
  BinaryMask out(mask.height(), mask.width(), 0);
  if (pts.empty()) return out;
  const auto hull = convex_hull(pts);
  long min_x = hull[0].x, max_x = hull[0].x, min_y = hull[0].y, max_y = hull[0].y;
  for (const auto& p : hull) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  for (long y = min_y; y <= max_y; ++y) {
    for (long x = min_x; x <= max_x; ++x) {
      const PixelPoint p{x, y};
      bool inside = true;
      if (hull.size() == 1) {
        inside = p == hull[0];
      } else if (hull.size() == 2) {
        inside = cross(hull[0], hull[1], p) == 0;  // bbox already bounds the segment
      } else {
        for (std::size_t i = 0; i < hull.size() && inside; ++i) {
          inside = cross(hull[i], hull[(i + 1) % hull.size()], p) >= 0;
        }
      }
      if (inside) out(static_cast<int>(y), static_cast<int>(x)) = 1;
    }
  }
  return out;
}

BinaryMask dilate(const BinaryMask& mask, int radius) {
  if (radius < 0) throw std::invalid_argument("dilate: radius must be >= 0");
  if (radius == 0) return mask;
  std::vector<int> half_width(2 * radius + 1);
  for (int dy = -radius; dy <= radius; ++dy) {
    half_width[dy + radius] =
        static_cast<int>(std::floor(std::sqrt(static_cast<double>(radius * radius - dy * dy))));
  }
  BinaryMask out(mask.height(), mask.width(), 0);
  const int h = mask.height(), w = mask.width();
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!mask(r, c)) continue;
      for (int dy = -radius; dy <= radius; ++dy) {
        int y = r + dy;
        if (y < 0 || y >= h) continue;
        int hw = half_width[dy + radius];
        int x0 = std::max(0, c - hw), x1 = std::min(w - 1, c + hw);
        std::fill(&out(y, x0), &out(y, x1) + 1, std::uint8_t{1});
      }
    }
  }
  return out;
}

BinaryMask resize_nearest(const BinaryMask& mask, int height, int width) {
  if (mask.height() == height && mask.width() == width) return mask;
  BinaryMask out(height, width, 0);
  for (int r = 0; r < height; ++r) {
    int sr = std::min(mask.height() - 1, static_cast<int>((r + 0.5) * mask.height() / height));
    for (int c = 0; c < width; ++c) {
      int sc = std::min(mask.width() - 1, static_cast<int>((c + 0.5) * mask.width() / width));
      out(r, c) = mask(sr, sc);
    }
  }
  return out;
}

BinaryMask roi_postprocess(const RealMap& prob, const RoiParams& params) {
  BinaryMask m = binarize(prob, params.threshold);
  m = keep_largest_islands(m, params.keep_islands);
  m = convex_hull_fill(m);
  return dilate(m, params.dilation_radius);
}

namespace {

int otsu_threshold(const RealMap& gray) {
  std::array<double, 256> hist{};
  for (double v : gray) {
    hist[static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))] += 1;
  }
  const double total = static_cast<double>(gray.size());
  double sum_all = 0;
  for (int i = 0; i < 256; ++i) sum_all += i * hist[i];
  double weight_bg = 0, sum_bg = 0, best = -1;
  int best_t = 0;
  for (int t = 0; t < 256; ++t) {
    weight_bg += hist[t];
    if (weight_bg == 0) continue;
    double weight_fg = total - weight_bg;
    if (weight_fg == 0) break;
    sum_bg += t * hist[t];
    double mean_bg = sum_bg / weight_bg;
    double mean_fg = (sum_all - sum_bg) / weight_fg;
    double between = weight_bg * weight_fg * (mean_bg - mean_fg) * (mean_bg - mean_fg);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  return best_t;
}

RealMap downscale_to_edge(const RealMap& gray, int edge) {
  const int short_edge = std::min(gray.height(), gray.width());
  if (short_edge <= edge) return gray;
  int h = static_cast<int>(std::lround(static_cast<double>(gray.height()) * edge / short_edge));
  int w = static_cast<int>(std::lround(static_cast<double>(gray.width()) * edge / short_edge));
  return resample_area(gray, 0, 0, gray.height(), gray.width(), h, w);
}

}  // namespace

RealMap OtsuSegmenter::segment(const Tensor& image, const std::string&) const {
  RealMap gray = to_gray(image);
  const int t = otsu_threshold(gray);
  BinaryMask dark(gray.height(), gray.width(), 0);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    dark.values()[i] = std::lround(std::clamp(gray.values()[i], 0.0, 1.0) * 255.0) <= t;
  }
  Components comps = label_components(dark);
  std::vector<std::uint8_t> touches(comps.items.size() + 1, 0);
  for (const auto& comp : comps.items) {
    touches[comp.label] = comp.min_row == 0 || comp.min_col == 0 ||
                          comp.max_row == dark.height() - 1 || comp.max_col == dark.width() - 1;
  }
  RealMap prob(gray.height(), gray.width(), 0.0);
  for (std::size_t i = 0; i < prob.size(); ++i) {
    int label = comps.labels.values()[i];
    prob.values()[i] = label && !touches[label] ? 1.0 : 0.0;
  }
  return prob;
}

RealMap ExternalSegmenter::segment(const Tensor& image, const std::string& image_id) const {
  Tensor prob = read_image(dir_ / image_id);
  RealMap map = to_gray(prob);
  if (map.height() != image.dim(1) || map.width() != image.dim(2)) {
    map = resize_bilinear(map, image.dim(1), image.dim(2));
  }
  return map;
}

RoiMask generate_roi_mask(const Tensor& image, const std::string& image_id,
                          const Segmenter& segmenter, const RoiParams& params) {
  if (image.rank() != 3) throw std::invalid_argument("generate_roi_mask: expected CxHxW image");
  const int height = image.dim(1), width = image.dim(2);
  RealMap prob;
  try {
    prob = segmenter.segment(image, image_id);
  } catch (const std::exception& e) {
    throw std::runtime_error("segmentation failed for image '" + image_id + "': " + e.what());
  }
  if (prob.height() != height || prob.width() != width) {
    throw std::runtime_error("segmenter output for image '" + image_id +
                             "' does not match the image extent");
  }
  RoiMask roi;
  roi.mask = resize_nearest(roi_postprocess(downscale_to_edge(prob, params.working_edge), params),
                            height, width);
  const std::string name = segmenter.name();
  roi.provenance = name == "fallback"   ? RoiProvenance::fallback
                   : name == "external" ? RoiProvenance::external
                                        : RoiProvenance::segmenter;
  return roi;
}

void save_roi_mask(const std::filesystem::path& path, const BinaryMask& mask) {
  Grid<std::uint8_t> out(mask.height(), mask.width());
  for (std::size_t i = 0; i < mask.size(); ++i) out.values()[i] = mask.values()[i] ? 255 : 0;
  write_gray8(path, out);
}

BinaryMask load_roi_mask(const std::filesystem::path& path) {
  Grid<std::uint16_t> raw = read_gray16(path);
  BinaryMask mask(raw.height(), raw.width(), 0);
  for (std::size_t i = 0; i < raw.size(); ++i) mask.values()[i] = raw.values()[i] > 127 * 257;
  return mask;
}

}  // namespace cxr
