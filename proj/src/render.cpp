#include "cxr/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace cxr {

std::array<std::uint8_t, 3> heat_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto ch = [](double v) {
    return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
  };
  return {ch(1.5 - std::abs(4.0 * t - 3.0)), ch(1.5 - std::abs(4.0 * t - 2.0)),
          ch(1.5 - std::abs(4.0 * t - 1.0))};
}

RgbImage crop_to_rgb(const Tensor& image, const PreprocessSpec& spec) {
  const int h = image.dim(1), w = image.dim(2);
  RgbImage out(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double v = image.at(0, r, c) * spec.channel_std[0] + spec.channel_mean[0];
      const auto g = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
      std::uint8_t* px = out.at(r, c);
      px[0] = px[1] = px[2] = g;
    }
  }
  return out;
}

void blend_heatmap(RgbImage& canvas, const Grid<std::uint8_t>& heatmap, double alpha) {
  for (int r = 0; r < canvas.height; ++r) {
    for (int c = 0; c < canvas.width; ++c) {
      const auto color = heat_color(heatmap(r, c) / 255.0);
      std::uint8_t* px = canvas.at(r, c);
      for (int k = 0; k < 3; ++k) {
        px[k] = static_cast<std::uint8_t>(std::lround((1 - alpha) * px[k] + alpha * color[k]));
      }
    }
  }
}

void draw_box(RgbImage& canvas, const BBox& box, bool dashed, std::array<std::uint8_t, 3> color) {
  const int x0 = std::clamp(static_cast<int>(std::floor(box.x_min)), 0, canvas.width - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(box.y_min)), 0, canvas.height - 1);
  const int x1 = std::clamp(static_cast<int>(std::ceil(box.x_max)) - 1, 0, canvas.width - 1);
  const int y1 = std::clamp(static_cast<int>(std::ceil(box.y_max)) - 1, 0, canvas.height - 1);
  auto plot = [&](int r, int c, int along) {
    if (dashed && (along / 4) % 2 == 1) return;
    std::uint8_t* px = canvas.at(r, c);
    px[0] = color[0];
    px[1] = color[1];
    px[2] = color[2];
  };
  for (int c = x0; c <= x1; ++c) {
    plot(y0, c, c - x0);
    plot(y1, c, c - x0);
  }
  for (int r = y0; r <= y1; ++r) {
    plot(r, x0, r - y0);
    plot(r, x1, r - y0);
  }
}

std::vector<std::filesystem::path> render_overlays(Model& model, const SampleSource& source,
                                                   const ImageRecord& record,
                                                   const std::vector<std::string>& class_names,
                                                   const std::vector<BBoxAnnotation>& boxes,
                                                   const std::filesystem::path& out_dir,
                                                   const OverlayStyle& style) {
  const std::vector<ImageRecord> one{record};
  const CamBatch cams = compute_cams(model, source, one, {0});
  const Sample sample = load_sample(source, record, nullptr);
  const RgbImage base = crop_to_rgb(sample.image, source.preprocess);
  const int edge = base.height;
  const std::string stem = record.path.stem().string();
  std::filesystem::create_directories(out_dir);

  std::vector<std::filesystem::path> written;
  for (int c = 0; c < static_cast<int>(class_names.size()); ++c) {
    const double p = cams.probabilities.at(0, c);
    if (p < style.positive_threshold) continue;
    const Tensor& maps = cams.heatmaps[c];
    RealMap heat(maps.dim(1), maps.dim(2));
    std::copy(maps.slice(0), maps.slice(0) + heat.size(), heat.values().begin());
    const auto heat8 = normalize_heatmap(heat, edge);

    RgbImage canvas = base;
    blend_heatmap(canvas, heat8, style.heatmap_alpha);
    for (const auto& b : boxes) {
      if (b.image_id != record.image_id || b.class_id != c) continue;
      if (auto fb = box_to_crop_frame(b, cams.windows[0])) {
        draw_box(canvas, {fb->x_min, fb->y_min, fb->x_max, fb->y_max}, false, {0, 255, 0});
      }
    }
    for (const BBox& b : extract_boxes(heatmap_to_mask(heat8, style.heatmap_threshold))) {
      draw_box(canvas, b, true, {255, 0, 0});
    }
    char caption[256];
    std::snprintf(caption, sizeof(caption), "%s: %s p=%.3f (green: ground truth, red dashed: predicted)",
                  record.image_id.c_str(), class_names[c].c_str(), p);
    const auto path = out_dir / (stem + "_" + class_names[c] + ".png");
    write_rgb8(path, canvas, {{"Caption", caption}});
    written.push_back(path);
  }
  if (written.empty()) {
    const auto path = out_dir / (stem + "_none.png");
    write_rgb8(path, base, {{"Caption", record.image_id + ": no positive predictions"}});
    written.push_back(path);
  }
  return written;
}

}  // namespace cxr
