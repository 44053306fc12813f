#include "cxr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace cxr {

// -------------------------------------------------------------------- AUC

std::optional<double> try_roc_auc(std::span<const double> scores,
                                  std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("roc_auc: " + std::to_string(scores.size()) + " scores but " +
                                std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  // Mann-Whitney U from mid-ranks of tied groups.
  double rank_sum = 0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        rank_sum += mid_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double u = rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  auto auc = try_roc_auc(scores, labels);
  if (!auc) throw std::domain_error("roc_auc: labels must contain both classes");
  return *auc;
}

std::optional<double> mean_defined(const std::vector<std::optional<double>>& values) {
  double s = 0;
  int n = 0;
  for (const auto& v : values) {
    if (v) {
      s += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / n;
}

// ---------------------------------------------------------------- heatmap

Grid<std::uint8_t> normalize_heatmap(const RealMap& heatmap, int edge) {
  for (double v : heatmap) {
    if (!std::isfinite(v)) throw std::invalid_argument("normalize_heatmap: non-finite value");
  }
  const RealMap up = resize_bilinear(heatmap, edge, edge);
  Grid<std::uint8_t> out(edge, edge, 0);
  if (up.empty()) return out;
  const auto [lo, hi] = std::minmax_element(up.begin(), up.end());
  const double min = *lo, range = *hi - *lo;
  if (!(range > 0)) return out;
  for (std::size_t i = 0; i < up.size(); ++i) {
    out.values()[i] = static_cast<std::uint8_t>(std::lround(255.0 * (up.values()[i] - min) / range));
  }
  return out;
}

BinaryMask heatmap_to_mask(const Grid<std::uint8_t>& map, int threshold) {
  BinaryMask out(map.height(), map.width(), 0);
  for (std::size_t i = 0; i < map.size(); ++i) out.values()[i] = map.values()[i] > threshold;
  return out;
}

std::vector<BBox> predict_boxes(const RealMap& heatmap, int edge, int threshold) {
  return extract_boxes(heatmap_to_mask(normalize_heatmap(heatmap, edge), threshold));
}

// -------------------------------------------------------------------- IoU

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

bool case_correct(const LocalizationCase& c, double threshold) {
  if (c.truth.empty()) return c.probability < 0.5;
  for (const auto& p : c.predicted) {
    for (const auto& t : c.truth) {
      if (iou(p, t) > threshold) return true;
    }
  }
  return false;
}

LocalizationResult localization_score(std::span<const LocalizationCase> cases, int n_classes,
                                      double threshold) {
  LocalizationResult r;
  r.cases.assign(n_classes, 0);
  r.correct.assign(n_classes, 0);
  for (const auto& c : cases) {
    if (c.class_id < 0 || c.class_id >= n_classes) {
      throw std::out_of_range("localization case has class " + std::to_string(c.class_id));
    }
    ++r.cases[c.class_id];
    r.correct[c.class_id] += case_correct(c, threshold);
  }
  r.accuracy.resize(n_classes);
  for (int k = 0; k < n_classes; ++k) {
    r.accuracy[k] = r.cases[k] ? static_cast<double>(r.correct[k]) / r.cases[k]
                               : std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

// ------------------------------------------------------------- inference

Predictions predict(Model& model, const SampleSource& source,
                    const std::vector<ImageRecord>& records, int batch_size) {
  const int k = model.config().n_classes;
  const int n = static_cast<int>(records.size());
  Predictions p;
  p.probabilities = Tensor({n, k});
  p.labels.assign(k, std::vector<std::uint8_t>(n));
  for (int start = 0; start < n; start += batch_size) {
    std::vector<std::size_t> idx;
    for (int i = start; i < std::min(n, start + batch_size); ++i) idx.push_back(i);
    const ModelInput in = load_batch(source, records, idx, std::nullopt);
    const Tensor probs = nn::sigmoid(model.forward(in, false, nullptr).logits);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (int c = 0; c < k; ++c) p.probabilities.at(idx[i], c) = probs.at(i, c);
    }
  }
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(records[i].labels.size()) != k) {
      throw std::invalid_argument("record " + records[i].image_id + " has " +
                                  std::to_string(records[i].labels.size()) + " labels, model has " +
                                  std::to_string(k) + " classes");
    }
    for (int c = 0; c < k; ++c) p.labels[c][i] = records[i].labels[c];
  }
  return p;
}

std::vector<std::optional<double>> per_class_auc(const Predictions& p) {
  const int n = p.probabilities.dim(0), k = p.probabilities.dim(1);
  std::vector<std::optional<double>> out(k);
  std::vector<double> scores(n);
  for (int c = 0; c < k; ++c) {
    for (int i = 0; i < n; ++i) scores[i] = p.probabilities.at(i, c);
    out[c] = try_roc_auc(scores, p.labels[c]);
  }
  return out;
}

CamBatch compute_cams(Model& model, const SampleSource& source,
                      const std::vector<ImageRecord>& records,
                      const std::vector<std::size_t>& indices) {
  CamBatch out;
  const ModelInput in = load_batch(source, records, indices, std::nullopt, &out.windows);
  const ModelOutput fwd = model.forward(in, false, nullptr);
  out.probabilities = nn::sigmoid(fwd.logits);
  const int k = model.config().n_classes;
  for (int c = 0; c < k; ++c) {
    const Tensor& a = fwd.head_input[c];
    out.heatmaps.push_back(cam(a, model.head_weight().value.data() + c * a.dim(1)));
  }
  return out;
}

namespace {

RealMap heatmap_plane(const Tensor& maps, int i) {
  RealMap m(maps.dim(1), maps.dim(2));
  std::copy(maps.slice(i), maps.slice(i) + m.size(), m.values().begin());
  return m;
}

std::vector<int> localization_class_ids(const Dataset& ds) {
  std::vector<int> ids;
  for (const auto& name : ds.localization_classes) {
    for (int c = 0; c < static_cast<int>(ds.class_names.size()); ++c) {
      if (ds.class_names[c] == name) ids.push_back(c);
    }
  }
  return ids;
}

}  // namespace

std::vector<LocalizationCase> localization_cases(Model& model, const SampleSource& source,
                                                 const Dataset& dataset,
                                                 const std::vector<std::size_t>& records,
                                                 const LocalizationOptions& options,
                                                 int batch_size) {
  std::map<std::string, std::vector<const BBoxAnnotation*>> boxes_by_image;
  for (const auto& b : dataset.boxes) {
    if (!b.flagged) boxes_by_image[b.image_id].push_back(&b);
  }
  const std::vector<int> loc_classes = localization_class_ids(dataset);

  std::vector<std::size_t> selected;
  for (std::size_t r : records) {
    if (options.include_negatives || boxes_by_image.count(dataset.records[r].image_id)) {
      selected.push_back(r);
    }
  }

  std::vector<LocalizationCase> cases;
  const int edge = source.preprocess.crop_edge;
  for (std::size_t start = 0; start < selected.size(); start += batch_size) {
    const std::vector<std::size_t> idx(
        selected.begin() + start,
        selected.begin() + std::min(selected.size(), start + batch_size));
    const CamBatch cams = compute_cams(model, source, dataset.records, idx);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const ImageRecord& rec = dataset.records[idx[i]];
      auto it = boxes_by_image.find(rec.image_id);
      for (int c : loc_classes) {
        LocalizationCase lc;
        lc.class_id = c;
        lc.probability = cams.probabilities.at(static_cast<int>(i), c);
        if (it != boxes_by_image.end()) {
          for (const BBoxAnnotation* b : it->second) {
            if (b->class_id != c) continue;
            if (auto fb = box_to_crop_frame(*b, cams.windows[i])) {
              lc.truth.push_back({fb->x_min, fb->y_min, fb->x_max, fb->y_max});
            }
          }
        }
        const bool negative = lc.truth.empty() && options.include_negatives &&
                              rec.labels.at(c) == 0 &&
                              (it == boxes_by_image.end() ||
                               std::none_of(it->second.begin(), it->second.end(),
                                            [c](auto* b) { return b->class_id == c; }));
        if (lc.truth.empty() && !negative) continue;
        lc.predicted = predict_boxes(heatmap_plane(cams.heatmaps[c], static_cast<int>(i)), edge,
                                     options.heatmap_threshold);
        cases.push_back(std::move(lc));
      }
    }
  }
  return cases;
}

EvalReport evaluate_classification(Model& model, const SampleSource& source,
                                   const Dataset& dataset,
                                   const std::vector<std::size_t>& records) {
  std::vector<ImageRecord> subset;
  for (std::size_t r : records) subset.push_back(dataset.records.at(r));
  EvalReport report;
  report.class_names = dataset.class_names;
  report.n_images = static_cast<int>(subset.size());
  const Predictions p = predict(model, source, subset);
  report.auc = per_class_auc(p);
  report.mean_auc = mean_defined(report.auc);
  return report;
}

void add_localization(EvalReport& report, Model& model, const SampleSource& source,
                      const Dataset& dataset, const std::vector<std::size_t>& records,
                      const LocalizationOptions& options) {
  if (report.class_names.empty()) report.class_names = dataset.class_names;
  if (report.n_images == 0) report.n_images = static_cast<int>(records.size());
  const auto cases = localization_cases(model, source, dataset, records, options);
  report.thresholds = options.thresholds;
  report.localization.clear();
  for (double t : options.thresholds) {
    report.localization.push_back(
        localization_score(cases, static_cast<int>(dataset.class_names.size()), t));
  }
  report.localization_classes = localization_class_ids(dataset);
}

// ---------------------------------------------------------------- report

namespace {

nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

std::optional<double> mean_over(const LocalizationResult& r, const std::vector<int>& classes) {
  std::vector<std::optional<double>> v;
  for (int c : classes) {
    if (r.cases[c]) v.push_back(r.accuracy[c]);
  }
  return mean_defined(v);
}

std::string cell(std::optional<double> v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}

}  // namespace

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["classes"] = class_names;
  j["n_images"] = n_images;
  if (!auc.empty()) {
    nlohmann::ordered_json a;
    for (std::size_t c = 0; c < auc.size(); ++c) {
      a[class_names[c]] = auc[c] ? nlohmann::json(*auc[c]) : nlohmann::json(nullptr);
    }
    j["auc"] = a;
    j["mean_auc"] = mean_auc ? nlohmann::json(*mean_auc) : nlohmann::json(nullptr);
  }
  if (!localization.empty()) {
    nlohmann::ordered_json loc = nlohmann::json::array();
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      const LocalizationResult& r = localization[t];
      nlohmann::ordered_json acc, cases, correct;
      for (int c : localization_classes) {
        acc[class_names[c]] = number_or_null(r.accuracy[c]);
        cases[class_names[c]] = r.cases[c];
        correct[class_names[c]] = r.correct[c];
      }
      const auto mean = mean_over(r, localization_classes);
      loc.push_back({{"iou_threshold", thresholds[t]},
                     {"accuracy", acc},
                     {"mean_accuracy", mean ? nlohmann::json(*mean) : nlohmann::json(nullptr)},
                     {"cases", cases},
                     {"correct", correct}});
    }
    j["localization"] = loc;
  }
  return j.dump(2) + "\n";
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  auto row = [&](const std::string& head, const std::vector<std::string>& cells) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%-14s", head.c_str());
    os << buf;
    for (const auto& c : cells) {
      std::snprintf(buf, sizeof(buf), " %13s", c.c_str());
      os << buf;
    }
    os << "\n";
  };
  if (!auc.empty()) {
    std::vector<std::string> names(class_names), cells;
    names.push_back("Mean");
    for (const auto& a : auc) cells.push_back(cell(a));
    cells.push_back(cell(mean_auc));
    os << "Classification AUC (" << n_images << " images)\n";
    row("", names);
    row("AUC", cells);
  }
  if (!localization.empty()) {
    std::vector<std::string> names;
    for (int c : localization_classes) names.push_back(class_names[c]);
    names.push_back("Mean");
    os << "Localization accuracy\n";
    row("", names);
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      std::vector<std::string> cells;
      for (int c : localization_classes) {
        const double a = localization[t].accuracy[c];
        cells.push_back(std::isfinite(a) ? cell(a) : "-");
      }
      cells.push_back(cell(mean_over(localization[t], localization_classes)));
      char head[32];
      std::snprintf(head, sizeof(head), "T(IoU)=%.2g", thresholds[t]);
      row(head, cells);
    }
  }
  return os.str();
}

}  // namespace cxr
