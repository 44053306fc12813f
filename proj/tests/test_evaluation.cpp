#include <gtest/gtest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "cxr/evaluation.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cxr;

namespace {

std::vector<BBox> sorted(std::vector<BBox> v) {
  auto key = [](const BBox& b) { return std::tie(b.y_min, b.x_min, b.y_max, b.x_max); };
  std::sort(v.begin(), v.end(), [&](const BBox& a, const BBox& b) { return key(a) < key(b); });
  return v;
}

BinaryMask random_mask(std::mt19937_64& rng, int h, int w, double p) {
  BinaryMask m(h, w);
  std::bernoulli_distribution b(p);
  for (auto& v : m) v = b(rng);
  return m;
}

}  // namespace

TEST(Evaluation, AucMatchesPairCount) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + trial % 19;
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    for (int i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 6);  // many ties
      y[i] = rng() % 2;
    }
    y[0] = 1, y[1] = 0;
    EXPECT_DOUBLE_EQ(roc_auc(s, y), oracle::pair_auc(s, y));
  }
}

TEST(Evaluation, AucInvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(2);
  std::vector<double> s(30), t(30);
  std::vector<std::uint8_t> y(30);
  for (int i = 0; i < 30; ++i) {
    s[i] = std::uniform_real_distribution<double>(-2, 2)(rng);
    t[i] = std::exp(3 * s[i]) + 7;
    y[i] = i % 3 == 0;
  }
  EXPECT_EQ(roc_auc(s, y), roc_auc(t, y));
}

TEST(Evaluation, AucEdgeCases) {
  const std::vector<double> s{0.1, 0.9};
  EXPECT_EQ(roc_auc(s, std::vector<std::uint8_t>{0, 1}), 1.0);
  EXPECT_EQ(roc_auc(s, std::vector<std::uint8_t>{1, 0}), 0.0);
  EXPECT_EQ(roc_auc(std::vector<double>{0.5, 0.5}, std::vector<std::uint8_t>{1, 0}), 0.5);
  EXPECT_THROW(roc_auc(s, std::vector<std::uint8_t>{1, 1}), std::domain_error);
  EXPECT_FALSE(try_roc_auc(s, std::vector<std::uint8_t>{0, 0}));
  EXPECT_EQ(mean_defined({0.5, std::nullopt, 1.0}), 0.75);
  EXPECT_FALSE(mean_defined({std::nullopt}));
}

TEST(Evaluation, NormalizeHeatmap) {
  RealMap m(2, 2);
  m(0, 0) = -1, m(0, 1) = 0, m(1, 0) = 0, m(1, 1) = 3;
  const auto n = normalize_heatmap(m, 4);
  ASSERT_EQ(n.height(), 4);
  EXPECT_EQ(n(0, 0), 0);
  EXPECT_EQ(n(3, 3), 255);
  for (auto v : normalize_heatmap(RealMap(3, 3, 2.5), 8)) EXPECT_EQ(v, 0);
  const auto mask = heatmap_to_mask(n, 127);
  EXPECT_EQ(mask(3, 3), 1);
  EXPECT_EQ(mask(0, 0), 0);
}

TEST(Evaluation, ExtractBoxesMatchesFloodFill) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const BinaryMask m = random_mask(rng, 3 + trial % 15, 4 + trial % 11, 0.15 + 0.01 * (trial % 50));
    EXPECT_EQ(sorted(extract_boxes(m)), oracle::component_boxes(m)) << "trial " << trial;
  }
}

TEST(Evaluation, RingGivesOneBox) {
  BinaryMask m(7, 7, 0);
  for (int i = 1; i < 6; ++i) m(1, i) = m(5, i) = m(i, 1) = m(i, 5) = 1;
  m(3, 3) = 1;  // island inside the hole
  const auto boxes = sorted(extract_boxes(m));
  ASSERT_EQ(boxes.size(), 2u);
  EXPECT_EQ(boxes[0], (BBox{1, 1, 6, 6}));
  EXPECT_EQ(boxes[1], (BBox{3, 3, 4, 4}));
  const auto contours = find_contours(m);
  EXPECT_EQ(std::count_if(contours.begin(), contours.end(), [](auto& c) { return c.outer; }), 2);
}

TEST(Evaluation, IouMatchesPixelCount) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> u(0, 20);
  for (int trial = 0; trial < 300; ++trial) {
    auto box = [&] {
      int x0 = u(rng), x1 = u(rng), y0 = u(rng), y1 = u(rng);
      if (x0 > x1) std::swap(x0, x1);
      if (y0 > y1) std::swap(y0, y1);
      return BBox{double(x0), double(y0), double(x1 + 1), double(y1 + 1)};
    };
    const BBox a = box(), b = box();
    EXPECT_EQ(iou(a, b), oracle::pixel_iou(a, b));
  }
  EXPECT_EQ(iou({0, 0, 2, 2}, {2, 2, 4, 4}), 0.0);
  EXPECT_EQ(iou({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0);
}

TEST(Evaluation, CaseCorrectIsStrict) {
  LocalizationCase c;
  c.truth = {{0, 0, 10, 10}};
  c.predicted = {{0, 0, 10, 3}};  // IoU exactly 0.3
  EXPECT_FALSE(case_correct(c, 0.3));
  EXPECT_TRUE(case_correct(c, 0.29));
  c.predicted.push_back({0, 0, 10, 10});
  EXPECT_TRUE(case_correct(c, 0.99));
  c.predicted.clear();
  EXPECT_FALSE(case_correct(c, 0.0));
  LocalizationCase neg;
  neg.probability = 0.2;
  EXPECT_TRUE(case_correct(neg, 0.3));
  neg.probability = 0.7;
  EXPECT_FALSE(case_correct(neg, 0.3));
}

TEST(Evaluation, LocalizationScorePerClass) {
  std::vector<LocalizationCase> cases(3);
  cases[0].class_id = 0, cases[0].truth = {{0, 0, 4, 4}}, cases[0].predicted = {{0, 0, 4, 4}};
  cases[1].class_id = 0, cases[1].truth = {{0, 0, 4, 4}}, cases[1].predicted = {{8, 8, 9, 9}};
  cases[2].class_id = 2, cases[2].truth = {{0, 0, 4, 4}}, cases[2].predicted = {{0, 0, 4, 3}};
  const auto r = localization_score(cases, 3, 0.5);
  EXPECT_EQ(r.accuracy[0], 0.5);
  EXPECT_TRUE(std::isnan(r.accuracy[1]));
  EXPECT_EQ(r.accuracy[2], 1.0);
  EXPECT_EQ(r.cases[0], 2);
  EXPECT_EQ(r.correct[2], 1);
}

TEST(Evaluation, PredictBoxesOnPeak) {
  RealMap h(7, 7, 0.0);
  h(2, 3) = 1.0;
  const auto boxes = predict_boxes(h, 224, 127);
  ASSERT_EQ(boxes.size(), 1u);
  EXPECT_GT(boxes[0].x_min, 64);
  EXPECT_LT(boxes[0].x_max, 160);
  EXPECT_TRUE(predict_boxes(RealMap(7, 7, 1.0), 224, 127).empty());
}

TEST(Evaluation, ReportJson) {
  EvalReport r;
  r.class_names = {"a", "b"};
  r.auc = {0.75, std::nullopt};
  r.mean_auc = 0.75;
  r.n_images = 10;
  r.thresholds = {0.3};
  r.localization = {localization_score({}, 2, 0.3)};
  r.localization_classes = {0};
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(j["mean_auc"], 0.75);
  EXPECT_TRUE(j["auc"]["b"].is_null());
  EXPECT_NE(r.to_table().find("0.75"), std::string::npos);
}
