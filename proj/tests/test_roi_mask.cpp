#include <gtest/gtest.h>

#include "cxr/image_io.hpp"
#include "cxr/roi_mask.hpp"
#include "cxr/synth.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cxr;

namespace {

BinaryMask random_blobs(std::mt19937_64& rng, int h, int w, int blobs) {
  BinaryMask m(h, w, 0);
  for (int b = 0; b < blobs; ++b) {
    const int cy = std::uniform_int_distribution<int>(0, h - 1)(rng);
    const int cx = std::uniform_int_distribution<int>(0, w - 1)(rng);
    const int r = std::uniform_int_distribution<int>(0, 3)(rng);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) m(y, x) = 1;
  }
  return m;
}

}  // namespace

TEST(RoiMask, BinarizeIncludesThreshold) {
  RealMap p(1, 3);
  p(0, 0) = 0.5, p(0, 1) = 0.4999999, p(0, 2) = 0.2;
  const BinaryMask m = binarize(p, 0.5);
  EXPECT_EQ(m(0, 0), 1);
  EXPECT_EQ(m(0, 1), 0);
  EXPECT_EQ(m(0, 2), 0);
}

TEST(RoiMask, ComponentsAreEightConnected) {
  BinaryMask m(4, 4, 0);
  m(0, 0) = m(1, 1) = m(2, 2) = 1;  // diagonal chain
  m(0, 3) = 1;
  const Components c = label_components(m);
  ASSERT_EQ(c.items.size(), 2u);
  EXPECT_EQ(c.items[0].area, 3);
  EXPECT_EQ(c.labels(2, 2), c.labels(0, 0));
}

TEST(RoiMask, KeepLargestIslands) {
  BinaryMask m(5, 9, 0);
  for (int y = 0; y < 3; ++y) m(y, 0) = 1;                 // area 3
  for (int y = 0; y < 5; ++y) m(y, 3) = m(y, 4) = 1;       // area 10
  m(4, 8) = 1;                                            // area 1
  for (int y = 0; y < 3; ++y) m(y, 6) = 1;                 // area 3, tie with col 0
  const BinaryMask k = keep_largest_islands(m, 2);
  EXPECT_EQ(k(0, 3), 1);
  EXPECT_EQ(k(0, 0), 1);  // smaller centroid column wins the tie
  EXPECT_EQ(k(0, 6), 0);
  EXPECT_EQ(k(4, 8), 0);
  EXPECT_EQ(count_nonzero(keep_largest_islands(m, 10)), count_nonzero(m));
}

TEST(RoiMask, HullMatchesBruteForce) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 25; ++trial) {
    const BinaryMask m = random_blobs(rng, 10 + trial % 5, 12, 1 + trial % 3);
    EXPECT_EQ(convex_hull_fill(m), oracle::hull_fill(m)) << "trial " << trial;
  }
}

TEST(RoiMask, HullOfDegenerateSets) {
  BinaryMask empty(4, 4, 0);
  EXPECT_EQ(count_nonzero(convex_hull_fill(empty)), 0u);
  BinaryMask line(5, 5, 0);
  line(0, 0) = line(4, 4) = 1;
  const BinaryMask f = convex_hull_fill(line);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(f(i, i), 1);
  EXPECT_EQ(count_nonzero(f), 5u);
}

TEST(RoiMask, ConvexHullPointsAreCounterClockwise) {
  std::vector<PixelPoint> pts{{0, 0}, {2, 0}, {2, 2}, {0, 2}, {1, 1}, {1, 0}};
  const auto hull = convex_hull(pts);
  ASSERT_EQ(hull.size(), 4u);
  long area2 = 0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    area2 += a.x * b.y - b.x * a.y;
  }
  EXPECT_GT(area2, 0);
}

TEST(RoiMask, DilateByDisc) {
  BinaryMask m(9, 9, 0);
  m(4, 4) = 1;
  const BinaryMask d = dilate(m, 2);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 9; ++x)
      EXPECT_EQ(d(y, x), (y - 4) * (y - 4) + (x - 4) * (x - 4) <= 4) << y << "," << x;
  EXPECT_EQ(dilate(m, 0), m);
}

TEST(RoiMask, ResizeNearest) {
  BinaryMask m(2, 2, 0);
  m(0, 1) = 1;
  const BinaryMask r = resize_nearest(m, 4, 4);
  EXPECT_EQ(r(0, 2), 1);
  EXPECT_EQ(r(1, 3), 1);
  EXPECT_EQ(r(2, 2), 0);
  EXPECT_EQ(r(0, 1), 0);
}

TEST(RoiMask, FallbackCoversLungsOfPhantom) {
  const SynthSample s = synth_sample(testutil::small_synth(4), 0);
  const Tensor img = to_tensor(grid_cast<double>(s.image)) * (1.0 / 255.0);
  const RoiMask roi = generate_roi_mask(img, s.record.image_id, OtsuSegmenter(), RoiParams{});
  const int h = s.image.height(), w = s.image.width();
  ASSERT_EQ(roi.mask.height(), h);
  const auto n = count_nonzero(roi.mask);
  EXPECT_GT(n, static_cast<std::size_t>(h * w / 10));
  EXPECT_LT(n, static_cast<std::size_t>(h * w));
  EXPECT_EQ(roi.mask(0, 0), 0);          // corner is outside the body
  EXPECT_EQ(roi.mask(h / 2, w / 4), 1);  // left lung field
  EXPECT_EQ(roi.mask(h / 2, 3 * w / 4), 1);
}

TEST(RoiMask, ExternalSegmenter) {
  testutil::TempDir dir("ext");
  Grid<std::uint8_t> prob(8, 8, 0);
  for (int y = 2; y < 6; ++y)
    for (int x = 1; x < 4; ++x) prob(y, x) = 255;
  write_gray8(dir / "a.png", prob);
  const ExternalSegmenter seg(dir.path());
  const Tensor img({1, 8, 8}, 0.5);
  const RealMap p = seg.segment(img, "a.png");
  EXPECT_EQ(p(3, 2), 1.0);
  EXPECT_EQ(p(0, 0), 0.0);
  EXPECT_THROW(seg.segment(img, "missing.png"), std::exception);
  RoiParams params;
  params.dilation_radius = 0;
  params.working_edge = 8;
  const RoiMask roi = generate_roi_mask(img, "a.png", seg, params);
  EXPECT_EQ(count_nonzero(roi.mask), 12u);
}

TEST(RoiMask, SaveLoadRoundTrip) {
  std::mt19937_64 rng(22);
  const BinaryMask m = random_blobs(rng, 13, 17, 3);
  testutil::TempDir dir("roi");
  save_roi_mask(dir / "m.png", m);
  EXPECT_EQ(load_roi_mask(dir / "m.png"), m);
}
