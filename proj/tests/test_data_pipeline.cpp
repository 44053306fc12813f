#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "cxr/data_pipeline.hpp"
#include "cxr/image_io.hpp"
#include "cxr/synth.hpp"
#include "test_util.hpp"

using namespace cxr;

TEST(DataPipeline, NihClassLists) {
  EXPECT_EQ(nih_class_names().size(), 15u);
  EXPECT_EQ(nih_localization_classes().size(), 8u);
  for (const auto& c : nih_localization_classes()) EXPECT_GE(class_index(nih_class_names(), c), 0);
}

TEST(DataPipeline, LabelIndexParsesPipes) {
  testutil::TempDir dir("labels");
  std::ofstream(dir / "l.csv") << "Image Index,Finding Labels,Follow-up #,Patient ID\n"
                                  "a.png,Mass|Nodule,0,1\n"
                                  "b.png,No Finding,0,2\n"
                                  "c.png,Effusion,1,1\n";
  const auto recs = load_label_index(dir / "l.csv", nih_class_names());
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[0].labels[class_index(nih_class_names(), "Mass")], 1);
  EXPECT_EQ(recs[0].labels[class_index(nih_class_names(), "Nodule")], 1);
  EXPECT_EQ(recs[0].labels[class_index(nih_class_names(), "Effusion")], 0);
  EXPECT_EQ(recs[1].labels[class_index(nih_class_names(), "No Finding")], 1);
  EXPECT_EQ(recs[2].patient_id, "1");
  // Fourteen findings only: "No Finding" becomes an all-zero row.
  std::vector<std::string> findings(nih_class_names().begin(), nih_class_names().end() - 1);
  const auto rows = load_label_index(dir / "l.csv", findings);
  EXPECT_EQ(std::count(rows[1].labels.begin(), rows[1].labels.end(), 1), 0);
}

TEST(DataPipeline, LabelIndexRejectsUnknownClassAndDuplicates) {
  testutil::TempDir dir("labels_bad");
  std::ofstream(dir / "a.csv") << "Image Index,Finding Labels\na.png,Martian\n";
  EXPECT_THROW(load_label_index(dir / "a.csv", nih_class_names()), std::exception);
  std::ofstream(dir / "b.csv") << "Image Index,Finding Labels\na.png,Mass\na.png,Mass\n";
  EXPECT_THROW(load_label_index(dir / "b.csv", nih_class_names()), std::exception);
}

TEST(DataPipeline, BboxIndexFlagsNonLocalizationClasses) {
  testutil::TempDir dir("bbox");
  std::ofstream(dir / "b.csv") << "Image Index,Finding Label,Bbox [x,y,w,h],,,\n"
                                  "a.png,Mass,10,20,30.5,40\n"
                                  "a.png,Hernia,1,2,3,4\n";
  const auto boxes = load_bbox_index(dir / "b.csv", nih_class_names(), nih_localization_classes());
  ASSERT_EQ(boxes.size(), 2u);
  EXPECT_EQ(boxes[0].w, 30.5);
  EXPECT_FALSE(boxes[0].flagged);
  EXPECT_TRUE(boxes[1].flagged);
  std::ofstream(dir / "c.csv") << "Image Index,Finding Label,x,y,w,h\na.png,Mass,1,2,0,4\n";
  EXPECT_THROW(load_bbox_index(dir / "c.csv", nih_class_names(), nih_localization_classes()),
               std::exception);
}

TEST(DataPipeline, SplitsArePatientDisjoint) {
  std::vector<ImageRecord> recs;
  for (int i = 0; i < 300; ++i) {
    ImageRecord r;
    r.image_id = std::to_string(i);
    r.patient_id = std::to_string(i / 3);
    recs.push_back(r);
  }
  assign_splits(recs, {0.7, 0.1, 0.2}, 5);
  std::map<std::string, std::set<Split>> by_patient;
  std::map<Split, int> counts;
  for (const auto& r : recs) {
    by_patient[r.patient_id].insert(r.split);
    counts[r.split]++;
  }
  for (const auto& [p, s] : by_patient) EXPECT_EQ(s.size(), 1u) << p;
  EXPECT_NEAR(counts[Split::train], 210, 3);
  EXPECT_NEAR(counts[Split::val], 30, 3);
  EXPECT_NEAR(counts[Split::test], 60, 3);
  auto again = recs;
  for (auto& r : again) r.split = Split::unassigned;
  assign_splits(again, {0.7, 0.1, 0.2}, 5);
  for (std::size_t i = 0; i < recs.size(); ++i) EXPECT_EQ(again[i].split, recs[i].split);
}

TEST(DataPipeline, CenterCropWindow) {
  PreprocessSpec spec;
  const CropWindow w = make_crop_window(1024, 1024, spec, nullptr);
  EXPECT_EQ(w.resized_height, 256);
  EXPECT_EQ(w.x, 16);
  EXPECT_EQ(w.y, 16);
  EXPECT_EQ(w.size, 224);
  const CropWindow r = make_crop_window(300, 600, spec, nullptr);
  EXPECT_EQ(r.resized_width, 512);
  EXPECT_EQ(r.x, 144);
}

TEST(DataPipeline, RandomCropNeedsRngAndStaysInside) {
  PreprocessSpec spec;
  spec.crop_mode = CropMode::random;
  EXPECT_THROW(make_crop_window(256, 256, spec, nullptr), std::exception);
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const CropWindow w = make_crop_window(400, 300, spec, &rng);
    EXPECT_GE(w.x, 0);
    EXPECT_LE(w.x + w.size, w.resized_width);
    EXPECT_LE(w.y + w.size, w.resized_height);
  }
}

TEST(DataPipeline, PreprocessNormalizesAndReplicates) {
  const Tensor gray({1, 300, 320}, 0.5);
  const auto [t, win] = preprocess_image(gray, PreprocessSpec{}, nullptr);
  ASSERT_EQ(t.shape(), (Shape{3, 224, 224}));
  EXPECT_NEAR(t.at(0, 10, 10), (0.5 - 0.485) / 0.229, 1e-12);
  EXPECT_NEAR(t.at(2, 100, 200), (0.5 - 0.406) / 0.225, 1e-12);
  EXPECT_EQ(win.source_width, 320);
}

TEST(DataPipeline, ResizeBilinearPreservesLinearRamp) {
  RealMap m(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) m(y, x) = x;
  const RealMap r = resize_bilinear(m, 8, 8);
  // Half-pixel centres: output x maps to (x + 0.5) / 2 - 0.5 in the source.
  EXPECT_NEAR(r(3, 3), 1.25, 1e-12);
  EXPECT_NEAR(r(0, 0), 0.0, 1e-12);   // clamped
  EXPECT_NEAR(r(0, 7), 3.0, 1e-12);
}

TEST(DataPipeline, TransformAlignedAveragesArea) {
  RealMap m(512, 512, 0.0);
  for (int y = 0; y < 512; ++y)
    for (int x = 256; x < 512; ++x) m(y, x) = 1.0;
  const CropWindow win = make_crop_window(512, 512, PreprocessSpec{}, nullptr);
  const Tensor t = transform_aligned(m, win, 7, 7);
  ASSERT_EQ(t.shape(), (Shape{1, 7, 7}));
  EXPECT_NEAR(t.at(0, 3, 0), 0.0, 1e-12);
  EXPECT_NEAR(t.at(0, 3, 6), 1.0, 1e-12);
  EXPECT_NEAR(t.at(0, 3, 3), 0.5, 1e-12);  // straddles the edge symmetrically
  const Tensor ones = transform_aligned(RealMap(100, 80, 1.0),
                                        make_crop_window(100, 80, PreprocessSpec{}, nullptr), 14, 14);
  for (double v : ones.values()) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(DataPipeline, BoxToCropFrame) {
  const CropWindow win = make_crop_window(512, 512, PreprocessSpec{}, nullptr);
  BBoxAnnotation b;
  b.x = 100, b.y = 200, b.w = 50, b.h = 40;
  const auto f = box_to_crop_frame(b, win);
  ASSERT_TRUE(f);
  EXPECT_DOUBLE_EQ(f->x_min, 34);
  EXPECT_DOUBLE_EQ(f->y_min, 84);
  EXPECT_DOUBLE_EQ(f->x_max, 59);
  EXPECT_DOUBLE_EQ(f->y_max, 104);
  b.x = 0, b.y = 0, b.w = 10, b.h = 10;  // entirely in the cropped-off margin
  EXPECT_FALSE(box_to_crop_frame(b, win));
}

TEST(DataPipeline, SynthIsDeterministicAndLoads) {
  const auto cfg = testutil::small_synth(40, 9);
  const SynthSample a = synth_sample(cfg, 17), b = synth_sample(cfg, 17);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.record.labels, b.record.labels);
  testutil::TempDir dir("synth");
  write_synth_dataset(cfg, dir.path());
  DatasetLayout layout;
  layout.root = dir.path();
  const Dataset ds = load_dataset(layout, 0);
  EXPECT_EQ(ds.class_names, cfg.class_names);
  ASSERT_EQ(ds.records.size(), 40u);
  EXPECT_EQ(read_image(ds.records[17].path).dim(1), cfg.image_edge);
  // Every positive label has exactly one box inside its class region.
  int positives = 0;
  for (const auto& r : ds.records)
    for (int c = 0; c < cfg.n_classes(); ++c) positives += r.labels[c];
  EXPECT_EQ(static_cast<int>(ds.boxes.size()), positives);
  for (const auto& box : ds.boxes) {
    const auto& reg = cfg.lesion_regions[box.class_id];
    EXPECT_GE(box.x, reg.x);
    EXPECT_LE(box.x + box.w, reg.x + reg.w);
  }
}
