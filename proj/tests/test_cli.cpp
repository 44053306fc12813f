#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

int apam(std::vector<std::string> args) {
  args.insert(args.begin(), "apam");
  return cxr::cli::run(args);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testutil::TempDir("cli");
    const std::string d = data().string();
    ASSERT_EQ(apam({"synth", "--out", d, "--n-images", "60", "--seed", "5"}), 0);
    ASSERT_EQ(apam({"gen-priors", "--bbox", d + "/bboxes.csv", "--classes", d + "/classes.txt",
                    "--resolution", "256", "--out", priors().string()}),
              0);
    ASSERT_EQ(apam({"gen-roi", "--images", d + "/images", "--out", roi().string()}), 0);
    std::ofstream(path("cfg.json")) << R"({
      "model": {"backbone": "toy_cnn", "fpn": "additive", "attention": "prior_and_roi",
                "feature_channels": 8, "fpn_channels": 8},
      "train": {"batch_size": 8, "epochs": 1, "lr0": 0.001, "seed": 1}
    })";
    ASSERT_EQ(apam({"train", "--config", path("cfg.json").string(), "--data", d, "--priors",
                    priors().string(), "--roi", roi().string(), "--out", path("run").string()}),
              0);
  }
  static void TearDownTestSuite() { delete dir_; }
  static fs::path path(const std::string& s) { return dir_->path() / s; }
  static fs::path data() { return path("data"); }
  static fs::path priors() { return path("priors"); }
  static fs::path roi() { return path("roi"); }
  static testutil::TempDir* dir_;
};
testutil::TempDir* Cli::dir_ = nullptr;

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(apam({}), 2);
  EXPECT_EQ(apam({"--help"}), 0);
  EXPECT_EQ(apam({"frobnicate"}), 2);
  EXPECT_EQ(apam({"synth"}), 2);  // --out missing
  EXPECT_EQ(apam({"train", "--config", "/nonexistent.json", "--data", data().string(), "--out",
                  path("never").string()}),
            2);
  EXPECT_FALSE(fs::exists(path("never")));
  EXPECT_EQ(apam({"eval", "--checkpoint", (path("run") / "best.ckpt").string(), "--data",
                  data().string(), "--priors", priors().string(), "--mode", "sideways", "--out",
                  path("never").string()}),
            2);
  EXPECT_FALSE(fs::exists(path("never")));
}

TEST_F(Cli, PriorAttentionWithoutPriorsIsUsageError) {
  EXPECT_EQ(apam({"train", "--config", path("cfg.json").string(), "--data", data().string(),
                  "--out", path("nopriors").string()}),
            2);
  EXPECT_FALSE(fs::exists(path("nopriors")));
  EXPECT_EQ(apam({"eval", "--checkpoint", (path("run") / "best.ckpt").string(), "--data",
                  data().string(), "--out", path("nopriors").string()}),
            2);
}

TEST_F(Cli, BadConfigKeyIsUsageError) {
  std::ofstream(path("bad.json")) << R"({"model": {"backbone": "toy_cnn"}, "trian": {}})";
  EXPECT_EQ(apam({"train", "--config", path("bad.json").string(), "--data", data().string(),
                  "--priors", priors().string(), "--out", path("bad").string()}),
            2);
}

TEST_F(Cli, TrainWritesArtifacts) {
  for (const char* f : {"best.ckpt", "last.ckpt", "train_log.csv", "run_manifest.json", "config.json"}) {
    EXPECT_TRUE(fs::exists(path("run") / f)) << f;
  }
  const auto m = nlohmann::json::parse(slurp(path("run") / "run_manifest.json"));
  EXPECT_EQ(m["subcommand"], "train");
  EXPECT_EQ(m["seed"], 1);
  EXPECT_EQ(m["config"]["model"]["n_classes"], 4);
  EXPECT_EQ(m["tool_version"], "0.1.0");
}

TEST_F(Cli, EvalAndReplayAreReproducible) {
  const std::vector<std::string> args = {
      "eval",     "--checkpoint", (path("run") / "best.ckpt").string(),
      "--data",   data().string(), "--priors", priors().string(), "--roi", roi().string(),
      "--mode",   "both",          "--split", "all", "--iou-thresholds", "0.1,0.5",
      "--out",    path("eval").string()};
  ASSERT_EQ(apam(args), 0);
  const auto report = nlohmann::json::parse(slurp(path("eval") / "report.json"));
  EXPECT_EQ(report["n_images"], 60);
  EXPECT_EQ(report["auc"].size(), 4u);
  EXPECT_TRUE(fs::exists(path("eval") / "report.txt"));
  const std::string first = slurp(path("eval") / "report.json");
  ASSERT_EQ(apam({"replay", "--manifest", (path("eval") / "run_manifest.json").string()}), 0);
  EXPECT_EQ(slurp(path("eval") / "report.json"), first);
  EXPECT_EQ(apam({"eval", "--checkpoint", (path("run") / "best.ckpt").string(), "--data",
                  data().string(), "--priors", priors().string(), "--iou-thresholds", "0.1,abc",
                  "--out", path("eval2").string()}),
            2);
}

TEST_F(Cli, RenderWritesOverlays) {
  const std::string img = (data() / "images" / "synth_00003.png").string();
  ASSERT_EQ(apam({"render", "--checkpoint", (path("run") / "best.ckpt").string(), "--data",
                  data().string(), "--priors", priors().string(), "--images",
                  img + ",missing.png", "--out", path("render").string()}),
            0);
  int pngs = 0;
  for (const auto& e : fs::directory_iterator(path("render"))) pngs += e.path().extension() == ".png";
  EXPECT_GE(pngs, 1);
  EXPECT_EQ(apam({"render", "--checkpoint", (path("run") / "best.ckpt").string(), "--data",
                  data().string(), "--priors", priors().string(), "--images", "nope.png", "--out",
                  path("render2").string()}),
            1);
}

TEST_F(Cli, PriorsForEmptyAnnotationFileAreOnes) {
  std::ofstream(path("empty.csv")) << "Image Index,Finding Label,x,y,w,h\n";
  ASSERT_EQ(apam({"gen-priors", "--bbox", path("empty.csv").string(), "--classes",
                  (data() / "classes.txt").string(), "--resolution", "16", "--out",
                  path("ones").string()}),
            0);
  EXPECT_TRUE(fs::exists(path("ones") / "run_manifest.json"));
}
