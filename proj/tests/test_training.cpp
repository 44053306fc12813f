#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

#include "cxr/checkpoint.hpp"
#include "cxr/prior_maps.hpp"
#include "cxr/training.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cxr;
using testutil::random_tensor;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

ModelConfig tiny_model(AttentionMode att) {
  ModelConfig c;
  c.backbone = "toy_cnn";
  c.attention = att;
  c.n_classes = 4;
  c.feature_channels = 8;
  c.fpn_channels = 8;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(Training, BceMatchesExtendedPrecision) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor z = random_tensor({3, 4}, rng, -40, 40);
    Tensor y({3, 4});
    for (auto& v : y.values()) v = rng() % 2;
    const std::vector<double> zv(z.values().begin(), z.values().end());
    const std::vector<double> yv(y.values().begin(), y.values().end());
    const long double want = oracle::bce(zv, yv);
    EXPECT_NEAR(bce_loss(z, y), static_cast<double>(want), 1e-13 * std::max(1.0L, want));
  }
  Tensor big({1, 1}, 800.0), one({1, 1}, 0.0);
  EXPECT_NEAR(bce_loss(big, one), 800.0, 1e-9);  // no overflow
  Tensor bad({1, 1}, std::nan(""));
  EXPECT_THROW(bce_loss(bad, one), std::exception);
}

TEST(Training, BceGradMatchesFiniteDifference) {
  std::mt19937_64 rng(2);
  Tensor z = random_tensor({2, 3}, rng, -3, 3);
  Tensor y({2, 3});
  for (auto& v : y.values()) v = rng() % 2;
  const Tensor g = bce_grad(z, y);
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double keep = z[i];
    z[i] = keep + 1e-6;
    const double up = bce_loss(z, y);
    z[i] = keep - 1e-6;
    const double down = bce_loss(z, y);
    z[i] = keep;
    EXPECT_NEAR(g[i], (up - down) / 2e-6, 1e-8);
  }
}

TEST(Training, StepSchedule) {
  const TrainConfig c;
  const double want[] = {1e-4, 1e-4, 1e-4, 1e-4, 1e-5, 1e-5, 1e-5, 1e-5,
                         1e-6, 1e-6, 1e-6, 1e-6, 1e-7, 1e-7, 1e-7};
  for (int e = 0; e < 15; ++e) EXPECT_EQ(lr_at_epoch(e, c), want[e]) << e;
  EXPECT_THROW(lr_at_epoch(-1, c), std::exception);
}

TEST(Training, ConfigValidationAndJson) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), std::exception);
  c = TrainConfig{};
  c.lr0 = -1;
  EXPECT_THROW(c.validate(), std::exception);
  c = TrainConfig{};
  c.seed = 99;
  c.decoupled_weight_decay = true;
  EXPECT_EQ(train_config_from_json(to_json(c)), c);
  EXPECT_THROW(train_config_from_json(R"({"learning_rate": 1})"), std::exception);
}

TEST(Training, AdamFirstStepMovesByLr) {
  // With zero decay the bias-corrected first step is lr * g / (|g| + eps).
  nn::Param p("w", {3});
  p.value[0] = 1, p.value[1] = 2, p.value[2] = 3;
  p.grad[0] = 0.5, p.grad[1] = -2, p.grad[2] = 0;
  TrainConfig c;
  c.weight_decay = 0;
  nn::ParamRefs refs;
  refs.params.push_back(&p);
  Adam adam(refs, c);
  adam.step(0.1);
  EXPECT_NEAR(p.value[0], 0.9, 1e-7);
  EXPECT_NEAR(p.value[1], 2.1, 1e-7);
  EXPECT_EQ(p.value[2], 3.0);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Training, AdamCoupledVsDecoupledDecay) {
  nn::Param a("a", {1}), b("b", {1});
  a.value[0] = b.value[0] = 2.0;
  TrainConfig c;
  c.weight_decay = 0.5;
  nn::ParamRefs ra, rb;
  ra.params.push_back(&a);
  rb.params.push_back(&b);
  Adam coupled(ra, c);
  c.decoupled_weight_decay = true;
  Adam decoupled(rb, c);
  coupled.step(0.1);
  decoupled.step(0.1);
  EXPECT_NEAR(a.value[0], 1.9, 1e-7);               // g = 0 + 0.5 * 2 -> normalised step
  EXPECT_NEAR(b.value[0], 2.0 - 0.1 * 0.5 * 2.0, 1e-12);  // only the decay term
}

class TrainRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testutil::TempDir("train");
    write_synth_dataset(testutil::small_synth(60, 3), dir_->path() / "data");
    DatasetLayout layout;
    layout.root = dir_->path() / "data";
    dataset_ = new Dataset(load_dataset(layout, 0));
    priors_ = new PriorMapSet(build_prior_set(dataset_->boxes, dataset_->class_names, 256, 256));
  }
  static void TearDownTestSuite() {
    delete priors_;
    delete dataset_;
    delete dir_;
  }
  static TrainResult run(const std::string& tag, AttentionMode att, int epochs) {
    Model model(tiny_model(att));
    model.init();
    TrainConfig tc;
    tc.epochs = epochs;
    tc.batch_size = 8;
    tc.lr0 = 1e-3;
    tc.seed = 4;
    TrainInputs in;
    in.dataset = dataset_;
    in.priors = priors_;
    in.out_dir = dir_->path() / tag;
    return train(model, in, tc);
  }
  static testutil::TempDir* dir_;
  static Dataset* dataset_;
  static PriorMapSet* priors_;
};
testutil::TempDir* TrainRun::dir_ = nullptr;
Dataset* TrainRun::dataset_ = nullptr;
PriorMapSet* TrainRun::priors_ = nullptr;

TEST_F(TrainRun, WritesLogAndCheckpoints) {
  const TrainResult r = run("a", AttentionMode::prior_and_roi, 2);
  ASSERT_EQ(r.log.size(), 2u);
  EXPECT_TRUE(std::filesystem::exists(r.best_checkpoint));
  EXPECT_TRUE(std::filesystem::exists(r.last_checkpoint));
  const std::string log = slurp(dir_->path() / "a" / "train_log.csv");
  EXPECT_EQ(log.rfind("epoch,lr,train_loss,val_mean_auc\n", 0), 0u);
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);
  const auto loaded = load_checkpoint(r.last_checkpoint);
  EXPECT_EQ(loaded.model->config(), tiny_model(AttentionMode::prior_and_roi));
}

TEST_F(TrainRun, IsDeterministic) {
  const TrainResult a = run("d1", AttentionMode::prior_only, 1);
  const TrainResult b = run("d2", AttentionMode::prior_only, 1);
  EXPECT_EQ(a.log[0].train_loss, b.log[0].train_loss);
  EXPECT_EQ(slurp(a.last_checkpoint), slurp(b.last_checkpoint));
}

TEST_F(TrainRun, RejectsOversizedBatchAndMissingPriors) {
  Model model(tiny_model(AttentionMode::prior_only));
  model.init();
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 1000;
  TrainInputs in;
  in.dataset = dataset_;
  in.priors = priors_;
  in.out_dir = dir_->path() / "big";
  EXPECT_THROW(train(model, in, tc), std::exception);
  tc.batch_size = 8;
  in.priors = nullptr;
  EXPECT_THROW(train(model, in, tc), std::exception);
}
