#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

#include "cxr/checkpoint.hpp"
#include "cxr/model.hpp"
#include "cxr/nn/backbone.hpp"
#include "test_util.hpp"

using namespace cxr;
using testutil::random_tensor;

namespace {

ModelConfig toy_config(FpnMode fpn, AttentionMode att, int k = 3, int channels = 8) {
  ModelConfig c;
  c.backbone = "toy_cnn";
  c.fpn = fpn;
  c.attention = att;
  c.n_classes = k;
  c.feature_channels = channels;
  c.fpn_channels = channels;
  c.seed = 5;
  return c;
}

ModelInput random_input(const ModelConfig& c, int n, std::mt19937_64& rng) {
  const int e = c.feature_extent();
  ModelInput in;
  in.images = random_tensor({n, 3, 224, 224}, rng);
  if (uses_roi(c.attention)) {
    in.roi = Tensor({n, 1, e, e});
    for (auto& v : in.roi.values()) v = rng() % 2;
  }
  if (uses_priors(c.attention)) in.priors = random_tensor({n, c.n_classes, e, e}, rng, 0, 1);
  return in;
}

const FpnMode kFpn[] = {FpnMode::none, FpnMode::additive, FpnMode::concat};
const AttentionMode kAtt[] = {AttentionMode::baseline, AttentionMode::prior_only,
                              AttentionMode::roi_only, AttentionMode::prior_and_roi};

}  // namespace

TEST(Model, ConfigValidation) {
  ModelConfig c = toy_config(FpnMode::none, AttentionMode::baseline);
  EXPECT_NO_THROW(c.validate());
  c.n_classes = 0;
  EXPECT_THROW(c.validate(), std::exception);
  c = toy_config(FpnMode::none, AttentionMode::baseline);
  c.feature_channels = 6;
  EXPECT_THROW(c.validate(), std::exception);
  c = toy_config(FpnMode::none, AttentionMode::baseline);
  c.backbone = "resnet";
  EXPECT_THROW(c.validate(), std::exception);
  c = toy_config(FpnMode::none, AttentionMode::baseline);
  c.backbone = "densenet121";
  EXPECT_THROW(c.validate(), std::exception);  // needs 1024 channels
  c.feature_channels = 1024;
  EXPECT_NO_THROW(c.validate());
}

TEST(Model, ConfigJsonRoundTrip) {
  ModelConfig c = toy_config(FpnMode::concat, AttentionMode::roi_only, 4, 12);
  c.per_class_params = true;
  EXPECT_EQ(model_config_from_json(to_json(c)), c);
  EXPECT_THROW(model_config_from_json(R"({"fpn": "sideways"})"), std::exception);
  EXPECT_THROW(model_config_from_json(R"({"colour": 1})"), std::exception);
}

TEST(Model, ShapesAcrossAblationMatrix) {
  std::mt19937_64 rng(1);
  for (FpnMode f : kFpn) {
    for (AttentionMode a : kAtt) {
      const ModelConfig c = toy_config(f, a);
      Model m(c);
      m.init();
      const ModelOutput out = m.forward(random_input(c, 2, rng), false, nullptr);
      const int e = f == FpnMode::none ? 7 : 14;
      const int ch = (a == AttentionMode::prior_and_roi ? 2 : 1) * 8;
      EXPECT_EQ(out.logits.shape(), (Shape{2, 3}));
      ASSERT_EQ(out.head_input.size(), 3u);
      EXPECT_EQ(out.head_input[0].shape(), (Shape{2, ch, e, e}))
          << fpn_mode_name(f) << "/" << attention_mode_name(a);
      EXPECT_EQ(m.head_weight().value.shape(), (Shape{3, ch}));
    }
  }
}

TEST(Model, MissingOrMismatchedMasksRejected) {
  std::mt19937_64 rng(2);
  const ModelConfig c = toy_config(FpnMode::none, AttentionMode::prior_and_roi);
  Model m(c);
  m.init();
  ModelInput in = random_input(c, 2, rng);
  in.priors = random_tensor({2, 4, 7, 7}, rng, 0, 1);
  try {
    m.forward(in, false, nullptr);
    FAIL() << "expected a class-count error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("class count"), std::string::npos) << e.what();
  }
  in = random_input(c, 2, rng);
  in.roi = Tensor();
  EXPECT_THROW(m.forward(in, false, nullptr), std::exception);
}

TEST(Model, OnesMasksMakeAttentionTransparent) {
  // With all-ones masks every branch equals F, so prior_and_roi sees [F, F].
  std::mt19937_64 rng(3);
  ModelConfig c = toy_config(FpnMode::none, AttentionMode::prior_and_roi);
  Model m(c);
  m.init();
  ModelInput in = random_input(c, 2, rng);
  in.roi.fill(1.0);
  in.priors.fill(1.0);
  const ModelOutput out = m.forward(in, false, nullptr);
  const Tensor f = m.features(in.images, false);
  for (int k = 0; k < 3; ++k) {
    const Tensor& h = out.head_input[k];
    for (int n = 0; n < 2; ++n)
      for (int ch = 0; ch < 8; ++ch)
        for (int y = 0; y < 7; ++y)
          for (int x = 0; x < 7; ++x) {
            EXPECT_NEAR(h.at(n, ch, y, x), f.at(n, ch, y, x), 1e-12);
            EXPECT_NEAR(h.at(n, ch + 8, y, x), f.at(n, ch, y, x), 1e-12);
          }
  }
}

TEST(Model, CamMeanEqualsLogitMinusBias) {
  std::mt19937_64 rng(4);
  for (FpnMode f : kFpn) {
    const ModelConfig c = toy_config(f, AttentionMode::prior_and_roi);
    Model m(c);
    m.init();
    for (auto& v : m.head_bias().value.values()) v = 0.7;
    const ModelOutput out = m.forward(random_input(c, 2, rng), false, nullptr);
    for (int k = 0; k < 3; ++k) {
      const Tensor map = cam(out.head_input[k], m.head_weight().value.slice(k));
      const int hw = map.dim(1) * map.dim(2);
      for (int n = 0; n < 2; ++n) {
        double s = 0;
        for (int i = 0; i < hw; ++i) s += map.slice(n)[i];
        const double target = out.logits.at(n, k) - 0.7;
        EXPECT_LT(std::abs(s / hw - target) / (std::abs(target) + 1e-8), 1e-10);
      }
    }
  }
}

TEST(Model, PerClassParamsAreDistinct) {
  ModelConfig c = toy_config(FpnMode::none, AttentionMode::prior_only);
  c.per_class_params = true;
  Model m(c);
  m.init();
  EXPECT_NE(&m.prior_apam(0), &m.prior_apam(2));
  EXPECT_NE(m.prior_apam(0).cb[0].conv.weight.value, m.prior_apam(1).cb[0].conv.weight.value);
  c.per_class_params = false;
  Model s(c);
  EXPECT_EQ(&s.prior_apam(0), &s.prior_apam(2));
}

TEST(Model, GradientMatchesFiniteDifference) {
  std::mt19937_64 rng(5);
  for (FpnMode f : {FpnMode::none, FpnMode::concat}) {
    ModelConfig c = toy_config(f, AttentionMode::prior_and_roi, 2, 4);
    Model m(c);
    m.init();
    // Zero biases put all-zero ReLU patches exactly on the kink.
    for (nn::Param* p : m.all_params().params) {
      if (p->name.size() > 5 && p->name.ends_with(".bias")) {
        for (auto& v : p->value.values()) v = std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
      }
    }
    const ModelInput in = random_input(c, 2, rng);
    const Tensor r = random_tensor({2, 2}, rng);
    auto loss = [&] {
      const Tensor z = m.forward(in, true, nullptr).logits;
      double s = 0;
      for (std::size_t i = 0; i < z.size(); ++i) s += z[i] * r[i];
      return s;
    };
    m.zero_grad();
    std::unique_ptr<Model::Cache> cache;
    m.forward(in, true, &cache);
    m.backward(*cache, r);
    const double eps = 1e-6;
    int checked = 0;
    for (nn::Param* p : m.all_params().params) {
      const std::size_t stride = std::max<std::size_t>(1, p->value.size() / 6);
      for (std::size_t i = 0; i < p->value.size(); i += stride) {
        const double keep = p->value[i];
        p->value[i] = keep + eps;
        const double up = loss();
        p->value[i] = keep - eps;
        const double down = loss();
        p->value[i] = keep;
        const double numeric = (up - down) / (2 * eps);
        EXPECT_NEAR(p->grad[i], numeric, 1e-4 * std::max(1.0, std::abs(numeric)))
            << p->name << "[" << i << "]";
        ++checked;
      }
    }
    EXPECT_GT(checked, 100);
  }
}

TEST(Model, DenseNetHasTorchvisionLayout) {
  nn::DenseNet121 net;
  nn::ParamRefs refs;
  net.refs(refs);
  std::size_t count = 0;
  bool saw_norm5 = false, saw_deep = false;
  for (auto* p : refs.params) {
    count += p->value.size();
    saw_norm5 |= p->name == "features.norm5.weight";
    saw_deep |= p->name == "features.denseblock4.denselayer16.conv2.weight";
  }
  EXPECT_EQ(count, 6953856u);  // torchvision densenet121.features
  EXPECT_TRUE(saw_norm5);
  EXPECT_TRUE(saw_deep);
  EXPECT_EQ(refs.buffers.size(), 2u * 121u);  // running mean/var of 121 batch norms
}

TEST(Model, CheckpointRoundTrip) {
  std::mt19937_64 rng(6);
  const ModelConfig c = toy_config(FpnMode::additive, AttentionMode::prior_and_roi);
  Model m(c);
  m.init();
  const ModelInput in = random_input(c, 3, rng);
  m.forward(in, true, nullptr);  // move the running statistics
  testutil::TempDir dir("ckpt");
  save_checkpoint(dir / "m.ckpt", m, R"({"epoch": 3})");
  auto loaded = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(loaded.model->config(), c);
  EXPECT_NE(loaded.metadata.find("\"epoch\""), std::string::npos);
  EXPECT_EQ(loaded.model->forward(in, false, nullptr).logits, m.forward(in, false, nullptr).logits);

  ModelConfig other = c;
  other.fpn = FpnMode::concat;
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt", other), std::exception);
  Model wrong(other);
  EXPECT_THROW(load_parameters(dir / "m.ckpt", wrong), std::exception);
}

TEST(Model, CheckpointCorruptionDetected) {
  const ModelConfig c = toy_config(FpnMode::none, AttentionMode::baseline);
  Model m(c);
  m.init();
  testutil::TempDir dir("ckpt_bad");
  save_checkpoint(dir / "m.ckpt", m);
  std::string bytes;
  {
    std::ifstream f(dir / "m.ckpt", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(f), {});
  }
  auto write = [&](const std::string& b) {
    std::ofstream(dir / "x.ckpt", std::ios::binary) << b;
    return dir / "x.ckpt";
  };
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  EXPECT_THROW(read_archive(write(flipped)), CheckpointError);
  EXPECT_THROW(read_archive(write(bytes.substr(0, bytes.size() - 3))), CheckpointError);
  std::string version = bytes;
  version[8] = 9;
  try {
    read_archive(write(version));
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_archive(write("NOTACKPT" + bytes.substr(8))), CheckpointError);
}

TEST(Model, ImportParametersCopiesMatchingTensors) {
  const ModelConfig a = toy_config(FpnMode::none, AttentionMode::baseline);
  ModelConfig b = toy_config(FpnMode::additive, AttentionMode::roi_only);
  Model src(a), dst(b);
  src.init();
  dst.init();
  testutil::TempDir dir("import");
  save_checkpoint(dir / "a.ckpt", src);
  const int n = import_parameters(dir / "a.ckpt", dst);
  EXPECT_GT(n, 0);
  EXPECT_EQ(dst.head_weight().value, src.head_weight().value);
  ModelConfig c = toy_config(FpnMode::none, AttentionMode::prior_and_roi);
  Model wider(c);
  EXPECT_THROW(import_parameters(dir / "a.ckpt", wider), std::exception);  // heads 3x8 vs 3x16
  nn::ParamRefs sr, dr;
  src.backbone().refs(sr);
  dst.backbone().refs(dr);
  for (std::size_t i = 0; i < sr.params.size(); ++i) EXPECT_EQ(sr.params[i]->value, dr.params[i]->value);
}
