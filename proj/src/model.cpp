#include "cxr/model.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace cxr {

using nlohmann::json;

const char* fpn_mode_name(FpnMode mode) {
  switch (mode) {
    case FpnMode::none: return "none";
    case FpnMode::additive: return "additive";
    case FpnMode::concat: return "concat";
  }
  return "?";
}

FpnMode parse_fpn_mode(const std::string& name) {
  if (name == "none") return FpnMode::none;
  if (name == "additive") return FpnMode::additive;
  if (name == "concat") return FpnMode::concat;
  throw std::invalid_argument("unknown fpn mode '" + name + "' (none|additive|concat)");
}

const char* attention_mode_name(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::baseline: return "baseline";
    case AttentionMode::prior_only: return "prior_only";
    case AttentionMode::roi_only: return "roi_only";
    case AttentionMode::prior_and_roi: return "prior_and_roi";
  }
  return "?";
}

AttentionMode parse_attention_mode(const std::string& name) {
  if (name == "baseline") return AttentionMode::baseline;
  if (name == "prior_only") return AttentionMode::prior_only;
  if (name == "roi_only") return AttentionMode::roi_only;
  if (name == "prior_and_roi") return AttentionMode::prior_and_roi;
  throw std::invalid_argument("unknown attention mode '" + name +
                              "' (baseline|prior_only|roi_only|prior_and_roi)");
}

// ------------------------------------------------------------ ModelConfig

void ModelConfig::validate() const {
  if (backbone != "toy_cnn" && backbone != "densenet121") {
    throw std::invalid_argument("model.backbone must be toy_cnn or densenet121, got '" +
                                backbone + "'");
  }
  if (n_classes < 1) throw std::invalid_argument("model.n_classes must be >= 1");
  if (backbone == "densenet121" && feature_channels != 1024) {
    throw std::invalid_argument("model.feature_channels must be 1024 for densenet121");
  }
  if (backbone == "toy_cnn" && (feature_channels < 4 || feature_channels % 4 != 0)) {
    throw std::invalid_argument("model.feature_channels must be a positive multiple of 4");
  }
  if (input_edge != 224) {
    throw std::invalid_argument("model.input_edge must be 224 (7x7 backbone output contract)");
  }
  if (fpn != FpnMode::none && fpn_channels < 1) {
    throw std::invalid_argument("model.fpn_channels must be >= 1");
  }
}

int ModelConfig::attended_channels() const {
  return fpn == FpnMode::none ? feature_channels : fpn_channels;
}

int ModelConfig::feature_extent() const { return fpn == FpnMode::none ? 7 : 14; }

int ModelConfig::head_channels() const {
  return attention == AttentionMode::prior_and_roi ? 2 * attended_channels()
                                                   : attended_channels();
}

std::string to_json(const ModelConfig& c) {
  json j = {{"backbone", c.backbone},
            {"fpn", fpn_mode_name(c.fpn)},
            {"attention", attention_mode_name(c.attention)},
            {"n_classes", c.n_classes},
            {"feature_channels", c.feature_channels},
            {"input_edge", c.input_edge},
            {"fpn_channels", c.fpn_channels},
            {"per_class_params", c.per_class_params},
            {"seed", c.seed}};
  return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  static const std::set<std::string> known = {"backbone",       "fpn",          "attention",
                                              "n_classes",      "feature_channels",
                                              "input_edge",     "fpn_channels",
                                              "per_class_params", "seed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      throw std::invalid_argument("model config: unknown key '" + it.key() + "'");
    }
  }
  ModelConfig c;
  c.backbone = j.value("backbone", c.backbone);
  if (c.backbone == "densenet121") c.feature_channels = 1024;
  c.fpn = parse_fpn_mode(j.value("fpn", std::string(fpn_mode_name(c.fpn))));
  c.attention =
      parse_attention_mode(j.value("attention", std::string(attention_mode_name(c.attention))));
  c.n_classes = j.value("n_classes", c.n_classes);
  c.feature_channels = j.value("feature_channels", c.feature_channels);
  c.input_edge = j.value("input_edge", c.input_edge);
  c.fpn_channels = j.value("fpn_channels", c.fpn_channels);
  c.per_class_params = j.value("per_class_params", c.per_class_params);
  c.seed = j.value("seed", c.seed);
  return c;
}

// -------------------------------------------------------------------- Fpn

Fpn::Fpn(FpnMode mode, int lateral_channels, int top_channels, int out_channels)
    : mode_(mode), out_channels_(out_channels) {
  if (mode == FpnMode::none) return;
  lateral_ = nn::Conv2d("lateral", lateral_channels, out_channels, 1);
  top_ = nn::Conv2d("top", top_channels, out_channels, 1);
  const int merged = mode == FpnMode::concat ? 2 * out_channels : out_channels;
  smooth_ = nn::Conv2d("smooth", merged, out_channels, 3, 1, 1);
}

Tensor Fpn::forward(const Tensor& lateral, const Tensor& top, Cache* cache) const {
  if (mode_ == FpnMode::none) throw std::logic_error("Fpn::forward with mode none");
  if (lateral.empty() || top.empty()) throw std::invalid_argument("FPN: missing stage output");
  Tensor l = lateral_.forward(lateral, cache ? &cache->lateral : nullptr);
  Tensor t = nn::upsample_nearest2x(top_.forward(top, cache ? &cache->top : nullptr));
  if (l.shape() != t.shape()) {
    throw std::invalid_argument("FPN: lateral " + to_string(l.shape()) +
                                " and upsampled top " + to_string(t.shape()) + " differ");
  }
  Tensor merged = mode_ == FpnMode::additive ? l + t : nn::concat_channels(l, t);
  return smooth_.forward(merged, cache ? &cache->smooth : nullptr);
}

std::pair<Tensor, Tensor> Fpn::backward(const Cache& cache, const Tensor& dy) {
  Tensor d_merged = smooth_.backward(cache.smooth, dy);
  Tensor d_l, d_t;
  if (mode_ == FpnMode::additive) {
    d_l = d_merged;
    d_t = std::move(d_merged);
  } else {
    std::tie(d_l, d_t) = nn::split_channels(d_merged, out_channels_);
  }
  return {lateral_.backward(cache.lateral, d_l),
          top_.backward(cache.top, nn::upsample_nearest2x_backward(d_t))};
}

void Fpn::init(nn::Rng& rng) {
  if (mode_ == FpnMode::none) return;
  lateral_.init(rng, 1.0);
  top_.init(rng, 1.0);
  smooth_.init(rng, 1.0);
}

void Fpn::refs(nn::ParamRefs& out) {
  if (mode_ == FpnMode::none) return;
  lateral_.refs(out);
  top_.refs(out);
  smooth_.refs(out);
}

// ------------------------------------------------------------------ heads

Tensor classify_head(const Tensor& head_input, const double* weight, double bias) {
  const Tensor pooled = nn::global_avg_pool(head_input);
  const int n = head_input.dim(0), c = head_input.dim(1);
  Tensor logits({n});
  for (int i = 0; i < n; ++i) {
    double z = bias;
    for (int ch = 0; ch < c; ++ch) z += weight[ch] * pooled[static_cast<std::size_t>(i) * c + ch];
    logits[i] = z;
  }
  return logits;
}

Tensor cam(const Tensor& head_input, const double* weight) {
  const int n = head_input.dim(0), c = head_input.dim(1), h = head_input.dim(2),
            w = head_input.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor out({n, h, w});
  for (int i = 0; i < n; ++i) {
    double* o = out.slice(i);
    for (int ch = 0; ch < c; ++ch) {
      const double* a = head_input.slice(i) + ch * hw;
      for (std::size_t p = 0; p < hw; ++p) o[p] += weight[ch] * a[p];
    }
  }
  return out;
}

// ------------------------------------------------------------------ Model

namespace {

/// Channel `c` of an N x K x h x w tensor as N x 1 x h x w.
Tensor channel(const Tensor& t, int c) {
  const int n = t.dim(0), k = t.dim(1);
  const std::size_t hw = static_cast<std::size_t>(t.dim(2)) * t.dim(3);
  Tensor out({n, 1, t.dim(2), t.dim(3)});
  for (int i = 0; i < n; ++i) {
    const double* src = t.data() + (static_cast<std::size_t>(i) * k + c) * hw;
    std::copy(src, src + hw, out.slice(i));
  }
  return out;
}

}  // namespace

Model::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  backbone_ = nn::make_backbone(config_.backbone, config_.feature_channels);
  if (config_.fpn != FpnMode::none) {
    fpn_ = Fpn(config_.fpn, backbone_->lateral_channels(), backbone_->channels(),
               config_.fpn_channels);
  }
  const int c = config_.attended_channels();
  if (uses_roi(config_.attention)) roi_apam_ = ApamParams("roi", c);
  if (uses_priors(config_.attention)) {
    if (config_.per_class_params) {
      for (int k = 0; k < config_.n_classes; ++k) {
        prior_apam_.emplace_back("prior" + std::to_string(k), c);
      }
    } else {
      prior_apam_.emplace_back("prior", c);
    }
  }
  head_weight_ = nn::Param("weight", {config_.n_classes, config_.head_channels()});
  head_bias_ = nn::Param("bias", {config_.n_classes});
}

Model::~Model() = default;

void Model::init() {
  nn::Rng rng(config_.seed);
  backbone_->init(rng);
  fpn_.init(rng);
  if (uses_roi(config_.attention)) roi_apam_.init(rng);
  for (auto& p : prior_apam_) p.init(rng);
  nn::init_fan_in_uniform(head_weight_.value, config_.head_channels(), 1.0 / std::sqrt(3.0), rng);
  head_bias_.value.fill(0.0);
}

ApamParams& Model::prior_apam(int class_id) {
  if (prior_apam_.empty()) throw std::logic_error("model has no prior attention branch");
  return config_.per_class_params ? prior_apam_.at(class_id) : prior_apam_.front();
}

void Model::check_input(const ModelInput& in) const {
  const Tensor& x = in.images;
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != config_.input_edge ||
      x.dim(3) != config_.input_edge) {
    throw std::invalid_argument("model input must be N x 3 x 224 x 224, got " +
                                to_string(x.shape()));
  }
  const int n = x.dim(0), e = config_.feature_extent();
  if (uses_roi(config_.attention)) {
    if (in.roi.shape() != Shape{n, 1, e, e}) {
      throw std::invalid_argument("ROI masks must be " + to_string({n, 1, e, e}) + ", got " +
                                  to_string(in.roi.shape()));
    }
  }
  if (uses_priors(config_.attention)) {
    if (in.priors.rank() != 4 || in.priors.dim(1) != config_.n_classes) {
      throw std::invalid_argument(
          "prior set class count " +
          (in.priors.rank() == 4 ? std::to_string(in.priors.dim(1)) : std::string("0")) +
          " does not match the model's " + std::to_string(config_.n_classes) + " classes");
    }
    if (in.priors.shape() != Shape{n, config_.n_classes, e, e}) {
      throw std::invalid_argument("prior maps must be " + to_string({n, config_.n_classes, e, e}) +
                                  ", got " + to_string(in.priors.shape()));
    }
  }
}

Tensor Model::features(const Tensor& images, bool training) {
  nn::Backbone::Output bb = backbone_->forward(images, training, nullptr);
  return config_.fpn == FpnMode::none ? bb.top : fpn_.forward(bb.lateral, bb.top, nullptr);
}

Branches Model::attention_branches(const Tensor& f, const ModelInput& input, bool training) {
  Branches b;
  b.roi = uses_roi(config_.attention)
              ? apam_forward(f, input.roi, roi_apam_, training, nullptr).attention
              : f;
  for (int c = 0; c < config_.n_classes; ++c) {
    b.prior.push_back(uses_priors(config_.attention)
                          ? apam_forward(f, channel(input.priors, c), prior_apam(c), training,
                                         nullptr)
                                .attention
                          : f);
  }
  return b;
}

ModelOutput Model::forward(const ModelInput& input, bool training, std::unique_ptr<Cache>* cache) {
  check_input(input);
  auto state = std::make_unique<Cache>();
  Cache* s = cache ? state.get() : nullptr;
  const int n = input.images.dim(0), k = config_.n_classes;

  nn::Backbone::Output bb = backbone_->forward(input.images, training, s ? &s->backbone : nullptr);
  Tensor f = config_.fpn == FpnMode::none
                 ? std::move(bb.top)
                 : fpn_.forward(bb.lateral, bb.top, s ? &s->fpn : nullptr);
  if (s) {
    s->feature_shape = f.shape();
    s->prior.resize(k);
  }

  const AttentionMode mode = config_.attention;
  Tensor a_roi;
  if (uses_roi(mode)) {
    a_roi = apam_forward(f, input.roi, roi_apam_, training, s ? &s->roi : nullptr).attention;
  }

  ModelOutput out;
  out.logits = Tensor({n, k});
  out.head_input.resize(k);
  for (int c = 0; c < k; ++c) {
    Tensor head_in;
    if (uses_priors(mode)) {
      Tensor a_p = apam_forward(f, channel(input.priors, c), prior_apam(c), training,
                                s ? &s->prior[c] : nullptr)
                       .attention;
      head_in = mode == AttentionMode::prior_and_roi ? nn::concat_channels(a_roi, a_p)
                                                     : std::move(a_p);
    } else if (mode == AttentionMode::roi_only) {
      head_in = a_roi;
    } else {
      head_in = f;
    }
    const Tensor z = classify_head(head_in, head_weight_.value.data() + c * head_in.dim(1),
                                   head_bias_.value[c]);
    for (int i = 0; i < n; ++i) out.logits.at(i, c) = z[i];
    out.head_input[c] = std::move(head_in);
  }
  if (s) {
    s->head_input = out.head_input;
    *cache = std::move(state);
  }
  return out;
}

void Model::backward(Cache& cache, const Tensor& d_logits) {
  const int k = config_.n_classes;
  const int n = cache.feature_shape[0];
  if (d_logits.shape() != Shape{n, k}) {
    throw std::invalid_argument("Model::backward: d_logits must be " + to_string({n, k}));
  }
  const AttentionMode mode = config_.attention;
  const int c_att = config_.attended_channels();
  Tensor d_f(cache.feature_shape);
  Tensor d_roi;
  if (uses_roi(mode)) d_roi = Tensor(cache.feature_shape);

  for (int c = 0; c < k; ++c) {
    const Tensor& a_cat = cache.head_input[c];
    const int ch_n = a_cat.dim(1);
    const std::size_t hw = static_cast<std::size_t>(a_cat.dim(2)) * a_cat.dim(3);
    const Tensor pooled = nn::global_avg_pool(a_cat);
    double* gw = head_weight_.grad.data() + c * ch_n;
    const double* w = head_weight_.value.data() + c * ch_n;
    Tensor d_cat(a_cat.shape());
    for (int i = 0; i < n; ++i) {
      const double g = d_logits.at(i, c);
      head_bias_.grad[c] += g;
      for (int ch = 0; ch < ch_n; ++ch) {
        gw[ch] += g * pooled[static_cast<std::size_t>(i) * ch_n + ch];
        const double v = g * w[ch] / hw;
        double* d = d_cat.slice(i) + ch * hw;
        for (std::size_t p = 0; p < hw; ++p) d[p] = v;
      }
    }
    switch (mode) {
      case AttentionMode::baseline:
        d_f += d_cat;
        break;
      case AttentionMode::roi_only:
        d_roi += d_cat;
        break;
      case AttentionMode::prior_only:
        d_f += apam_backward(cache.prior[c], d_cat, prior_apam(c));
        break;
      case AttentionMode::prior_and_roi: {
        auto [d_r, d_p] = nn::split_channels(d_cat, c_att);
        d_roi += d_r;
        d_f += apam_backward(cache.prior[c], d_p, prior_apam(c));
        break;
      }
    }
  }
  if (uses_roi(mode)) d_f += apam_backward(cache.roi, d_roi, roi_apam_);

  if (config_.fpn == FpnMode::none) {
    backbone_->backward(*cache.backbone, d_f, Tensor());
  } else {
    auto [d_lat, d_top] = fpn_.backward(cache.fpn, d_f);
    backbone_->backward(*cache.backbone, d_top, d_lat);
  }
}

std::vector<std::pair<std::string, nn::ParamRefs>> Model::sections() {
  std::vector<std::pair<std::string, nn::ParamRefs>> out(4);
  out[0].first = "backbone";
  backbone_->refs(out[0].second);
  out[1].first = "fpn";
  fpn_.refs(out[1].second);
  out[2].first = "apam";
  if (uses_roi(config_.attention)) roi_apam_.refs(out[2].second);
  for (auto& p : prior_apam_) p.refs(out[2].second);
  out[3].first = "heads";
  out[3].second.params = {&head_weight_, &head_bias_};
  return out;
}

nn::ParamRefs Model::all_params() {
  nn::ParamRefs all;
  for (auto& [name, refs] : sections()) all.append(refs);
  return all;
}

void Model::zero_grad() {
  for (nn::Param* p : all_params().params) p->zero_grad();
}

}  // namespace cxr
