#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cxr/apam.hpp"
#include "cxr/nn/backbone.hpp"

namespace cxr {

enum class FpnMode { none, additive, concat };
enum class AttentionMode { baseline, prior_only, roi_only, prior_and_roi };

const char* fpn_mode_name(FpnMode mode);
FpnMode parse_fpn_mode(const std::string& name);
const char* attention_mode_name(AttentionMode mode);
AttentionMode parse_attention_mode(const std::string& name);

inline bool uses_roi(AttentionMode m) {
  return m == AttentionMode::roi_only || m == AttentionMode::prior_and_roi;
}
inline bool uses_priors(AttentionMode m) {
  return m == AttentionMode::prior_only || m == AttentionMode::prior_and_roi;
}

struct ModelConfig {
  std::string backbone = "toy_cnn";  // toy_cnn | densenet121
  FpnMode fpn = FpnMode::none;
  AttentionMode attention = AttentionMode::prior_and_roi;
  int n_classes = 0;
  /// Backbone output channels C. Fixed at 1024 for densenet121.
  int feature_channels = 64;
  int input_edge = 224;
  /// Width C' of the FPN output.
  int fpn_channels = 256;
  /// One APAM parameter set per class instead of one shared set for all
  /// prior branches.
  bool per_class_params = false;
  std::uint64_t seed = 0;

  void validate() const;
  /// Channels of the attended feature map (C, or C' with an FPN).
  int attended_channels() const;
  /// 7, or 14 with an FPN.
  int feature_extent() const;
  int head_channels() const;
  bool operator==(const ModelConfig&) const = default;
};

std::string to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

/// Lateral (14 x 14) and top (7 x 7) 1x1 projections to C', nearest x2
/// upsampling of the top, merge by sum or channel concatenation, then a 3x3
/// smoothing convolution back to C'.
class Fpn {
 public:
  struct Cache {
    nn::Conv2d::Cache lateral, top, smooth;
  };

  Fpn() = default;
  Fpn(FpnMode mode, int lateral_channels, int top_channels, int out_channels);

  Tensor forward(const Tensor& lateral, const Tensor& top, Cache* cache) const;
  /// Returns {dL/d lateral, dL/d top}.
  std::pair<Tensor, Tensor> backward(const Cache& cache, const Tensor& dy);
  void init(nn::Rng& rng);
  void refs(nn::ParamRefs& out);
  FpnMode mode() const { return mode_; }

 private:
  FpnMode mode_ = FpnMode::none;
  int out_channels_ = 0;
  nn::Conv2d lateral_, top_, smooth_;
};

/// Inputs for one batch. Masks are already at the feature resolution:
/// roi is N x 1 x h x w, priors N x K x h x w. Either may be empty when the
/// attention mode does not use it.
struct ModelInput {
  Tensor images;
  Tensor roi;
  Tensor priors;
};

struct Branches {
  Tensor roi;                 // A_ROI
  std::vector<Tensor> prior;  // A_p^c, one per class
};

struct ModelOutput {
  Tensor logits;                  // N x K
  std::vector<Tensor> head_input;  // A_cat^c per class, N x C_head x h x w
};

class Model {
 public:
  struct Cache {
    std::unique_ptr<nn::Backbone::Cache> backbone;
    Fpn::Cache fpn;
    Shape feature_shape;
    ApamCache roi;
    std::vector<ApamCache> prior;
    std::vector<Tensor> head_input;
  };

  explicit Model(const ModelConfig& config);
  ~Model();
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }

  void init();
  ModelOutput forward(const ModelInput& input, bool training, std::unique_ptr<Cache>* cache);
  /// Back-propagates dL/dlogits (N x K) into every parameter gradient.
  void backward(Cache& cache, const Tensor& d_logits);

  /// Backbone (+FPN) features F.
  Tensor features(const Tensor& images, bool training);
  /// A_ROI and A_p^c; branches a mode lacks are F itself.
  Branches attention_branches(const Tensor& features, const ModelInput& input, bool training);

  /// Parameters grouped by checkpoint section: backbone, fpn, apam, heads.
  std::vector<std::pair<std::string, nn::ParamRefs>> sections();
  nn::ParamRefs all_params();
  void zero_grad();

  nn::Backbone& backbone() { return *backbone_; }
  Fpn& fpn() { return fpn_; }
  ApamParams& roi_apam() { return roi_apam_; }
  ApamParams& prior_apam(int class_id);
  nn::Param& head_weight() { return head_weight_; }  // K x C_head
  nn::Param& head_bias() { return head_bias_; }      // K

 private:
  void check_input(const ModelInput& input) const;

  ModelConfig config_;
  std::unique_ptr<nn::Backbone> backbone_;
  Fpn fpn_;
  ApamParams roi_apam_;
  std::vector<ApamParams> prior_apam_;
  nn::Param head_weight_;
  nn::Param head_bias_;
};

/// logit_c = w_c . GAP(A_cat^c) + b_c for one class; returns N logits.
Tensor classify_head(const Tensor& head_input, const double* weight, double bias);

/// CAM heatmap: sum over channels of w_c[ch] * A_cat^c[ch] (no bias).
/// Input N x C x h x w, output N x h x w.
Tensor cam(const Tensor& head_input, const double* weight);

}  // namespace cxr
