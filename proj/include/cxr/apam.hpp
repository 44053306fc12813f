#pragma once

#include <array>
#include <string>

#include "cxr/nn/layers.hpp"

namespace cxr {

/// Per-channel global pooling of the feature map F and the masked map F_m.
/// Each tensor is N x C x 1 x 1.
struct Descriptors {
  Tensor f_avg, f_max, m_avg, m_max;
};

/// 1x1 convolution -> batch norm -> activation, applied to N x C x 1 x 1.
struct ConvBlock {
  enum class Activation { leaky_relu, sigmoid };

  struct Cache {
    nn::Conv2d::Cache conv;
    nn::BatchNorm::Cache norm;
    Tensor out;
  };

  static constexpr double kLeakySlope = 0.2;

  ConvBlock() = default;
  ConvBlock(const std::string& name, int in, int out, Activation act);

  Tensor forward(const Tensor& x, bool training, Cache* cache);
  Tensor backward(const Cache& cache, const Tensor& dy);

  nn::Conv2d conv;
  nn::BatchNorm norm;
  Activation activation = Activation::leaky_relu;
};

/// Hidden width of the weight blocks: max(C / 16, 8).
int apam_hidden_width(int channels);

/// CB1..CB4 (C -> C_h, leaky ReLU 0.2) and CB5 (C_h -> C, sigmoid).
struct ApamParams {
  ApamParams() = default;
  ApamParams(const std::string& name, int channels);

  void init(nn::Rng& rng);
  void refs(nn::ParamRefs& out);
  int channels() const { return channels_; }
  int hidden() const { return hidden_; }

  std::array<ConvBlock, 5> cb;

 private:
  int channels_ = 0;
  int hidden_ = 0;
};

struct AttentionOutput {
  Tensor attention;  // A,   N x C x H x W
  Tensor weight;     // W,   N x C x 1 x 1
  Tensor masked;     // F_m, N x C x H x W
};

/// F_m = F * M with M (N x 1 x H x W) broadcast over channels.
Tensor apply_mask(const Tensor& features, const Tensor& mask);

Descriptors pool_descriptors(const Tensor& features, const Tensor& masked);

struct WeightCache {
  std::array<ConvBlock::Cache, 5> cb;
};

/// W = CB5[CB1(F_avg) + CB2(F_max) + CB3(M_avg) + CB4(M_max)].
Tensor compute_weight(const Descriptors& desc, ApamParams& params, bool training,
                      WeightCache* cache);

/// A = W * F + (1 - W) * F_m.
Tensor attend(const Tensor& features, const Tensor& masked, const Tensor& weight);

struct ApamCache {
  Tensor features;
  Tensor mask;
  AttentionOutput out;
  nn::MaxPoolCache f_max, m_max;
  WeightCache weight;
};

AttentionOutput apam_forward(const Tensor& features, const Tensor& mask, ApamParams& params,
                             bool training, ApamCache* cache);

/// Accumulates parameter gradients and returns dL/dF.
Tensor apam_backward(const ApamCache& cache, const Tensor& d_attention, ApamParams& params);

}  // namespace cxr
