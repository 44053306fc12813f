#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cxr/nn/layers.hpp"

namespace cxr::nn {

/// Feature extractor contract: 3 x 224 x 224 images in, a C x 7 x 7 top
/// feature map plus the 14 x 14 stage that feeds the optional FPN.
class Backbone {
 public:
  struct Output {
    Tensor top;      // N x C x 7 x 7
    Tensor lateral;  // N x C_lat x 14 x 14
  };
  struct Cache {
    virtual ~Cache() = default;
  };

  virtual ~Backbone() = default;
  virtual Output forward(const Tensor& images, bool training, std::unique_ptr<Cache>* cache) = 0;
  /// Back-propagates into parameters; `d_lateral` may be empty.
  virtual void backward(Cache& cache, const Tensor& d_top, const Tensor& d_lateral) = 0;
  virtual int channels() const = 0;
  virtual int lateral_channels() const = 0;
  virtual void init(Rng& rng) = 0;
  virtual void refs(ParamRefs& out) = 0;
};

/// Four strided conv + ReLU blocks: 224 -(k4,s4)-> 56 -> 28 -> 14 -> 7.
/// The 14 x 14 block is the lateral tap.
class ToyCnn final : public Backbone {
 public:
  explicit ToyCnn(int channels = 64);

  Output forward(const Tensor& images, bool training, std::unique_ptr<Cache>* cache) override;
  void backward(Cache& cache, const Tensor& d_top, const Tensor& d_lateral) override;
  int channels() const override { return channels_; }
  int lateral_channels() const override { return channels_; }
  void init(Rng& rng) override;
  void refs(ParamRefs& out) override;

  std::vector<Conv2d>& convs() { return convs_; }

 private:
  int channels_;
  std::vector<Conv2d> convs_;
};

/// DenseNet-121 (growth 32, blocks 6/12/24/16) with torchvision parameter
/// names, so externally trained weights can be imported. The lateral tap is
/// the output of dense block 3 (1024 x 14 x 14); the top is relu(norm5).
class DenseNet121 final : public Backbone {
 public:
  DenseNet121();
  ~DenseNet121() override;

  Output forward(const Tensor& images, bool training, std::unique_ptr<Cache>* cache) override;
  void backward(Cache& cache, const Tensor& d_top, const Tensor& d_lateral) override;
  int channels() const override { return 1024; }
  int lateral_channels() const override { return 1024; }
  void init(Rng& rng) override;
  void refs(ParamRefs& out) override;

 private:
  struct DenseLayer;
  struct DenseBlock;
  struct Transition;
  struct State;

  Conv2d conv0_;
  BatchNorm norm0_;
  std::vector<std::unique_ptr<DenseBlock>> blocks_;
  std::vector<std::unique_ptr<Transition>> transitions_;
  BatchNorm norm5_;
};

std::unique_ptr<Backbone> make_backbone(const std::string& kind, int toy_channels);

}  // namespace cxr::nn
