#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cxr/tensor.hpp"

/// Layers with explicit forward caches. Forward never stores state in the
/// layer itself (except batch-norm running statistics), so one parameter set
/// can be applied several times per step and back-propagated per call.
/// All activations are N x C x H x W.
namespace cxr::nn {

using Rng = std::mt19937_64;

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool decay = true;

  Param() = default;
  Param(std::string n, Shape shape, bool weight_decay = true)
      : name(std::move(n)), value(shape), grad(shape), decay(weight_decay) {}
  void zero_grad() { grad.fill(0.0); }
};

/// Non-trainable state saved with parameters (batch-norm running stats).
struct Buffer {
  std::string name;
  Tensor* value = nullptr;
};

struct ParamRefs {
  std::vector<Param*> params;
  std::vector<Buffer> buffers;

  void append(const ParamRefs& other) {
    params.insert(params.end(), other.params.begin(), other.params.end());
    buffers.insert(buffers.end(), other.buffers.begin(), other.buffers.end());
  }
};

/// Uniform(-b, b) with b = gain * sqrt(3 / fan_in); gain sqrt(2) gives He
/// initialisation, gain 1/sqrt(3) the 1/sqrt(fan_in) bound.
void init_fan_in_uniform(Tensor& weight, int fan_in, double gain, Rng& rng);

class Conv2d {
 public:
  struct Cache {
    Tensor cols;  // N x (C*k*k) x (Ho*Wo)
    Shape input_shape;
  };

  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride = 1,
         int pad = 0, bool bias = true);

  Tensor forward(const Tensor& x, Cache* cache) const;
  /// Accumulates weight/bias gradients; returns dL/dx (empty when
  /// `input_grad` is false).
  Tensor backward(const Cache& cache, const Tensor& dy, bool input_grad = true);

  void init(Rng& rng, double gain);
  void refs(ParamRefs& out);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int output_extent(int input) const { return (input + 2 * pad_ - kernel_) / stride_ + 1; }

  Param weight;  // out x in x k x k
  Param bias;    // out (empty when disabled)

 private:
  void im2col(const double* x, int h, int w, double* cols) const;
  void col2im(const double* cols, int h, int w, double* dx) const;

  int in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
  bool has_bias_ = false;
};

/// Normalises over N, H and W per channel. Training mode uses batch
/// statistics (rejecting a single value per channel) and updates the running
/// estimates; evaluation mode uses the running estimates.
class BatchNorm {
 public:
  struct Cache {
    Tensor xhat;
    std::vector<double> inv_std;
    bool training = false;
  };

  BatchNorm() = default;
  BatchNorm(const std::string& name, int channels, double momentum = 0.1, double eps = 1e-5);

  Tensor forward(const Tensor& x, bool training, Cache* cache);
  Tensor backward(const Cache& cache, const Tensor& dy);
  void refs(ParamRefs& out);

  Param gamma;
  Param beta;
  Tensor running_mean;
  Tensor running_var;

 private:
  std::string name_;
  int channels_ = 0;
  double momentum_ = 0.1;
  double eps_ = 1e-5;
};

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& y, const Tensor& dy);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor leaky_relu_backward(const Tensor& y, const Tensor& dy, double slope);
Tensor sigmoid(const Tensor& x);
Tensor sigmoid_backward(const Tensor& y, const Tensor& dy);

/// N x C x H x W -> N x C x 1 x 1.
Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& dy);

struct MaxPoolCache {
  std::vector<std::int64_t> argmax;  // flat input index per output element
  Shape input_shape;
};
Tensor global_max_pool(const Tensor& x, MaxPoolCache* cache);
Tensor max_pool2d(const Tensor& x, int kernel, int stride, int pad, MaxPoolCache* cache);
Tensor max_pool_backward(const MaxPoolCache& cache, const Tensor& dy);

/// Non-overlapping k x k average pooling (stride k).
Tensor avg_pool2d(const Tensor& x, int kernel);
Tensor avg_pool2d_backward(const Shape& input_shape, const Tensor& dy, int kernel);

Tensor upsample_nearest2x(const Tensor& x);
Tensor upsample_nearest2x_backward(const Tensor& dy);

Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Splits dL/d(concat) into the parts for the first `channels_a` channels and the rest.
std::pair<Tensor, Tensor> split_channels(const Tensor& d, int channels_a);

}  // namespace cxr::nn
