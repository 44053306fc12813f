#include "cxr/apam.hpp"

#include <algorithm>
#include <stdexcept>

namespace cxr {

using nn::BatchNorm;
using nn::Conv2d;

ConvBlock::ConvBlock(const std::string& name, int in, int out, Activation act)
    : conv(name + ".conv", in, out, 1, 1, 0, false), norm(name + ".norm", out), activation(act) {}

Tensor ConvBlock::forward(const Tensor& x, bool training, Cache* cache) {
  Tensor y = conv.forward(x, cache ? &cache->conv : nullptr);
  y = norm.forward(y, training, cache ? &cache->norm : nullptr);
  y = activation == Activation::sigmoid ? nn::sigmoid(y) : nn::leaky_relu(y, kLeakySlope);
  if (cache) cache->out = y;
  return y;
}

Tensor ConvBlock::backward(const Cache& cache, const Tensor& dy) {
  Tensor d = activation == Activation::sigmoid
                 ? nn::sigmoid_backward(cache.out, dy)
                 : nn::leaky_relu_backward(cache.out, dy, kLeakySlope);
  d = norm.backward(cache.norm, d);
  return conv.backward(cache.conv, d);
}

int apam_hidden_width(int channels) { return std::max(channels / 16, 8); }

ApamParams::ApamParams(const std::string& name, int channels)
    : channels_(channels), hidden_(apam_hidden_width(channels)) {
  using A = ConvBlock::Activation;
  for (int i = 0; i < 4; ++i) {
    cb[i] = ConvBlock(name + ".cb" + std::to_string(i + 1), channels, hidden_, A::leaky_relu);
  }
  cb[4] = ConvBlock(name + ".cb5", hidden_, channels, A::sigmoid);
}

void ApamParams::init(nn::Rng& rng) {
  for (auto& b : cb) {
    b.conv.init(rng, 1.0);
    b.norm.gamma.value.fill(1.0);
    b.norm.beta.value.fill(0.0);
  }
}

void ApamParams::refs(nn::ParamRefs& out) {
  for (auto& b : cb) {
    b.conv.refs(out);
    b.norm.refs(out);
  }
}

Tensor apply_mask(const Tensor& features, const Tensor& mask) {
  if (features.rank() != 4 || mask.rank() != 4 || mask.dim(1) != 1 ||
      mask.dim(0) != features.dim(0) || mask.dim(2) != features.dim(2) ||
      mask.dim(3) != features.dim(3)) {
    throw std::invalid_argument("apply_mask: mask " + to_string(mask.shape()) +
                                " does not match features " + to_string(features.shape()));
  }
  const int n = features.dim(0), c = features.dim(1);
  const std::size_t hw = static_cast<std::size_t>(features.dim(2)) * features.dim(3);
  Tensor out(features.shape());
  for (int i = 0; i < n; ++i) {
    const double* m = mask.slice(i);
    for (int ch = 0; ch < c; ++ch) {
      const double* f = features.slice(i) + ch * hw;
      double* o = out.slice(i) + ch * hw;
      for (std::size_t p = 0; p < hw; ++p) o[p] = f[p] * m[p];
    }
  }
  return out;
}

Descriptors pool_descriptors(const Tensor& features, const Tensor& masked) {
  require_same_shape(features, masked, "pool_descriptors");
  return {nn::global_avg_pool(features), nn::global_max_pool(features, nullptr),
          nn::global_avg_pool(masked), nn::global_max_pool(masked, nullptr)};
}

Tensor compute_weight(const Descriptors& desc, ApamParams& params, bool training,
                      WeightCache* cache) {
  const Tensor* inputs[4] = {&desc.f_avg, &desc.f_max, &desc.m_avg, &desc.m_max};
  Tensor sum;
  for (int i = 0; i < 4; ++i) {
    Tensor y = params.cb[i].forward(*inputs[i], training, cache ? &cache->cb[i] : nullptr);
    if (i == 0) {
      sum = std::move(y);
    } else {
      sum += y;
    }
  }
  Tensor w = params.cb[4].forward(sum, training, cache ? &cache->cb[4] : nullptr);
  if (!all_finite(w)) throw std::runtime_error("compute_weight: non-finite attention weight");
  return w;
}

Tensor attend(const Tensor& features, const Tensor& masked, const Tensor& weight) {
  require_same_shape(features, masked, "attend");
  const int n = features.dim(0), c = features.dim(1);
  if (weight.size() != static_cast<std::size_t>(n) * c) {
    throw std::invalid_argument("attend: weight " + to_string(weight.shape()) +
                                " does not match features " + to_string(features.shape()));
  }
  const std::size_t hw = static_cast<std::size_t>(features.dim(2)) * features.dim(3);
  Tensor out(features.shape());
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const double w = weight[static_cast<std::size_t>(i) * c + ch];
      const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        out[base + p] = w * features[base + p] + (1.0 - w) * masked[base + p];
      }
    }
  }
  return out;
}

AttentionOutput apam_forward(const Tensor& features, const Tensor& mask, ApamParams& params,
                             bool training, ApamCache* cache) {
  if (features.rank() != 4 || features.dim(1) != params.channels()) {
    throw std::invalid_argument("apam_forward: features " + to_string(features.shape()) +
                                " do not have " + std::to_string(params.channels()) +
                                " channels");
  }
  AttentionOutput out;
  out.masked = apply_mask(features, mask);
  Descriptors desc{nn::global_avg_pool(features),
                   nn::global_max_pool(features, cache ? &cache->f_max : nullptr),
                   nn::global_avg_pool(out.masked),
                   nn::global_max_pool(out.masked, cache ? &cache->m_max : nullptr)};
  out.weight = compute_weight(desc, params, training, cache ? &cache->weight : nullptr);
  out.attention = attend(features, out.masked, out.weight);
  if (cache) {
    cache->features = features;
    cache->mask = mask;
    cache->out = out;
  }
  return out;
}

Tensor apam_backward(const ApamCache& cache, const Tensor& d_attention, ApamParams& params) {
  const Tensor& f = cache.features;
  const Tensor& fm = cache.out.masked;
  const Tensor& w = cache.out.weight;
  require_same_shape(f, d_attention, "apam_backward");
  const int n = f.dim(0), c = f.dim(1);
  const std::size_t hw = static_cast<std::size_t>(f.dim(2)) * f.dim(3);

  // A = W F + (1 - W) F_m
  Tensor d_f(f.shape()), d_fm(f.shape()), d_w(w.shape());
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t k = static_cast<std::size_t>(i) * c + ch;
      const double wk = w[k];
      double acc = 0.0;
      for (std::size_t p = 0; p < hw; ++p) {
        const double g = d_attention[k * hw + p];
        d_f[k * hw + p] = wk * g;
        d_fm[k * hw + p] = (1.0 - wk) * g;
        acc += g * (f[k * hw + p] - fm[k * hw + p]);
      }
      d_w[k] = acc;
    }
  }

  Tensor d_sum = params.cb[4].backward(cache.weight.cb[4], d_w);
  d_f += nn::global_avg_pool_backward(f.shape(), params.cb[0].backward(cache.weight.cb[0], d_sum));
  d_f += nn::max_pool_backward(cache.f_max, params.cb[1].backward(cache.weight.cb[1], d_sum));
  d_fm += nn::global_avg_pool_backward(f.shape(), params.cb[2].backward(cache.weight.cb[2], d_sum));
  d_fm += nn::max_pool_backward(cache.m_max, params.cb[3].backward(cache.weight.cb[3], d_sum));

  // F_m = F * M
  for (int i = 0; i < n; ++i) {
    const double* m = cache.mask.slice(i);
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) d_f[base + p] += d_fm[base + p] * m[p];
    }
  }
  return d_f;
}

}  // namespace cxr
