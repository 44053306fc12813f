#include "cxr/nn/backbone.hpp"

#include <cmath>
#include <stdexcept>

namespace cxr::nn {

namespace {

const double kHeGain = std::sqrt(2.0);

}  // namespace

// ----------------------------------------------------------------- ToyCnn

namespace {

struct ToyCache : Backbone::Cache {
  std::vector<Conv2d::Cache> conv;
  std::vector<Tensor> act;  // post-ReLU outputs
};

}  // namespace

ToyCnn::ToyCnn(int channels) : channels_(channels) {
  if (channels < 4) throw std::invalid_argument("ToyCnn: channels must be >= 4");
  convs_.emplace_back("conv0", 3, channels / 4, 4, 4, 0);
  convs_.emplace_back("conv1", channels / 4, channels / 2, 3, 2, 1);
  convs_.emplace_back("conv2", channels / 2, channels, 3, 2, 1);
  convs_.emplace_back("conv3", channels, channels, 3, 2, 1);
}

void ToyCnn::init(Rng& rng) {
  for (auto& c : convs_) c.init(rng, kHeGain);
}

void ToyCnn::refs(ParamRefs& out) {
  for (auto& c : convs_) c.refs(out);
}

Backbone::Output ToyCnn::forward(const Tensor& images, bool, std::unique_ptr<Cache>* cache) {
  auto state = std::make_unique<ToyCache>();
  state->conv.resize(convs_.size());
  Tensor x = images;
  std::vector<Tensor> acts;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    x = relu(convs_[i].forward(x, cache ? &state->conv[i] : nullptr));
    acts.push_back(x);
  }
  Output out{acts[3], acts[2]};
  if (cache) {
    state->act = std::move(acts);
    *cache = std::move(state);
  }
  return out;
}

void ToyCnn::backward(Cache& cache, const Tensor& d_top, const Tensor& d_lateral) {
  auto& state = dynamic_cast<ToyCache&>(cache);
  Tensor d = d_top;
  for (int i = static_cast<int>(convs_.size()) - 1; i >= 0; --i) {
    if (i == 2 && !d_lateral.empty()) d += d_lateral;
    d = relu_backward(state.act[i], d);
    d = convs_[i].backward(state.conv[i], d, /*input_grad=*/i > 0);
  }
}

// ------------------------------------------------------------ DenseNet121

struct DenseNet121::DenseLayer {
  BatchNorm norm1, norm2;
  Conv2d conv1, conv2;
  int in_channels;

  struct Cache {
    BatchNorm::Cache n1, n2;
    Tensor r1, r2;
    Conv2d::Cache c1, c2;
  };

  DenseLayer(const std::string& name, int in, int growth, int bn_size)
      : norm1(name + ".norm1", in),
        norm2(name + ".norm2", bn_size * growth),
        conv1(name + ".conv1", in, bn_size * growth, 1, 1, 0, false),
        conv2(name + ".conv2", bn_size * growth, growth, 3, 1, 1, false),
        in_channels(in) {}

  Tensor forward(const Tensor& x, bool training, Cache* c) {
    Tensor r1 = relu(norm1.forward(x, training, c ? &c->n1 : nullptr));
    Tensor h = conv1.forward(r1, c ? &c->c1 : nullptr);
    Tensor r2 = relu(norm2.forward(h, training, c ? &c->n2 : nullptr));
    Tensor y = conv2.forward(r2, c ? &c->c2 : nullptr);
    if (c) {
      c->r1 = std::move(r1);
      c->r2 = std::move(r2);
    }
    return y;
  }

  Tensor backward(Cache& c, const Tensor& dy) {
    Tensor d = conv2.backward(c.c2, dy);
    d = norm2.backward(c.n2, relu_backward(c.r2, d));
    d = conv1.backward(c.c1, d);
    return norm1.backward(c.n1, relu_backward(c.r1, d));
  }

  void refs(ParamRefs& out) {
    norm1.refs(out);
    conv1.refs(out);
    norm2.refs(out);
    conv2.refs(out);
  }
};

struct DenseNet121::DenseBlock {
  std::vector<DenseLayer> layers;
  int growth;

  DenseBlock(const std::string& name, int n_layers, int in, int growth_rate, int bn_size)
      : growth(growth_rate) {
    for (int i = 0; i < n_layers; ++i) {
      layers.emplace_back(name + ".denselayer" + std::to_string(i + 1), in + i * growth_rate,
                          growth_rate, bn_size);
    }
  }

  int out_channels() const { return layers.front().in_channels + layers.size() * growth; }

  Tensor forward(const Tensor& x, bool training, std::vector<DenseLayer::Cache>* caches) {
    if (caches) caches->resize(layers.size());
    Tensor features = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      Tensor y = layers[i].forward(features, training, caches ? &(*caches)[i] : nullptr);
      features = concat_channels(features, y);
    }
    return features;
  }

  Tensor backward(std::vector<DenseLayer::Cache>& caches, const Tensor& d_out) {
    Tensor d = d_out;
    for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
      auto [d_prev, d_new] = split_channels(d, layers[i].in_channels);
      d_prev += layers[i].backward(caches[i], d_new);
      d = std::move(d_prev);
    }
    return d;
  }
};

struct DenseNet121::Transition {
  BatchNorm norm;
  Conv2d conv;

  struct Cache {
    BatchNorm::Cache n;
    Tensor r;
    Conv2d::Cache c;
    Shape conv_out;
  };

  Transition(const std::string& name, int in, int out)
      : norm(name + ".norm", in), conv(name + ".conv", in, out, 1, 1, 0, false) {}

  Tensor forward(const Tensor& x, bool training, Cache* c) {
    Tensor r = relu(norm.forward(x, training, c ? &c->n : nullptr));
    Tensor h = conv.forward(r, c ? &c->c : nullptr);
    if (c) {
      c->r = std::move(r);
      c->conv_out = h.shape();
    }
    return avg_pool2d(h, 2);
  }

  Tensor backward(Cache& c, const Tensor& dy) {
    Tensor d = avg_pool2d_backward(c.conv_out, dy, 2);
    d = conv.backward(c.c, d);
    return norm.backward(c.n, relu_backward(c.r, d));
  }
};

struct DenseNet121::State : Backbone::Cache {
  Conv2d::Cache conv0;
  BatchNorm::Cache norm0;
  Tensor relu0;
  MaxPoolCache pool0;
  std::vector<std::vector<DenseLayer::Cache>> blocks;
  std::vector<Transition::Cache> transitions;
  BatchNorm::Cache norm5;
  Tensor top;
};

DenseNet121::DenseNet121()
    : conv0_("features.conv0", 3, 64, 7, 2, 3, false), norm0_("features.norm0", 64) {
  const int growth = 32, bn_size = 4;
  const int block_layers[4] = {6, 12, 24, 16};
  int channels = 64;
  for (int b = 0; b < 4; ++b) {
    blocks_.push_back(std::make_unique<DenseBlock>(
        "features.denseblock" + std::to_string(b + 1), block_layers[b], channels, growth, bn_size));
    channels = blocks_.back()->out_channels();
    if (b < 3) {
      transitions_.push_back(std::make_unique<Transition>(
          "features.transition" + std::to_string(b + 1), channels, channels / 2));
      channels /= 2;
    }
  }
  norm5_ = BatchNorm("features.norm5", channels);
}

DenseNet121::~DenseNet121() = default;

void DenseNet121::init(Rng& rng) {
  ParamRefs r;
  refs(r);
  for (Param* p : r.params) {
    if (p->value.rank() == 4) {
      const int fan_in = p->value.dim(1) * p->value.dim(2) * p->value.dim(3);
      init_fan_in_uniform(p->value, fan_in, kHeGain, rng);
    } else if (p->name.ends_with(".weight")) {
      p->value.fill(1.0);
    } else {
      p->value.fill(0.0);
    }
  }
}

void DenseNet121::refs(ParamRefs& out) {
  conv0_.refs(out);
  norm0_.refs(out);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (auto& layer : blocks_[b]->layers) layer.refs(out);
    if (b < transitions_.size()) {
      transitions_[b]->norm.refs(out);
      transitions_[b]->conv.refs(out);
    }
  }
  norm5_.refs(out);
}

Backbone::Output DenseNet121::forward(const Tensor& images, bool training,
                                      std::unique_ptr<Cache>* cache) {
  auto state = std::make_unique<State>();
  State* s = cache ? state.get() : nullptr;
  Tensor x = conv0_.forward(images, s ? &s->conv0 : nullptr);
  x = relu(norm0_.forward(x, training, s ? &s->norm0 : nullptr));
  if (s) s->relu0 = x;
  x = max_pool2d(x, 3, 2, 1, s ? &s->pool0 : nullptr);
  if (s) {
    s->blocks.resize(blocks_.size());
    s->transitions.resize(transitions_.size());
  }
  Output out;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    x = blocks_[b]->forward(x, training, s ? &s->blocks[b] : nullptr);
    if (b == 2) out.lateral = x;
    if (b < transitions_.size()) {
      x = transitions_[b]->forward(x, training, s ? &s->transitions[b] : nullptr);
    }
  }
  out.top = relu(norm5_.forward(x, training, s ? &s->norm5 : nullptr));
  if (s) {
    s->top = out.top;
    *cache = std::move(state);
  }
  return out;
}

void DenseNet121::backward(Cache& cache, const Tensor& d_top, const Tensor& d_lateral) {
  auto& s = dynamic_cast<State&>(cache);
  Tensor d = norm5_.backward(s.norm5, relu_backward(s.top, d_top));
  for (int b = static_cast<int>(blocks_.size()) - 1; b >= 0; --b) {
    if (b < static_cast<int>(transitions_.size())) {
      d = transitions_[b]->backward(s.transitions[b], d);
    }
    if (b == 2 && !d_lateral.empty()) d += d_lateral;
    d = blocks_[b]->backward(s.blocks[b], d);
  }
  d = max_pool_backward(s.pool0, d);
  d = norm0_.backward(s.norm0, relu_backward(s.relu0, d));
  conv0_.backward(s.conv0, d, /*input_grad=*/false);
}

std::unique_ptr<Backbone> make_backbone(const std::string& kind, int toy_channels) {
  if (kind == "toy_cnn") return std::make_unique<ToyCnn>(toy_channels);
  if (kind == "densenet121") return std::make_unique<DenseNet121>();
  throw std::invalid_argument("unknown backbone '" + kind + "'");
}

}  // namespace cxr::nn
