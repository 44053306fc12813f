#include "cxr/nn/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "cxr/parallel.hpp"

namespace cxr::nn {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

void require_4d(const Tensor& x, const char* who) {
  if (x.rank() != 4) {
    throw std::invalid_argument(std::string(who) + ": expected NxCxHxW, got " +
                                to_string(x.shape()));
  }
}

}  // namespace

void init_fan_in_uniform(Tensor& weight, int fan_in, double gain, Rng& rng) {
  const double bound = gain * std::sqrt(3.0 / std::max(1, fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : weight.values()) v = dist(rng);
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride,
               int pad, bool bias)
    : weight(name + ".weight", {out_channels, in_channels, kernel, kernel}),
      in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      has_bias_(bias) {
  if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride <= 0 || pad < 0) {
    throw std::invalid_argument("Conv2d " + name + ": invalid geometry");
  }
  if (bias) this->bias = Param(name + ".bias", {out_channels});
}

void Conv2d::init(Rng& rng, double gain) {
  init_fan_in_uniform(weight.value, in_ * kernel_ * kernel_, gain, rng);
  if (has_bias_) bias.value.fill(0.0);
}

void Conv2d::refs(ParamRefs& out) {
  out.params.push_back(&weight);
  if (has_bias_) out.params.push_back(&bias);
}

void Conv2d::im2col(const double* x, int h, int w, double* cols) const {
  const int ho = output_extent(h), wo = output_extent(w);
  const int p = ho * wo;
  for (int c = 0; c < in_; ++c) {
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx) {
        double* row = cols + static_cast<std::size_t>((c * kernel_ + ky) * kernel_ + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride_ - pad_ + kx;
            row[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                    ? x[(static_cast<std::size_t>(c) * h + iy) * w + ix]
                                    : 0.0;
          }
        }
      }
    }
  }
}

void Conv2d::col2im(const double* cols, int h, int w, double* dx) const {
  const int ho = output_extent(h), wo = output_extent(w);
  const int p = ho * wo;
  for (int c = 0; c < in_; ++c) {
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx) {
        const double* row = cols + static_cast<std::size_t>((c * kernel_ + ky) * kernel_ + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride_ - pad_ + kx;
            if (ix < 0 || ix >= w) continue;
            dx[(static_cast<std::size_t>(c) * h + iy) * w + ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

Tensor Conv2d::forward(const Tensor& x, Cache* cache) const {
  require_4d(x, "Conv2d");
  if (x.dim(1) != in_) {
    throw std::invalid_argument(weight.name + ": expected " + std::to_string(in_) +
                                " input channels, got " + to_string(x.shape()));
  }
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int ho = output_extent(h), wo = output_extent(w);
  if (ho <= 0 || wo <= 0) throw std::invalid_argument(weight.name + ": input too small");
  const int ckk = in_ * kernel_ * kernel_, p = ho * wo;
  Tensor y({n, out_, ho, wo});
  if (cache) {
    cache->input_shape = x.shape();
    cache->cols = Tensor({n, ckk, p});
  }
  CMapRM wmat(weight.value.data(), out_, ckk);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    std::vector<double> local;
    double* cols;
    if (cache) {
      cols = cache->cols.slice(static_cast<int>(i));
    } else {
      local.resize(static_cast<std::size_t>(ckk) * p);
      cols = local.data();
    }
    im2col(x.slice(static_cast<int>(i)), h, w, cols);
    MapRM ymat(y.slice(static_cast<int>(i)), out_, p);
    ymat.noalias() = wmat * CMapRM(cols, ckk, p);
    if (has_bias_) {
      for (int o = 0; o < out_; ++o) ymat.row(o).array() += bias.value[o];
    }
  });
  return y;
}

Tensor Conv2d::backward(const Cache& cache, const Tensor& dy, bool input_grad) {
  const int n = cache.input_shape[0], h = cache.input_shape[2], w = cache.input_shape[3];
  const int ho = output_extent(h), wo = output_extent(w);
  const int ckk = in_ * kernel_ * kernel_, p = ho * wo;
  if (dy.shape() != Shape{n, out_, ho, wo}) {
    throw std::invalid_argument(weight.name + ": gradient shape mismatch");
  }
  MapRM dw(weight.grad.data(), out_, ckk);
  for (int i = 0; i < n; ++i) {
    CMapRM dymat(dy.slice(i), out_, p);
    dw.noalias() += dymat * CMapRM(cache.cols.slice(i), ckk, p).transpose();
    if (has_bias_) {
      // Plain loop: Eigen's sum() order depends on the address alignment.
      for (int o = 0; o < out_; ++o) {
        const double* row = dy.slice(i) + static_cast<std::size_t>(o) * p;
        double acc = 0.0;
        for (int k = 0; k < p; ++k) acc += row[k];
        bias.grad[o] += acc;
      }
    }
  }
  if (!input_grad) return {};
  Tensor dx(cache.input_shape);
  CMapRM wmat(weight.value.data(), out_, ckk);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    MatRM dcols = wmat.transpose() * CMapRM(dy.slice(static_cast<int>(i)), out_, p);
    col2im(dcols.data(), h, w, dx.slice(static_cast<int>(i)));
  });
  return dx;
}

// ------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(const std::string& name, int channels, double momentum, double eps)
    : gamma(name + ".weight", {channels}),
      beta(name + ".bias", {channels}),
      running_mean({channels}, 0.0),
      running_var({channels}, 1.0),
      name_(name),
      channels_(channels),
      momentum_(momentum),
      eps_(eps) {
  gamma.value.fill(1.0);
}

void BatchNorm::refs(ParamRefs& out) {
  out.params.push_back(&gamma);
  out.params.push_back(&beta);
  out.buffers.push_back({name_ + ".running_mean", &running_mean});
  out.buffers.push_back({name_ + ".running_var", &running_var});
}

Tensor BatchNorm::forward(const Tensor& x, bool training, Cache* cache) {
  require_4d(x, "BatchNorm");
  if (x.dim(1) != channels_) throw std::invalid_argument(name_ + ": channel mismatch");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const std::size_t m = n * plane;
  if (training && m < 2) {
    throw std::invalid_argument(name_ +
                                ": batch statistics are undefined for a single value per "
                                "channel (batch size 1 in training mode)");
  }
  Tensor y(x.shape());
  Tensor xhat(x.shape());
  std::vector<double> inv_std(c);
  for (int ch = 0; ch < c; ++ch) {
    double mean, var;
    if (training) {
      double s = 0;
      for (int i = 0; i < n; ++i) {
        const double* p = x.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
        for (std::size_t k = 0; k < plane; ++k) s += p[k];
      }
      mean = s / m;
      double ss = 0;
      for (int i = 0; i < n; ++i) {
        const double* p = x.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
        for (std::size_t k = 0; k < plane; ++k) ss += (p[k] - mean) * (p[k] - mean);
      }
      var = ss / m;
      running_mean[ch] = (1 - momentum_) * running_mean[ch] + momentum_ * mean;
      running_var[ch] = (1 - momentum_) * running_var[ch] + momentum_ * ss / (m - 1);
    } else {
      mean = running_mean[ch];
      var = running_var[ch];
    }
    inv_std[ch] = 1.0 / std::sqrt(var + eps_);
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        const double xh = (x[off + k] - mean) * inv_std[ch];
        xhat[off + k] = xh;
        y[off + k] = gamma.value[ch] * xh + beta.value[ch];
      }
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->training = training;
  }
  return y;
}

Tensor BatchNorm::backward(const Cache& cache, const Tensor& dy) {
  require_same_shape(cache.xhat, dy, "BatchNorm::backward");
  const int n = dy.dim(0), c = dy.dim(1);
  const std::size_t plane = static_cast<std::size_t>(dy.dim(2)) * dy.dim(3);
  const double m = static_cast<double>(n * plane);
  Tensor dx(dy.shape());
  for (int ch = 0; ch < c; ++ch) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        sum_dy += dy[off + k];
        sum_dy_xhat += dy[off + k] * cache.xhat[off + k];
      }
    }
    gamma.grad[ch] += sum_dy_xhat;
    beta.grad[ch] += sum_dy;
    const double g = gamma.value[ch] * cache.inv_std[ch];
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        dx[off + k] = cache.training
                          ? g * (dy[off + k] - sum_dy / m - cache.xhat[off + k] * sum_dy_xhat / m)
                          : g * dy[off + k];
      }
    }
  }
  return dx;
}

// ----------------------------------------------------------- activations

Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0 ? x[i] : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& dy) {
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = y[i] > 0 ? dy[i] : 0.0;
  return dx;
}

Tensor leaky_relu(const Tensor& x, double slope) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0 ? x[i] : slope * x[i];
  return y;
}

Tensor leaky_relu_backward(const Tensor& y, const Tensor& dy, double slope) {
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = y[i] > 0 ? dy[i] : slope * dy[i];
  return dx;
}

Tensor sigmoid(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    y[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return y;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& dy) {
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * y[i] * (1.0 - y[i]);
  return dx;
}

// --------------------------------------------------------------- pooling

Tensor global_avg_pool(const Tensor& x) {
  require_4d(x, "global_avg_pool");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor y({n, c, 1, 1});
  for (int i = 0; i < n * c; ++i) {
    const double* p = x.data() + i * plane;
    double s = 0;
    for (std::size_t k = 0; k < plane; ++k) s += p[k];
    y[i] = s / plane;
  }
  return y;
}

Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& dy) {
  Tensor dx(input_shape);
  const std::size_t plane = static_cast<std::size_t>(input_shape[2]) * input_shape[3];
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const double g = dy[i] / plane;
    std::fill(dx.data() + i * plane, dx.data() + (i + 1) * plane, g);
  }
  return dx;
}

Tensor global_max_pool(const Tensor& x, MaxPoolCache* cache) {
  require_4d(x, "global_max_pool");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor y({n, c, 1, 1});
  if (cache) {
    cache->input_shape = x.shape();
    cache->argmax.assign(static_cast<std::size_t>(n) * c, 0);
  }
  for (int i = 0; i < n * c; ++i) {
    const double* p = x.data() + i * plane;
    std::size_t best = 0;
    for (std::size_t k = 1; k < plane; ++k) {
      if (p[k] > p[best]) best = k;
    }
    y[i] = p[best];
    if (cache) cache->argmax[i] = static_cast<std::int64_t>(i * plane + best);
  }
  return y;
}

Tensor max_pool2d(const Tensor& x, int kernel, int stride, int pad, MaxPoolCache* cache) {
  require_4d(x, "max_pool2d");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = (h + 2 * pad - kernel) / stride + 1, wo = (w + 2 * pad - kernel) / stride + 1;
  Tensor y({n, c, ho, wo});
  if (cache) {
    cache->input_shape = x.shape();
    cache->argmax.assign(y.size(), 0);
  }
  for (int i = 0; i < n * c; ++i) {
    const std::size_t in_off = static_cast<std::size_t>(i) * h * w;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t arg = in_off;
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            const std::size_t idx = in_off + static_cast<std::size_t>(iy) * w + ix;
            if (x[idx] > best) {
              best = x[idx];
              arg = idx;
            }
          }
        }
        const std::size_t out_idx = (static_cast<std::size_t>(i) * ho + oy) * wo + ox;
        y[out_idx] = best;
        if (cache) cache->argmax[out_idx] = static_cast<std::int64_t>(arg);
      }
    }
  }
  return y;
}

Tensor max_pool_backward(const MaxPoolCache& cache, const Tensor& dy) {
  Tensor dx(cache.input_shape);
  for (std::size_t i = 0; i < dy.size(); ++i) dx[cache.argmax[i]] += dy[i];
  return dx;
}

Tensor avg_pool2d(const Tensor& x, int kernel) {
  require_4d(x, "avg_pool2d");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = h / kernel, wo = w / kernel;
  Tensor y({n, c, ho, wo});
  const double scale = 1.0 / (kernel * kernel);
  for (int i = 0; i < n * c; ++i) {
    const double* p = x.data() + static_cast<std::size_t>(i) * h * w;
    double* q = y.data() + static_cast<std::size_t>(i) * ho * wo;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        double s = 0;
        for (int ky = 0; ky < kernel; ++ky) {
          for (int kx = 0; kx < kernel; ++kx) s += p[(oy * kernel + ky) * w + ox * kernel + kx];
        }
        q[oy * wo + ox] = s * scale;
      }
    }
  }
  return y;
}

Tensor avg_pool2d_backward(const Shape& input_shape, const Tensor& dy, int kernel) {
  Tensor dx(input_shape);
  const int h = input_shape[2], w = input_shape[3];
  const int ho = dy.dim(2), wo = dy.dim(3);
  const double scale = 1.0 / (kernel * kernel);
  for (int i = 0; i < dy.dim(0) * dy.dim(1); ++i) {
    double* p = dx.data() + static_cast<std::size_t>(i) * h * w;
    const double* q = dy.data() + static_cast<std::size_t>(i) * ho * wo;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        for (int ky = 0; ky < kernel; ++ky) {
          for (int kx = 0; kx < kernel; ++kx) {
            p[(oy * kernel + ky) * w + ox * kernel + kx] += q[oy * wo + ox] * scale;
          }
        }
      }
    }
  }
  return dx;
}

Tensor upsample_nearest2x(const Tensor& x) {
  require_4d(x, "upsample_nearest2x");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({n, c, 2 * h, 2 * w});
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      for (int r = 0; r < 2 * h; ++r) {
        for (int col = 0; col < 2 * w; ++col) y.at(i, ch, r, col) = x.at(i, ch, r / 2, col / 2);
      }
    }
  }
  return y;
}

Tensor upsample_nearest2x_backward(const Tensor& dy) {
  const int n = dy.dim(0), c = dy.dim(1), h = dy.dim(2) / 2, w = dy.dim(3) / 2;
  Tensor dx({n, c, h, w});
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      for (int r = 0; r < 2 * h; ++r) {
        for (int col = 0; col < 2 * w; ++col) dx.at(i, ch, r / 2, col / 2) += dy.at(i, ch, r, col);
      }
    }
  }
  return dx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_4d(a, "concat_channels");
  require_4d(b, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw std::invalid_argument("concat_channels: " + to_string(a.shape()) + " vs " +
                                to_string(b.shape()));
  }
  const int n = a.dim(0);
  Tensor y({n, a.dim(1) + b.dim(1), a.dim(2), a.dim(3)});
  const std::size_t sa = a.stride0(), sb = b.stride0();
  for (int i = 0; i < n; ++i) {
    std::copy(a.slice(i), a.slice(i) + sa, y.slice(i));
    std::copy(b.slice(i), b.slice(i) + sb, y.slice(i) + sa);
  }
  return y;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& d, int channels_a) {
  const int n = d.dim(0), cb = d.dim(1) - channels_a;
  Tensor da({n, channels_a, d.dim(2), d.dim(3)});
  Tensor db({n, cb, d.dim(2), d.dim(3)});
  const std::size_t sa = da.stride0(), sb = db.stride0();
  for (int i = 0; i < n; ++i) {
    std::copy(d.slice(i), d.slice(i) + sa, da.slice(i));
    std::copy(d.slice(i) + sa, d.slice(i) + sa + sb, db.slice(i));
  }
  return {std::move(da), std::move(db)};
}

}  // namespace cxr::nn
