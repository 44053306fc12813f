#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace oracle {

namespace {

// One conv(1x1, no bias) -> BN -> activation block on N x Cin vectors.
std::vector<double> block(const std::vector<double>& x, int N, int cin,
                          const cxr::ConvBlock& b, bool training, bool sigmoid) {
  const auto& w = b.conv.weight.value;
  const int cout = b.conv.out_channels();
  std::vector<double> y(static_cast<std::size_t>(N) * cout, 0.0);
  for (int n = 0; n < N; ++n) {
    for (int o = 0; o < cout; ++o) {
      double s = 0;
      for (int i = 0; i < cin; ++i) s += w[static_cast<std::size_t>(o) * cin + i] * x[n * cin + i];
      y[n * cout + o] = s;
    }
  }
  for (int o = 0; o < cout; ++o) {
    double mean, var;
    if (training) {
      mean = 0;
      for (int n = 0; n < N; ++n) mean += y[n * cout + o];
      mean /= N;
      var = 0;
      for (int n = 0; n < N; ++n) var += (y[n * cout + o] - mean) * (y[n * cout + o] - mean);
      var /= N;
    } else {
      mean = b.norm.running_mean[o];
      var = b.norm.running_var[o];
    }
    for (int n = 0; n < N; ++n) {
      double v = (y[n * cout + o] - mean) / std::sqrt(var + 1e-5);
      v = v * b.norm.gamma.value[o] + b.norm.beta.value[o];
      if (sigmoid) {
        v = 1.0 / (1.0 + std::exp(-v));
      } else if (v < 0) {
        v *= 0.2;
      }
      y[n * cout + o] = v;
    }
  }
  return y;
}

}  // namespace

std::vector<double> apam(const std::vector<double>& F, const std::vector<double>& M, int N,
                         int C, int H, int W, const cxr::ApamParams& params, bool training,
                         std::vector<double>* weight) {
  auto at = [&](int n, int c, int h, int w) {
    return ((static_cast<std::size_t>(n) * C + c) * H + h) * W + w;
  };
  std::vector<double> fm(F.size());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          fm[at(n, c, h, w)] = F[at(n, c, h, w)] * M[(static_cast<std::size_t>(n) * H + h) * W + w];

  std::vector<double> favg(N * C), fmax(N * C), mavg(N * C), mmax(N * C);
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      double sf = 0, sm = 0, xf = -INFINITY, xm = -INFINITY;
      for (int h = 0; h < H; ++h) {
        for (int w = 0; w < W; ++w) {
          sf += F[at(n, c, h, w)];
          sm += fm[at(n, c, h, w)];
          xf = std::max(xf, F[at(n, c, h, w)]);
          xm = std::max(xm, fm[at(n, c, h, w)]);
        }
      }
      favg[n * C + c] = sf / (H * W);
      mavg[n * C + c] = sm / (H * W);
      fmax[n * C + c] = xf;
      mmax[n * C + c] = xm;
    }
  }
  const int ch = params.hidden();
  const std::vector<double>* inputs[4] = {&favg, &fmax, &mavg, &mmax};
  std::vector<double> hidden(static_cast<std::size_t>(N) * ch, 0.0);
  for (int k = 0; k < 4; ++k) {
    const auto y = block(*inputs[k], N, C, params.cb[k], training, false);
    for (std::size_t i = 0; i < y.size(); ++i) hidden[i] += y[i];
  }
  const auto wgt = block(hidden, N, ch, params.cb[4], training, true);
  if (weight) *weight = wgt;

  std::vector<double> out(F.size());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          const double a = wgt[n * C + c];
          out[at(n, c, h, w)] = a * F[at(n, c, h, w)] + (1 - a) * fm[at(n, c, h, w)];
        }
  return out;
}

PriorOracle prior_map(const std::vector<cxr::BBoxAnnotation>& boxes, int class_id, int height,
                      int width) {
  PriorOracle o;
  o.counts.assign(static_cast<std::size_t>(height) * width, 0);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double px = c + 0.5, py = r + 0.5;
      for (const auto& b : boxes) {
        if (b.class_id != class_id) continue;
        if (px >= b.x && px < b.x + b.w && py >= b.y && py < b.y + b.h) ++o.counts[r * width + c];
      }
    }
  }
  const int mx = *std::max_element(o.counts.begin(), o.counts.end());
  o.map.resize(o.counts.size());
  for (std::size_t i = 0; i < o.counts.size(); ++i) {
    o.map[i] = mx == 0 ? 1.0 : static_cast<double>(o.counts[i]) / mx;
  }
  return o;
}

cxr::BinaryMask hull_fill(const cxr::BinaryMask& mask) {
  // Work in doubled coordinates so pixel centres are integers: (2c+1, 2r+1).
  std::vector<std::pair<long, long>> pts;
  for (int r = 0; r < mask.height(); ++r)
    for (int c = 0; c < mask.width(); ++c)
      if (mask(r, c)) pts.emplace_back(2L * c + 1, 2L * r + 1);
  cxr::BinaryMask out(mask.height(), mask.width(), 0);
  auto cross = [](std::pair<long, long> o, std::pair<long, long> a, std::pair<long, long> b) {
    return (a.first - o.first) * (b.second - o.second) - (a.second - o.second) * (b.first - o.first);
  };
  auto on_segment = [&](std::pair<long, long> p, std::pair<long, long> a, std::pair<long, long> b) {
    return cross(a, b, p) == 0 && std::min(a.first, b.first) <= p.first &&
           p.first <= std::max(a.first, b.first) && std::min(a.second, b.second) <= p.second &&
           p.second <= std::max(a.second, b.second);
  };
  const std::size_t n = pts.size();
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      const std::pair<long, long> p{2L * c + 1, 2L * r + 1};
      bool inside = false;
      for (std::size_t i = 0; i < n && !inside; ++i) {
        if (pts[i] == p) inside = true;
        for (std::size_t j = i + 1; j < n && !inside; ++j) {
          if (on_segment(p, pts[i], pts[j])) inside = true;
          for (std::size_t k = j + 1; k < n && !inside; ++k) {
            const long d1 = cross(pts[i], pts[j], p);
            const long d2 = cross(pts[j], pts[k], p);
            const long d3 = cross(pts[k], pts[i], p);
            const bool has_neg = d1 < 0 || d2 < 0 || d3 < 0;
            const bool has_pos = d1 > 0 || d2 > 0 || d3 > 0;
            if (!(has_neg && has_pos) && cross(pts[i], pts[j], pts[k]) != 0) inside = true;
          }
        }
      }
      out(r, c) = inside;
    }
  }
  return out;
}

std::vector<cxr::BBox> component_boxes(const cxr::BinaryMask& mask) {
  std::vector<cxr::BBox> boxes;
  cxr::Grid<int> seen(mask.height(), mask.width(), 0);
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      if (!mask(r, c) || seen(r, c)) continue;
      int r0 = r, r1 = r, c0 = c, c1 = c;
      std::deque<std::pair<int, int>> q{{r, c}};
      seen(r, c) = 1;
      while (!q.empty()) {
        auto [y, x] = q.front();
        q.pop_front();
        r0 = std::min(r0, y), r1 = std::max(r1, y), c0 = std::min(c0, x), c1 = std::max(c1, x);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = y + dy, nx = x + dx;
            if (mask.contains(ny, nx) && mask(ny, nx) && !seen(ny, nx)) {
              seen(ny, nx) = 1;
              q.emplace_back(ny, nx);
            }
          }
        }
      }
      boxes.push_back({double(c0), double(r0), double(c1 + 1), double(r1 + 1)});
    }
  }
  auto key = [](const cxr::BBox& b) { return std::tie(b.y_min, b.x_min, b.y_max, b.x_max); };
  std::sort(boxes.begin(), boxes.end(), [&](const auto& a, const auto& b) { return key(a) < key(b); });
  return boxes;
}

double pixel_iou(const cxr::BBox& a, const cxr::BBox& b) {
  long inter = 0, uni = 0;
  const int x0 = static_cast<int>(std::min(a.x_min, b.x_min));
  const int x1 = static_cast<int>(std::max(a.x_max, b.x_max));
  const int y0 = static_cast<int>(std::min(a.y_min, b.y_min));
  const int y1 = static_cast<int>(std::max(a.y_max, b.y_max));
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const bool in_a = x >= a.x_min && x < a.x_max && y >= a.y_min && y < a.y_max;
      const bool in_b = x >= b.x_min && x < b.x_max && y >= b.y_min && y < b.y_max;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double pair_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
  long twice_wins = 0, pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      ++pairs;
      twice_wins += scores[i] > scores[j] ? 2 : scores[i] == scores[j] ? 1 : 0;
    }
  }
  return static_cast<double>(twice_wins) / (2.0 * static_cast<double>(pairs));
}

long double bce(const std::vector<double>& logits, const std::vector<double>& labels) {
  long double sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const long double z = logits[i], y = labels[i];
    // log(sigmoid(z)) = -log1p(exp(-z)), log(1 - sigmoid(z)) = -z - log1p(exp(-z))
    const long double lp = z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
    const long double lq = z >= 0 ? -z - std::log1p(std::exp(-z)) : -std::log1p(std::exp(z));
    sum -= y * lp + (1 - y) * lq;
  }
  return sum / static_cast<long double>(logits.size());
}

}  // namespace oracle
