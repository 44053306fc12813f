#include <algorithm>
#include <array>
#include <cstdlib>
#include <limits>

#include "cxr/evaluation.hpp"

namespace cxr {

namespace {

// Neighbour offsets in counter-clockwise order on screen (rows grow down),
// starting east.
constexpr std::array<int, 8> kDr = {0, -1, -1, -1, 0, 1, 1, 1};
constexpr std::array<int, 8> kDc = {1, 1, 0, -1, -1, -1, 0, 1};

int direction(int dr, int dc) {
  for (int d = 0; d < 8; ++d) {
    if (kDr[d] == dr && kDc[d] == dc) return d;
  }
  return -1;
}

class Labels {
 public:
  Labels(const BinaryMask& mask) : h_(mask.height() + 2), w_(mask.width() + 2), f_(h_ * w_, 0) {
    for (int r = 0; r < mask.height(); ++r) {
      for (int c = 0; c < mask.width(); ++c) f_[(r + 1) * w_ + c + 1] = mask(r, c) ? 1 : 0;
    }
  }
  int& operator()(int r, int c) { return f_[r * w_ + c]; }
  int height() const { return h_; }
  int width() const { return w_; }

 private:
  int h_, w_;
  std::vector<int> f_;
};

// Follows one border starting at (r, c) whose known zero neighbour is
// (r2, c2). Marks pixels with nbd / -nbd and returns the border points in
// padded coordinates.
std::vector<std::pair<int, int>> follow(Labels& f, int r, int c, int r2, int c2, int nbd) {
  std::vector<std::pair<int, int>> points;
  // 3.1: clockwise from (r2, c2) for a non-zero neighbour.
  const int start = direction(r2 - r, c2 - c);
  int found = -1;
  for (int k = 0; k < 8; ++k) {
    const int d = (start - k + 8) % 8;
    if (f(r + kDr[d], c + kDc[d]) != 0) {
      found = d;
      break;
    }
  }
  if (found < 0) {
    f(r, c) = -nbd;
    points.emplace_back(r, c);
    return points;
  }
  const int r1 = r + kDr[found], c1 = c + kDc[found];
  int pr = r1, pc = c1;  // (i2, j2)
  int cr = r, cc = c;    // (i3, j3)
  while (true) {
    points.emplace_back(cr, cc);
    // 3.3: counter-clockwise from the element after (pr, pc).
    const int from = direction(pr - cr, pc - cc);
    bool east_zero = false;
    int nr = -1, nc = -1;
    for (int k = 1; k <= 8; ++k) {
      const int d = (from + k) % 8;
      const int tr = cr + kDr[d], tc = cc + kDc[d];
      if (f(tr, tc) != 0) {
        nr = tr;
        nc = tc;
        break;
      }
      if (d == 0) east_zero = true;
    }
    // 3.4
    if (east_zero) {
      f(cr, cc) = -nbd;
    } else if (f(cr, cc) == 1) {
      f(cr, cc) = nbd;
    }
    // 3.5
    if (nr == r && nc == c && cr == r1 && cc == c1) break;
    pr = cr;
    pc = cc;
    cr = nr;
    cc = nc;
  }
  return points;
}

}  // namespace

std::vector<Contour> find_contours(const BinaryMask& mask) {
  Labels f(mask);
  std::vector<Contour> out;
  int nbd = 1;
  for (int r = 1; r < f.height() - 1; ++r) {
    for (int c = 1; c < f.width() - 1; ++c) {
      const int v = f(r, c);
      if (v == 0) continue;
      bool outer = false;
      int r2 = 0, c2 = 0;
      if (v == 1 && f(r, c - 1) == 0) {
        outer = true;
        r2 = r;
        c2 = c - 1;
      } else if (v >= 1 && f(r, c + 1) == 0) {
        r2 = r;
        c2 = c + 1;
      } else {
        continue;
      }
      ++nbd;
      Contour contour;
      contour.outer = outer;
      for (auto [pr, pc] : follow(f, r, c, r2, c2, nbd)) contour.points.emplace_back(pr - 1, pc - 1);
      out.push_back(std::move(contour));
    }
  }
  return out;
}

std::vector<BBox> extract_boxes(const BinaryMask& mask) {
  std::vector<BBox> boxes;
  for (const Contour& contour : find_contours(mask)) {
    if (!contour.outer) continue;
    int r0 = std::numeric_limits<int>::max(), c0 = r0, r1 = -1, c1 = -1;
    for (auto [r, c] : contour.points) {
      r0 = std::min(r0, r);
      c0 = std::min(c0, c);
      r1 = std::max(r1, r);
      c1 = std::max(c1, c);
    }
    boxes.push_back({static_cast<double>(c0), static_cast<double>(r0),
                     static_cast<double>(c1 + 1), static_cast<double>(r1 + 1)});
  }
  return boxes;
}

}  // namespace cxr
