#pragma once

// Independent reference implementations used only by tests. They follow the
// textbook definitions with plain loops in long double and share no code with
// the library kernels.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "l2sa/tensor.hpp"

namespace oracle {

using l2sa::Real;
using l2sa::Shape;
using l2sa::Tensor;
using Wide = long double;

// Direct six-loop cross-correlation. `same` pads (out-1)*stride+K-in zeros,
// floor half before and the rest after.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, bool same) {
  const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const std::size_t O = w.shape()[0], K = w.shape()[2];
  std::size_t OH, OW;
  long pt = 0, pl = 0;
  if (same) {
    OH = (H + stride - 1) / stride;
    OW = (W + stride - 1) / stride;
    pt = std::max<long>(0, long((OH - 1) * stride + K) - long(H)) / 2;
    pl = std::max<long>(0, long((OW - 1) * stride + K) - long(W)) / 2;
  } else {
    OH = (H - K) / stride + 1;
    OW = (W - K) / stride + 1;
  }
  Tensor y(Shape{N, O, OH, OW});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < OH; ++i)
        for (std::size_t j = 0; j < OW; ++j) {
          Wide acc = b[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < K; ++ky)
              for (std::size_t kx = 0; kx < K; ++kx) {
                const long iy = long(i * stride + ky) - pt, ix = long(j * stride + kx) - pl;
                if (iy < 0 || ix < 0 || iy >= long(H) || ix >= long(W)) continue;
                acc += Wide(x.at(n, c, std::size_t(iy), std::size_t(ix))) * Wide(w.at(o, c, ky, kx));
              }
          y.at(n, o, i, j) = Real(acc);
        }
  return y;
}

inline Tensor maxpool(const Tensor& x, std::size_t wh, std::size_t ww, std::size_t sh, std::size_t sw) {
  const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const std::size_t OH = (H - wh) / sh + 1, OW = (W - ww) / sw + 1;
  Tensor y(Shape{N, C, OH, OW});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < OH; ++i)
        for (std::size_t j = 0; j < OW; ++j) {
          Real m = -std::numeric_limits<Real>::infinity();
          for (std::size_t a = 0; a < wh; ++a)
            for (std::size_t b = 0; b < ww; ++b) m = std::max(m, x.at(n, c, i * sh + a, j * sw + b));
          y.at(n, c, i, j) = m;
        }
  return y;
}

// mode: 0 max, 1 min, 2 mean
inline Tensor channel_reduce(const Tensor& x, int mode) {
  const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  Tensor y(Shape{N, 1, H, W});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        std::vector<Wide> v;
        for (std::size_t c = 0; c < C; ++c) v.push_back(x.at(n, c, h, w));
        Wide r = 0;
        if (mode == 0) r = *std::max_element(v.begin(), v.end());
        if (mode == 1) r = *std::min_element(v.begin(), v.end());
        if (mode == 2) {
          for (Wide e : v) r += e;
          r /= Wide(C);
        }
        y.at(n, 0, h, w) = Real(r);
      }
  return y;
}

inline Wide softmax_xent(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t B = logits.shape()[0], C = logits.shape()[1];
  Wide total = 0;
  for (std::size_t b = 0; b < B; ++b) {
    Wide denom = 0;
    for (std::size_t c = 0; c < C; ++c) denom += std::exp(Wide(logits[b * C + c]));
    total += -std::log(std::exp(Wide(logits[b * C + std::size_t(labels[b])])) / denom);
  }
  return total / Wide(B);
}

// Bilinear resize with half-pixel centers written as two separable
// interpolation-weight matrices: out = Ry * in * Rx^T.
inline std::vector<Wide> bilinear(const std::vector<Wide>& in, std::size_t H, std::size_t W, std::size_t OH,
                                  std::size_t OW) {
  auto weights = [](std::size_t n_in, std::size_t n_out) {
    std::vector<std::vector<Wide>> R(n_out, std::vector<Wide>(n_in, 0));
    for (std::size_t o = 0; o < n_out; ++o) {
      Wide s = (Wide(o) + 0.5L) * Wide(n_in) / Wide(n_out) - 0.5L;
      s = std::min(std::max(s, Wide(0)), Wide(n_in - 1));
      const auto lo = std::size_t(std::floor(s));
      const std::size_t hi = std::min(lo + 1, n_in - 1);
      R[o][lo] += 1 - (s - Wide(lo));
      R[o][hi] += s - Wide(lo);
    }
    return R;
  };
  const auto Ry = weights(H, OH), Rx = weights(W, OW);
  std::vector<Wide> tmp(OH * W, 0), out(OH * OW, 0);
  for (std::size_t o = 0; o < OH; ++o)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) tmp[o * W + w] += Ry[o][h] * in[h * W + w];
  for (std::size_t o = 0; o < OH; ++o)
    for (std::size_t p = 0; p < OW; ++p)
      for (std::size_t w = 0; w < W; ++w) out[o * OW + p] += Rx[p][w] * tmp[o * W + w];
  return out;
}

// Central differences of a scalar function of one tensor.
inline Tensor finite_difference(const std::function<Wide(const Tensor&)>& f, const Tensor& at, Real h = Real(1e-5)) {
  Tensor g(at.shape());
  Tensor x = at;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Real s = x[i];
    x[i] = s + h;
    const Wide fp = f(x);
    x[i] = s - h;
    const Wide fm = f(x);
    x[i] = s;
    g[i] = Real((fp - fm) / (2 * Wide(h)));
  }
  return g;
}

inline Real max_rel_error(const Tensor& a, const Tensor& b) {
  Real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Real d = std::max({std::abs(a[i]), std::abs(b[i]), Real(1e-8)});
    m = std::max(m, std::abs(a[i] - b[i]) / d);
  }
  return m;
}

// k-nearest-neighbour majority vote on raw pixel vectors (squared L2).
inline int knn_predict(const std::vector<std::vector<float>>& train_x, const std::vector<int>& train_y,
                       const std::vector<float>& query, std::size_t k, std::size_t classes) {
  std::vector<std::pair<double, int>> d;
  for (std::size_t i = 0; i < train_x.size(); ++i) {
    double s = 0;
    for (std::size_t p = 0; p < query.size(); ++p) s += (double(train_x[i][p]) - query[p]) * (double(train_x[i][p]) - query[p]);
    d.emplace_back(s, train_y[i]);
  }
  std::partial_sort(d.begin(), d.begin() + std::ptrdiff_t(k), d.end());
  std::vector<int> votes(classes, 0);
  for (std::size_t i = 0; i < k; ++i) ++votes[std::size_t(d[i].second)];
  return int(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

}  // namespace oracle
