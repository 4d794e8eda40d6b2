#include "l2sa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace l2sa::ops {
namespace {

std::string num(std::size_t v) { return std::to_string(v); }

void require_nchw(const Tensor& t, const char* op) {
  if (t.shape().rank() != 4) throw ShapeError(op, "rank", "expected NCHW tensor, got " + t.shape().str());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!(a.shape() == b.shape())) throw ShapeError(op, "shape", a.shape().str() + " vs " + b.shape().str());
}

// Column-buffer budget in elements; sized to stay resident in L2.
constexpr std::size_t kColumnBudget = std::size_t(1) << 17;

std::size_t rows_per_tile(std::size_t patch, std::size_t out_w, std::size_t out_h) {
  std::size_t rows = kColumnBudget / std::max<std::size_t>(1, patch * out_w);
  return std::clamp<std::size_t>(rows, 1, out_h);
}

struct ConvGeometry {
  std::size_t in_h, in_w, out_h, out_w, pad_top, pad_left, patch;
};

ConvGeometry geometry(const Tensor& input, const ConvSpec& spec) {
  ConvGeometry g{};
  g.in_h = input.height();
  g.in_w = input.width();
  g.out_h = spec.output_extent(g.in_h);
  g.out_w = spec.output_extent(g.in_w);
  g.pad_top = spec.pad_before(g.in_h);
  g.pad_left = spec.pad_before(g.in_w);
  g.patch = spec.in_channels * spec.kernel * spec.kernel;
  return g;
}

// Fills cols[patch, rows*out_w] (leading dimension `ld`) for output rows
// [row0, row0+rows) of sample `n`.
void im2col(const Tensor& input, std::size_t n, const ConvSpec& spec, const ConvGeometry& g, std::size_t row0,
            std::size_t rows, Real* cols, std::size_t ld) {
  const std::size_t k = spec.kernel;
  const Real* src = input.ptr() + n * spec.in_channels * g.in_h * g.in_w;
  for (std::size_t c = 0; c < spec.in_channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        Real* dst = cols + ((c * k + ky) * k + kx) * ld;
        for (std::size_t r = 0; r < rows; ++r) {
          const long iy = long((row0 + r) * spec.stride + ky) - long(g.pad_top);
          Real* drow = dst + r * g.out_w;
          if (iy < 0 || iy >= long(g.in_h)) {
            std::fill(drow, drow + g.out_w, Real(0));
            continue;
          }
          const Real* srow = src + (c * g.in_h + std::size_t(iy)) * g.in_w;
          for (std::size_t x = 0; x < g.out_w; ++x) {
            const long ix = long(x * spec.stride + kx) - long(g.pad_left);
            drow[x] = (ix < 0 || ix >= long(g.in_w)) ? Real(0) : srow[ix];
          }
        }
      }
    }
  }
}

void col2im(const std::vector<Real>& cols, std::size_t n, const ConvSpec& spec, const ConvGeometry& g,
            std::size_t row0, std::size_t rows, std::vector<Accum>& grad_in) {
  const std::size_t cols_n = rows * g.out_w;
  const std::size_t k = spec.kernel;
  Accum* dst = grad_in.data() + n * spec.in_channels * g.in_h * g.in_w;
  for (std::size_t c = 0; c < spec.in_channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const Real* src = cols.data() + ((c * k + ky) * k + kx) * cols_n;
        for (std::size_t r = 0; r < rows; ++r) {
          const long iy = long((row0 + r) * spec.stride + ky) - long(g.pad_top);
          if (iy < 0 || iy >= long(g.in_h)) continue;
          Accum* drow = dst + (c * g.in_h + std::size_t(iy)) * g.in_w;
          const Real* srow = src + r * g.out_w;
          for (std::size_t x = 0; x < g.out_w; ++x) {
            const long ix = long(x * spec.stride + kx) - long(g.pad_left);
            if (ix >= 0 && ix < long(g.in_w)) drow[ix] += srow[x];
          }
        }
      }
    }
  }
}

void validate_conv(const Tensor& input, const Tensor& weights, const ConvSpec& spec, const char* op) {
  spec.validate();
  require_nchw(input, op);
  if (input.channels() != spec.in_channels) {
    throw ShapeError(op, "channels", "input has " + num(input.channels()) + ", spec expects " + num(spec.in_channels));
  }
  const Shape expected{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel};
  if (!(weights.shape() == expected)) {
    throw ShapeError(op, "weights", "expected " + expected.str() + ", got " + weights.shape().str());
  }
  if (spec.padding == Padding::Valid && (input.height() < spec.kernel || input.width() < spec.kernel)) {
    throw ShapeError(op, "height/width", "input " + input.shape().str() + " smaller than kernel " + num(spec.kernel));
  }
}

}  // namespace

void require_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw Error(ErrorKind::Numeric, std::string(op) + ": non-finite input");
}

void ConvSpec::validate() const {
  if (kernel < 1) throw ShapeError("ConvSpec", "kernel", "must be >= 1");
  if (in_channels < 1) throw ShapeError("ConvSpec", "in_channels", "must be >= 1");
  if (out_channels < 1) throw ShapeError("ConvSpec", "out_channels", "must be >= 1");
  if (stride < 1) throw ShapeError("ConvSpec", "stride", "must be >= 1");
}

std::size_t ConvSpec::output_extent(std::size_t in) const {
  if (padding == Padding::Same) return (in + stride - 1) / stride;
  return (in - kernel) / stride + 1;
}

std::size_t ConvSpec::pad_before(std::size_t in) const {
  if (padding == Padding::Valid) return 0;
  const std::size_t out = output_extent(in);
  const long total = long((out - 1) * stride + kernel) - long(in);
  return total > 0 ? std::size_t(total / 2) : 0;
}

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvSpec& spec) {
  validate_conv(input, weights, spec, "conv2d");
  if (!(bias.shape() == Shape{spec.out_channels})) {
    throw ShapeError("conv2d", "bias", "expected (" + num(spec.out_channels) + "), got " + bias.shape().str());
  }
  require_finite(input, "conv2d");
  const ConvGeometry g = geometry(input, spec);
  const std::size_t batch = input.batch();
  Tensor out = Tensor::nchw(batch, spec.out_channels, g.out_h, g.out_w);
  const std::size_t plane = g.out_h * g.out_w;
  const std::size_t tile = rows_per_tile(g.patch, g.out_w, g.out_h);
  // Small planes are packed several images per column block.
  const std::size_t images =
      tile == g.out_h ? std::clamp<std::size_t>(kColumnBudget / std::max<std::size_t>(1, g.patch * plane), 1, batch) : 1;
  const std::size_t max_cn = std::max(tile * g.out_w, images * plane);
  std::vector<Real> cols(g.patch * max_cn);
  constexpr std::size_t kBlock = 4;
  std::vector<Accum> acc(kBlock * max_cn);
  const Real* w = weights.ptr();

  for (std::size_t n0 = 0; n0 < batch; n0 += images) {
    const std::size_t count = std::min(images, batch - n0);
    for (std::size_t row0 = 0; row0 < g.out_h; row0 += tile) {
      const std::size_t rows = std::min(tile, g.out_h - row0);
      const std::size_t span = rows * g.out_w;
      const std::size_t cn = count * span;
      for (std::size_t i = 0; i < count; ++i) im2col(input, n0 + i, spec, g, row0, rows, cols.data() + i * span, cn);
      for (std::size_t oc = 0; oc < spec.out_channels; oc += kBlock) {
        const std::size_t ob = std::min(kBlock, spec.out_channels - oc);
        for (std::size_t j = 0; j < ob; ++j) std::fill_n(acc.begin() + j * cn, cn, Accum(bias[oc + j]));
        if (ob == kBlock) {
          Accum* a0 = acc.data();
          Accum* a1 = a0 + cn;
          Accum* a2 = a1 + cn;
          Accum* a3 = a2 + cn;
          for (std::size_t r = 0; r < g.patch; ++r) {
            const Accum w0 = w[oc * g.patch + r], w1 = w[(oc + 1) * g.patch + r];
            const Accum w2 = w[(oc + 2) * g.patch + r], w3 = w[(oc + 3) * g.patch + r];
            const Real* crow = cols.data() + r * cn;
            for (std::size_t p = 0; p < cn; ++p) {
              const Accum c = crow[p];
              a0[p] += w0 * c;
              a1[p] += w1 * c;
              a2[p] += w2 * c;
              a3[p] += w3 * c;
            }
          }
        } else {
          for (std::size_t j = 0; j < ob; ++j) {
            Accum* aj = acc.data() + j * cn;
            const Real* wrow = w + (oc + j) * g.patch;
            for (std::size_t r = 0; r < g.patch; ++r) {
              const Accum a = wrow[r];
              const Real* crow = cols.data() + r * cn;
              for (std::size_t p = 0; p < cn; ++p) aj[p] += a * crow[p];
            }
          }
        }
        for (std::size_t i = 0; i < count; ++i)
          for (std::size_t j = 0; j < ob; ++j) {
            Real* dst = out.ptr() + ((n0 + i) * spec.out_channels + oc + j) * plane + row0 * g.out_w;
            const Accum* src = acc.data() + j * cn + i * span;
            for (std::size_t p = 0; p < span; ++p) dst[p] = Real(src[p]);
          }
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& weights, const ConvSpec& spec, const Tensor& grad_out) {
  validate_conv(input, weights, spec, "conv2d_backward");
  const ConvGeometry g = geometry(input, spec);
  const std::size_t batch = input.batch();
  const Shape out_shape{batch, spec.out_channels, g.out_h, g.out_w};
  if (!(grad_out.shape() == out_shape)) {
    throw ShapeError("conv2d_backward", "grad_out", "expected " + out_shape.str() + ", got " + grad_out.shape().str());
  }
  const std::size_t tile = rows_per_tile(g.patch, g.out_w, g.out_h);
  std::vector<Real> cols(g.patch * tile * g.out_w);
  std::vector<Accum> gw(weights.size(), 0);
  std::vector<Accum> gb(spec.out_channels, 0);
  std::vector<Accum> gin(input.size(), 0);
  std::vector<Accum> acc(tile * g.out_w);
  const Real* w = weights.ptr();

  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t row0 = 0; row0 < g.out_h; row0 += tile) {
      const std::size_t rows = std::min(tile, g.out_h - row0);
      const std::size_t cn = rows * g.out_w;
      im2col(input, n, spec, g, row0, rows, cols.data(), cn);
      // dW[oc, r] += <grad_out[oc, :], cols[r, :]>
      for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
        const Real* go = grad_out.ptr() + ((n * spec.out_channels + oc) * g.out_h + row0) * g.out_w;
        Accum bsum = 0;
        for (std::size_t p = 0; p < cn; ++p) bsum += go[p];
        gb[oc] += bsum;
        for (std::size_t r = 0; r < g.patch; ++r) {
          const Real* crow = cols.data() + r * cn;
          Accum dot = 0;
          for (std::size_t p = 0; p < cn; ++p) dot += Accum(go[p]) * crow[p];
          gw[oc * g.patch + r] += dot;
        }
      }
      // dcols[r, :] = sum_oc W[oc, r] * grad_out[oc, :]
      for (std::size_t r = 0; r < g.patch; ++r) {
        std::fill(acc.begin(), acc.begin() + cn, Accum(0));
        for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
          const Accum a = w[oc * g.patch + r];
          if (a == 0) continue;
          const Real* go = grad_out.ptr() + ((n * spec.out_channels + oc) * g.out_h + row0) * g.out_w;
          for (std::size_t p = 0; p < cn; ++p) acc[p] += a * go[p];
        }
        Real* crow = cols.data() + r * cn;
        for (std::size_t p = 0; p < cn; ++p) crow[p] = Real(acc[p]);
      }
      col2im(cols, n, spec, g, row0, rows, gin);
    }
  }

  ConvGrads grads{Tensor(input.shape()), Tensor(weights.shape()), Tensor(Shape{spec.out_channels})};
  for (std::size_t i = 0; i < gin.size(); ++i) grads.input[i] = Real(gin[i]);
  for (std::size_t i = 0; i < gw.size(); ++i) grads.weights[i] = Real(gw[i]);
  for (std::size_t i = 0; i < gb.size(); ++i) grads.bias[i] = Real(gb[i]);
  return grads;
}

namespace {

void validate_pool(const Tensor& input, const Pool2d& pool, const char* op) {
  require_nchw(input, op);
  if (pool.window_h < 1 || pool.window_w < 1 || pool.stride_h < 1 || pool.stride_w < 1) {
    throw ShapeError(op, "window", "window and stride must be >= 1");
  }
  if (pool.window_h > input.height()) {
    throw ShapeError(op, "height", "window " + num(pool.window_h) + " larger than input " + num(input.height()));
  }
  if (pool.window_w > input.width()) {
    throw ShapeError(op, "width", "window " + num(pool.window_w) + " larger than input " + num(input.width()));
  }
}

// Flat index of the first maximum in scan order of each output window.
template <typename Fn>
void for_each_window(const Tensor& input, const Pool2d& pool, Fn&& fn) {
  const std::size_t oh = pool.out_h(input.height());
  const std::size_t ow = pool.out_w(input.width());
  for (std::size_t n = 0; n < input.batch(); ++n)
    for (std::size_t c = 0; c < input.channels(); ++c)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) fn(n, c, y, x, y * pool.stride_h, x * pool.stride_w);
}

}  // namespace

Tensor maxpool2d(const Tensor& input, const Pool2d& pool) {
  validate_pool(input, pool, "maxpool2d");
  Tensor out = Tensor::nchw(input.batch(), input.channels(), pool.out_h(input.height()), pool.out_w(input.width()));
  for_each_window(input, pool, [&](auto n, auto c, auto y, auto x, auto y0, auto x0) {
    Real best = input.at(n, c, y0, x0);
    for (std::size_t dy = 0; dy < pool.window_h; ++dy)
      for (std::size_t dx = 0; dx < pool.window_w; ++dx) best = std::max(best, input.at(n, c, y0 + dy, x0 + dx));
    out.at(n, c, y, x) = best;
  });
  return out;
}

Tensor maxpool2d_backward(const Tensor& input, const Pool2d& pool, const Tensor& grad_out) {
  validate_pool(input, pool, "maxpool2d_backward");
  Tensor grad(input.shape());
  for_each_window(input, pool, [&](auto n, auto c, auto y, auto x, auto y0, auto x0) {
    std::size_t by = y0, bx = x0;
    Real best = input.at(n, c, y0, x0);
    for (std::size_t dy = 0; dy < pool.window_h; ++dy)
      for (std::size_t dx = 0; dx < pool.window_w; ++dx) {
        const Real v = input.at(n, c, y0 + dy, x0 + dx);
        if (v > best) {
          best = v;
          by = y0 + dy;
          bx = x0 + dx;
        }
      }
    grad.at(n, c, by, bx) += grad_out.at(n, c, y, x);
  });
  return grad;
}

bool maxpool2d_has_tie(const Tensor& input, const Pool2d& pool) {
  validate_pool(input, pool, "maxpool2d_has_tie");
  bool tie = false;
  for_each_window(input, pool, [&](auto n, auto c, auto, auto, auto y0, auto x0) {
    Real best = -std::numeric_limits<Real>::infinity();
    int count = 0;
    for (std::size_t dy = 0; dy < pool.window_h; ++dy)
      for (std::size_t dx = 0; dx < pool.window_w; ++dx) {
        const Real v = input.at(n, c, y0 + dy, x0 + dx);
        if (v > best) {
          best = v;
          count = 1;
        } else if (v == best) {
          ++count;
        }
      }
    tie = tie || count > 1;
  });
  return tie;
}

Tensor avgpool2d(const Tensor& input, const Pool2d& pool) {
  validate_pool(input, pool, "avgpool2d");
  Tensor out = Tensor::nchw(input.batch(), input.channels(), pool.out_h(input.height()), pool.out_w(input.width()));
  const Accum inv = Accum(1) / Accum(pool.window_h * pool.window_w);
  for_each_window(input, pool, [&](auto n, auto c, auto y, auto x, auto y0, auto x0) {
    Accum s = 0;
    for (std::size_t dy = 0; dy < pool.window_h; ++dy)
      for (std::size_t dx = 0; dx < pool.window_w; ++dx) s += input.at(n, c, y0 + dy, x0 + dx);
    out.at(n, c, y, x) = Real(s * inv);
  });
  return out;
}

Tensor avgpool2d_backward(const Shape& input_shape, const Pool2d& pool, const Tensor& grad_out) {
  Tensor grad(input_shape);
  validate_pool(grad, pool, "avgpool2d_backward");
  const Real inv = Real(1) / Real(pool.window_h * pool.window_w);
  for_each_window(grad, pool, [&](auto n, auto c, auto y, auto x, auto y0, auto x0) {
    const Real g = grad_out.at(n, c, y, x) * inv;
    for (std::size_t dy = 0; dy < pool.window_h; ++dy)
      for (std::size_t dx = 0; dx < pool.window_w; ++dx) grad.at(n, c, y0 + dy, x0 + dx) += g;
  });
  return grad;
}

Tensor channel_reduce(const Tensor& input, Reduce mode) {
  require_nchw(input, "channel_reduce");
  const std::size_t C = input.channels(), HW = input.height() * input.width();
  if (C < 1) throw ShapeError("channel_reduce", "channels", "need at least one channel");
  Tensor out = Tensor::nchw(input.batch(), 1, input.height(), input.width());
  for (std::size_t n = 0; n < input.batch(); ++n) {
    const Real* src = input.ptr() + n * C * HW;
    Real* dst = out.ptr() + n * HW;
    for (std::size_t p = 0; p < HW; ++p) {
      if (mode == Reduce::Mean) {
        Accum s = 0;
        for (std::size_t c = 0; c < C; ++c) s += src[c * HW + p];
        dst[p] = Real(s / Accum(C));
      } else {
        Real best = src[p];
        for (std::size_t c = 1; c < C; ++c) {
          const Real v = src[c * HW + p];
          best = mode == Reduce::Max ? std::max(best, v) : std::min(best, v);
        }
        dst[p] = best;
      }
    }
  }
  return out;
}

Tensor channel_reduce_backward(const Tensor& input, Reduce mode, const Tensor& grad_out) {
  require_nchw(input, "channel_reduce_backward");
  const std::size_t C = input.channels(), HW = input.height() * input.width();
  Tensor grad(input.shape());
  for (std::size_t n = 0; n < input.batch(); ++n) {
    const Real* src = input.ptr() + n * C * HW;
    const Real* go = grad_out.ptr() + n * HW;
    Real* dst = grad.ptr() + n * C * HW;
    for (std::size_t p = 0; p < HW; ++p) {
      if (mode == Reduce::Mean) {
        const Real g = go[p] / Real(C);
        for (std::size_t c = 0; c < C; ++c) dst[c * HW + p] = g;
        continue;
      }
      std::size_t arg = 0;
      Real best = src[p];
      for (std::size_t c = 1; c < C; ++c) {
        const Real v = src[c * HW + p];
        if (mode == Reduce::Max ? v > best : v < best) {
          best = v;
          arg = c;
        }
      }
      dst[arg * HW + p] = go[p];
    }
  }
  return grad;
}

namespace {

std::size_t sample_size(const Tensor& t) { return t.shape().numel() / t.shape()[0]; }

Accum sample_norm(const Real* x, std::size_t m) {
  Accum s = 0;
  for (std::size_t i = 0; i < m; ++i) s += Accum(x[i]) * x[i];
  return std::sqrt(s);
}

}  // namespace

Tensor l2_normalize_per_sample(const Tensor& input, Real epsilon) {
  if (!(epsilon > 0)) throw Error(ErrorKind::Value, "l2_normalize_per_sample: epsilon must be > 0");
  Tensor out(input.shape());
  const std::size_t m = sample_size(input);
  for (std::size_t b = 0; b < input.shape()[0]; ++b) {
    const Real* x = input.ptr() + b * m;
    const Accum denom = std::max(sample_norm(x, m), Accum(epsilon));
    Real* y = out.ptr() + b * m;
    for (std::size_t i = 0; i < m; ++i) y[i] = Real(x[i] / denom);
  }
  return out;
}

Tensor l2_normalize_per_sample_backward(const Tensor& input, Real epsilon, const Tensor& grad_out) {
  require_same_shape(input, grad_out, "l2_normalize_per_sample_backward");
  Tensor grad(input.shape());
  const std::size_t m = sample_size(input);
  for (std::size_t b = 0; b < input.shape()[0]; ++b) {
    const Real* x = input.ptr() + b * m;
    const Real* g = grad_out.ptr() + b * m;
    Real* dx = grad.ptr() + b * m;
    const Accum norm = sample_norm(x, m);
    if (norm <= Accum(epsilon)) {
      for (std::size_t i = 0; i < m; ++i) dx[i] = Real(g[i] / Accum(epsilon));
      continue;
    }
    // d(x/|x|) = (g - y <y, g>) / |x|
    Accum yg = 0;
    for (std::size_t i = 0; i < m; ++i) yg += (x[i] / norm) * g[i];
    for (std::size_t i = 0; i < m; ++i) dx[i] = Real((g[i] - (x[i] / norm) * yg) / norm);
  }
  return grad;
}

Tensor sigmoid(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const Real v = input[i];
    // Split by sign so exp never overflows.
    if (v >= 0) {
      out[i] = Real(1) / (Real(1) + std::exp(-v));
    } else {
      const Real e = std::exp(v);
      out[i] = e / (Real(1) + e);
    }
  }
  return out;
}

Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_out) {
  require_same_shape(output, grad_out, "sigmoid_backward");
  Tensor grad(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i) grad[i] = grad_out[i] * output[i] * (Real(1) - output[i]);
  return grad;
}

Tensor relu(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0 ? input[i] : Real(0);
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  require_same_shape(input, grad_out, "relu_backward");
  Tensor grad(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) grad[i] = input[i] > 0 ? grad_out[i] : Real(0);
  return grad;
}

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  if (input.shape().rank() != 2) throw ShapeError("dense", "rank", "input must be (B,N), got " + input.shape().str());
  if (weights.shape().rank() != 2) throw ShapeError("dense", "rank", "weights must be (N,M), got " + weights.shape().str());
  const std::size_t B = input.shape()[0], N = input.shape()[1], M = weights.shape()[1];
  if (weights.shape()[0] != N) {
    throw ShapeError("dense", "features", "input has " + num(N) + ", weights expect " + num(weights.shape()[0]));
  }
  if (!(bias.shape() == Shape{M})) throw ShapeError("dense", "bias", "expected (" + num(M) + "), got " + bias.shape().str());
  Tensor out(Shape{B, M});
  // Row-outer order so each weight row is read once for the whole batch.
  std::vector<Accum> acc(B * M);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < M; ++j) acc[b * M + j] = bias[j];
  for (std::size_t i = 0; i < N; ++i) {
    const Real* wrow = weights.ptr() + i * M;
    for (std::size_t b = 0; b < B; ++b) {
      const Accum a = input[b * N + i];
      if (a == 0) continue;
      Accum* row = acc.data() + b * M;
      for (std::size_t j = 0; j < M; ++j) row[j] += a * wrow[j];
    }
  }
  for (std::size_t k = 0; k < acc.size(); ++k) out[k] = Real(acc[k]);
  return out;
}

DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out) {
  const std::size_t B = input.shape()[0], N = input.shape()[1], M = weights.shape()[1];
  if (!(grad_out.shape() == Shape{B, M})) {
    throw ShapeError("dense_backward", "grad_out", "expected (" + num(B) + "," + num(M) + "), got " + grad_out.shape().str());
  }
  DenseGrads g{Tensor(input.shape()), Tensor(weights.shape()), Tensor(Shape{M})};
  std::vector<Accum> gw(N * M, 0), gb(M, 0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < M; ++j) gb[j] += grad_out[b * M + j];
  for (std::size_t i = 0; i < N; ++i) {
    const Real* wrow = weights.ptr() + i * M;
    Accum* gwrow = gw.data() + i * M;
    for (std::size_t b = 0; b < B; ++b) {
      const Real* go = grad_out.ptr() + b * M;
      const Accum a = input[b * N + i];
      Accum dot = 0;
      for (std::size_t j = 0; j < M; ++j) {
        dot += Accum(wrow[j]) * go[j];
        gwrow[j] += a * go[j];
      }
      g.input[b * N + i] = Real(dot);
    }
  }
  for (std::size_t i = 0; i < gw.size(); ++i) g.weights[i] = Real(gw[i]);
  for (std::size_t j = 0; j < M; ++j) g.bias[j] = Real(gb[j]);
  return g;
}

Tensor flatten(const Tensor& input) {
  const std::size_t B = input.shape()[0];
  return input.reshaped(Shape{B, input.size() / B});
}

SoftmaxXent softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.shape().rank() != 2) {
    throw ShapeError("softmax_cross_entropy", "rank", "logits must be (B,C), got " + logits.shape().str());
  }
  const std::size_t B = logits.shape()[0], C = logits.shape()[1];
  if (labels.size() != B) {
    throw ShapeError("softmax_cross_entropy", "batch", num(labels.size()) + " labels for " + num(B) + " rows");
  }
  require_finite(logits, "softmax_cross_entropy");
  SoftmaxXent r{0, Tensor(logits.shape())};
  Accum total = 0;
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] < 0 || std::size_t(labels[b]) >= C) {
      throw Error(ErrorKind::Value, "softmax_cross_entropy: label " + std::to_string(labels[b]) + " outside [0," +
                                        num(C) + ")");
    }
    const Real* z = logits.ptr() + b * C;
    const Real zmax = *std::max_element(z, z + C);
    Accum denom = 0;
    for (std::size_t c = 0; c < C; ++c) denom += std::exp(Accum(z[c] - zmax));
    const Accum log_denom = std::log(denom);
    for (std::size_t c = 0; c < C; ++c) r.probabilities[b * C + c] = Real(std::exp(Accum(z[c] - zmax)) / denom);
    total += log_denom - Accum(z[labels[b]] - zmax);
  }
  r.loss = Real(total / Accum(B));
  return r;
}

Tensor softmax_cross_entropy_backward(const Tensor& probabilities, std::span<const int> labels, Real grad_loss) {
  const std::size_t B = probabilities.shape()[0], C = probabilities.shape()[1];
  Tensor grad = probabilities;
  for (std::size_t b = 0; b < B; ++b) grad[b * C + std::size_t(labels[b])] -= Real(1);
  const Real s = grad_loss / Real(B);
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= s;
  return grad;
}

Tensor gate(const Tensor& gate_map, const Tensor& features) {
  require_nchw(gate_map, "gate");
  require_nchw(features, "gate");
  if (gate_map.channels() != 1) throw ShapeError("gate", "channels", "gate must have 1 channel, got " + num(gate_map.channels()));
  if (gate_map.batch() != features.batch()) throw ShapeError("gate", "batch", gate_map.shape().str() + " vs " + features.shape().str());
  if (gate_map.height() != features.height()) throw ShapeError("gate", "height", gate_map.shape().str() + " vs " + features.shape().str());
  if (gate_map.width() != features.width()) throw ShapeError("gate", "width", gate_map.shape().str() + " vs " + features.shape().str());
  const std::size_t C = features.channels(), HW = features.height() * features.width();
  Tensor out(features.shape());
  for (std::size_t n = 0; n < features.batch(); ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const Real* m = gate_map.ptr() + n * HW;
      const Real* f = features.ptr() + (n * C + c) * HW;
      Real* o = out.ptr() + (n * C + c) * HW;
      for (std::size_t p = 0; p < HW; ++p) o[p] = m[p] * f[p];
    }
  return out;
}

GateGrads gate_backward(const Tensor& gate_map, const Tensor& features, const Tensor& grad_out) {
  require_same_shape(features, grad_out, "gate_backward");
  const std::size_t C = features.channels(), HW = features.height() * features.width();
  GateGrads g{Tensor(gate_map.shape()), Tensor(features.shape())};
  for (std::size_t n = 0; n < features.batch(); ++n) {
    const Real* m = gate_map.ptr() + n * HW;
    Real* gm = g.gate.ptr() + n * HW;
    std::vector<Accum> acc(HW, 0);
    for (std::size_t c = 0; c < C; ++c) {
      const Real* f = features.ptr() + (n * C + c) * HW;
      const Real* go = grad_out.ptr() + (n * C + c) * HW;
      Real* gf = g.features.ptr() + (n * C + c) * HW;
      for (std::size_t p = 0; p < HW; ++p) {
        gf[p] = m[p] * go[p];
        acc[p] += Accum(f[p]) * go[p];
      }
    }
    for (std::size_t p = 0; p < HW; ++p) gm[p] = Real(acc[p]);
  }
  return g;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_nchw(a, "concat_channels");
  require_nchw(b, "concat_channels");
  if (a.batch() != b.batch() || a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("concat_channels", "shape", a.shape().str() + " vs " + b.shape().str());
  }
  const std::size_t ca = a.channels(), cb = b.channels(), HW = a.height() * a.width();
  Tensor out = Tensor::nchw(a.batch(), ca + cb, a.height(), a.width());
  for (std::size_t n = 0; n < a.batch(); ++n) {
    std::copy_n(a.ptr() + n * ca * HW, ca * HW, out.ptr() + n * (ca + cb) * HW);
    std::copy_n(b.ptr() + n * cb * HW, cb * HW, out.ptr() + (n * (ca + cb) + ca) * HW);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

Tensor scale(const Tensor& a, Real factor) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * factor;
  return out;
}

Real sum(const Tensor& a) {
  Accum s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
  return Real(s);
}

}  // namespace l2sa::ops
