#pragma once

// Minimal CPU building blocks for the decomposition network: CHW tensors,
// 2D convolution with explicit backward passes, nearest upsampling and a
// momentum-free RMSProp optimiser. Parameters live in one flat vector owned
// by the caller; layers only record offsets into it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "matpal/error.hpp"
#include "matpal/rng.hpp"

namespace matpal::nn {

template <class Real>
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<Real> v;

  Tensor() = default;
  Tensor(int channels, int height, int width, Real fill = Real(0))
      : c(channels), h(height), w(width),
        v(static_cast<std::size_t>(channels) * height * width, fill) {}

  Real* plane(int ch) { return v.data() + static_cast<std::size_t>(ch) * h * w; }
  const Real* plane(int ch) const { return v.data() + static_cast<std::size_t>(ch) * h * w; }
  Real& at(int ch, int y, int x) { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  Real at(int ch, int y, int x) const { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }
  void zero() { std::fill(v.begin(), v.end(), Real(0)); }
};

struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  std::size_t offset = 0;  // weights [out][in][k][k], then bias [out]

  int padding() const { return kernel / 2; }
  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
  }
  std::size_t parameter_count() const { return weight_count() + out_channels; }
  int out_size(int n) const { return (n + 2 * padding() - kernel) / stride + 1; }
};

// Registers `layer` at the end of the parameter layout.
inline Conv2d make_conv(std::size_t& cursor, int in, int out, int kernel = 3, int stride = 1) {
  Conv2d c{in, out, kernel, stride, cursor};
  cursor += c.parameter_count();
  return c;
}

template <class Real>
void init_conv(const Conv2d& layer, std::span<Real> params, Rng& rng, double gain = 2.0) {
  const double fan_in = static_cast<double>(layer.in_channels) * layer.kernel * layer.kernel;
  const double std_dev = std::sqrt(gain / fan_in);
  for (std::size_t i = 0; i < layer.weight_count(); ++i)
    params[layer.offset + i] = static_cast<Real>(rng.normal() * std_dev);
  for (int o = 0; o < layer.out_channels; ++o)
    params[layer.offset + layer.weight_count() + o] = Real(0);
}

namespace detail {
// Output columns whose input column ox*stride + kx - pad lies in [0, in_w).
inline void valid_range(int k, int stride, int pad, int in_n, int out_n, int& lo, int& hi) {
  lo = 0;
  while (lo < out_n && lo * stride + k - pad < 0) ++lo;
  hi = out_n;
  while (hi > lo && (hi - 1) * stride + k - pad >= in_n) --hi;
}
}  // namespace detail

template <class Real>
Tensor<Real> conv_forward(const Conv2d& layer, std::span<const Real> params,
                          const Tensor<Real>& in) {
  require(in.c == layer.in_channels, ErrorCode::shape_mismatch, "conv input channels");
  const int oh = layer.out_size(in.h), ow = layer.out_size(in.w);
  Tensor<Real> out(layer.out_channels, oh, ow);
  const Real* weights = params.data() + layer.offset;
  const Real* bias = weights + layer.weight_count();
  const int k = layer.kernel, s = layer.stride, p = layer.padding();
  for (int o = 0; o < layer.out_channels; ++o) {
    Real* dst = out.plane(o);
    std::fill(dst, dst + out.plane_size(), bias[o]);
    for (int i = 0; i < layer.in_channels; ++i) {
      const Real* src = in.plane(i);
      for (int ky = 0; ky < k; ++ky) {
        int ylo, yhi;
        detail::valid_range(ky, s, p, in.h, oh, ylo, yhi);
        for (int kx = 0; kx < k; ++kx) {
          int xlo, xhi;
          detail::valid_range(kx, s, p, in.w, ow, xlo, xhi);
          const Real wv = weights[((static_cast<std::size_t>(o) * layer.in_channels + i) * k + ky) * k + kx];
          for (int oy = ylo; oy < yhi; ++oy) {
            const Real* row = src + static_cast<std::size_t>(oy * s + ky - p) * in.w + (kx - p);
            Real* orow = dst + static_cast<std::size_t>(oy) * ow;
            if (s == 1) {
              for (int ox = xlo; ox < xhi; ++ox) orow[ox] += wv * row[ox];
            } else {
              for (int ox = xlo; ox < xhi; ++ox) orow[ox] += wv * row[ox * s];
            }
          }
        }
      }
    }
  }
  return out;
}

// Accumulates parameter gradients into `grads` and returns d(loss)/d(in).
template <class Real>
Tensor<Real> conv_backward(const Conv2d& layer, std::span<const Real> params,
                           const Tensor<Real>& in, const Tensor<Real>& grad_out,
                           std::span<Real> grads, bool need_input_grad = true) {
  const int oh = grad_out.h, ow = grad_out.w;
  Tensor<Real> grad_in;
  if (need_input_grad) grad_in = Tensor<Real>(in.c, in.h, in.w);
  const Real* weights = params.data() + layer.offset;
  Real* gw = grads.data() + layer.offset;
  Real* gb = gw + layer.weight_count();
  const int k = layer.kernel, s = layer.stride, p = layer.padding();
  for (int o = 0; o < layer.out_channels; ++o) {
    const Real* go = grad_out.plane(o);
    Real bsum = 0;
    for (std::size_t j = 0; j < grad_out.plane_size(); ++j) bsum += go[j];
    gb[o] += bsum;
    for (int i = 0; i < layer.in_channels; ++i) {
      const Real* src = in.plane(i);
      Real* gsrc = need_input_grad ? grad_in.plane(i) : nullptr;
      for (int ky = 0; ky < k; ++ky) {
        int ylo, yhi;
        detail::valid_range(ky, s, p, in.h, oh, ylo, yhi);
        for (int kx = 0; kx < k; ++kx) {
          int xlo, xhi;
          detail::valid_range(kx, s, p, in.w, ow, xlo, xhi);
          const std::size_t widx =
              ((static_cast<std::size_t>(o) * layer.in_channels + i) * k + ky) * k + kx;
          const Real wv = weights[widx];
          Real acc = 0;
          for (int oy = ylo; oy < yhi; ++oy) {
            const std::size_t in_off = static_cast<std::size_t>(oy * s + ky - p) * in.w + (kx - p);
            const Real* row = src + in_off;
            const Real* grow = go + static_cast<std::size_t>(oy) * ow;
            if (s == 1) {
              for (int ox = xlo; ox < xhi; ++ox) acc += grow[ox] * row[ox];
              if (gsrc) {
                Real* girow = gsrc + in_off;
                for (int ox = xlo; ox < xhi; ++ox) girow[ox] += wv * grow[ox];
              }
            } else {
              for (int ox = xlo; ox < xhi; ++ox) acc += grow[ox] * row[ox * s];
              if (gsrc) {
                Real* girow = gsrc + in_off;
                for (int ox = xlo; ox < xhi; ++ox) girow[ox * s] += wv * grow[ox];
              }
            }
          }
          gw[widx] += acc;
        }
      }
    }
  }
  return grad_in;
}

constexpr double kLeakySlope = 0.1;

template <class Real>
void leaky_relu_inplace(Tensor<Real>& t) {
  for (auto& x : t.v) x = x > 0 ? x : Real(kLeakySlope) * x;
}

// `activated` is the layer output after the activation.
template <class Real>
void leaky_relu_backward(const Tensor<Real>& activated, Tensor<Real>& grad) {
  for (std::size_t i = 0; i < grad.v.size(); ++i)
    if (activated.v[i] <= 0) grad.v[i] *= Real(kLeakySlope);
}

template <class Real>
Tensor<Real> upsample2(const Tensor<Real>& in) {
  Tensor<Real> out(in.c, in.h * 2, in.w * 2);
  for (int c = 0; c < in.c; ++c)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) out.at(c, y, x) = in.at(c, y / 2, x / 2);
  return out;
}

template <class Real>
Tensor<Real> upsample2_backward(const Tensor<Real>& grad_out) {
  Tensor<Real> g(grad_out.c, grad_out.h / 2, grad_out.w / 2);
  for (int c = 0; c < grad_out.c; ++c)
    for (int y = 0; y < grad_out.h; ++y)
      for (int x = 0; x < grad_out.w; ++x) g.at(c, y / 2, x / 2) += grad_out.at(c, y, x);
  return g;
}

template <class Real>
Tensor<Real> concat(const Tensor<Real>& a, const Tensor<Real>& b) {
  require(a.h == b.h && a.w == b.w, ErrorCode::shape_mismatch, "concat extents");
  Tensor<Real> out(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
  return out;
}

template <class Real>
void split(const Tensor<Real>& joined, int first_channels, Tensor<Real>& a, Tensor<Real>& b) {
  a = Tensor<Real>(first_channels, joined.h, joined.w);
  b = Tensor<Real>(joined.c - first_channels, joined.h, joined.w);
  std::copy(joined.v.begin(), joined.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()), a.v.begin());
  std::copy(joined.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()), joined.v.end(), b.v.begin());
}

// Per-parameter adaptive step size from a running mean of squared gradients;
// no momentum term.
template <class Real>
class RmsProp {
 public:
  RmsProp(std::size_t n, double step, double decay = 0.99, double eps = 1e-8)
      : mean_square_(n, 0.0), step_(step), decay_(decay), eps_(eps) {}

  void apply(std::span<Real> params, std::span<const Real> grads) {
    ++t_;
    // Bias-correct the running average so the first steps are not huge.
    const double correction = 1.0 - std::pow(decay_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grads[i];
      mean_square_[i] = decay_ * mean_square_[i] + (1.0 - decay_) * g * g;
      params[i] -= static_cast<Real>(step_ * g / (std::sqrt(mean_square_[i] / correction) + eps_));
    }
  }

  double step() const { return step_; }
  void set_step(double s) { step_ = s; }

 private:
  std::vector<double> mean_square_;
  double step_, decay_, eps_;
  long t_ = 0;
};

}  // namespace matpal::nn
