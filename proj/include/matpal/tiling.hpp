#pragma once

// Tileability tools: toroidal roll, periodic Poisson seam removal, seam
// scoring and weighted blending of overlapping patches.

#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <string>
#include <vector>

#include <fftw3.h>

#include "matpal/error.hpp"
#include "matpal/image.hpp"

namespace matpal {

struct SeamReport {
  double horizontal_seam = 0.0;  // left/right wrap
  double vertical_seam = 0.0;    // top/bottom wrap
  double combined = 0.0;
};

inline SeamReport seam_score(const Image& img) {
  SeamReport r;
  if (img.empty()) return r;
  const int w = img.width(), h = img.height(), ch = img.channels();
  double hs = 0, vs = 0;
  for (int y = 0; y < h; ++y)
    for (int c = 0; c < ch; ++c) hs += std::abs(img.at(y, w - 1, c) - img.at(y, 0, c));
  for (int x = 0; x < w; ++x)
    for (int c = 0; c < ch; ++c) vs += std::abs(img.at(h - 1, x, c) - img.at(0, x, c));
  r.horizontal_seam = hs / (static_cast<double>(h) * ch);
  r.vertical_seam = vs / (static_cast<double>(w) * ch);
  r.combined = 0.5 * (r.horizontal_seam + r.vertical_seam);
  return r;
}

// Mean absolute forward difference over interior (non-wrapping) neighbours.
inline double mean_interior_gradient(const Image& img) {
  const int w = img.width(), h = img.height(), ch = img.channels();
  double s = 0;
  std::size_t n = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) {
        if (x + 1 < w) s += std::abs(img.at(y, x + 1, c) - img.at(y, x, c)), ++n;
        if (y + 1 < h) s += std::abs(img.at(y + 1, x, c) - img.at(y, x, c)), ++n;
      }
  return n ? s / static_cast<double>(n) : 0.0;
}

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// Periodic gradient field of one channel with the wrap differences replaced
// by the mean of the two neighbouring interior differences.
inline void seam_free_gradients(const Image& img, int c, std::vector<double>& gx,
                                std::vector<double>& gy) {
  const int w = img.width(), h = img.height();
  gx.assign(static_cast<std::size_t>(w) * h, 0.0);
  gy.assign(gx.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      gx[i] = img.at(y, (x + 1) % w, c) - img.at(y, x, c);
      gy[i] = img.at((y + 1) % h, x, c) - img.at(y, x, c);
    }
  for (int y = 0; y < h; ++y) {
    const std::size_t row = static_cast<std::size_t>(y) * w;
    gx[row + w - 1] = 0.5 * (gx[row + w - 2] + gx[row]);
  }
  for (int x = 0; x < w; ++x)
    gy[static_cast<std::size_t>(h - 1) * w + x] =
        0.5 * (gy[static_cast<std::size_t>(h - 2) * w + x] + gy[x]);
}

inline std::vector<double> divergence(const std::vector<double>& gx, const std::vector<double>& gy,
                                      int w, int h) {
  std::vector<double> d(gx.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      d[i] = gx[i] - gx[static_cast<std::size_t>(y) * w + (x + w - 1) % w] + gy[i] -
             gy[static_cast<std::size_t>((y + h - 1) % h) * w + x];
    }
  return d;
}

}  // namespace detail

// Periodic 5-point Laplacian.
inline std::vector<double> periodic_laplacian(const std::vector<double>& u, int w, int h) {
  std::vector<double> out(u.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto at = [&](int yy, int xx) {
        return u[static_cast<std::size_t>((yy + h) % h) * w + (xx + w) % w];
      };
      out[static_cast<std::size_t>(y) * w + x] =
          at(y, x + 1) + at(y, x - 1) + at(y + 1, x) + at(y - 1, x) - 4.0 * at(y, x);
    }
  return out;
}

// Divergence of the seam-free gradient field for channel `c`; the right-hand
// side of the Poisson equation solved by poisson_solve.
inline std::vector<double> seam_free_divergence(const Image& img, int c) {
  std::vector<double> gx, gy;
  detail::seam_free_gradients(img, c, gx, gy);
  return detail::divergence(gx, gy, img.width(), img.height());
}

// Solves lap(u) = div(g) on the torus per channel with the zero mode set to
// the input mean. No clamping.
inline Image poisson_solve(const Image& img) {
  require(img.width() >= 4 && img.height() >= 4, ErrorCode::invalid_input,
          "poisson_blend needs an image of at least 4x4, got " + img.shape_string());
  const int w = img.width(), h = img.height();
  const int wc = w / 2 + 1;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::vector<double> real(n);
  std::vector<std::complex<double>> spec(static_cast<std::size_t>(h) * wc);
  auto* spec_ptr = reinterpret_cast<fftw_complex*>(spec.data());
  fftw_plan fwd, inv;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fwd = fftw_plan_dft_r2c_2d(h, w, real.data(), spec_ptr, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_2d(h, w, spec_ptr, real.data(), FFTW_ESTIMATE);
  }
  std::vector<double> eig_x(wc), eig_y(h);
  for (int k = 0; k < wc; ++k) eig_x[k] = 2.0 * std::cos(2.0 * std::numbers::pi * k / w) - 2.0;
  for (int l = 0; l < h; ++l) eig_y[l] = 2.0 * std::cos(2.0 * std::numbers::pi * l / h) - 2.0;

  Image out(w, h, img.channels());
  const auto means = channel_means(img);
  for (int c = 0; c < img.channels(); ++c) {
    const auto div = seam_free_divergence(img, c);
    std::copy(div.begin(), div.end(), real.begin());  // the plans hold real.data()
    fftw_execute(fwd);
    for (int l = 0; l < h; ++l)
      for (int k = 0; k < wc; ++k) {
        const double e = eig_x[k] + eig_y[l];
        auto& s = spec[static_cast<std::size_t>(l) * wc + k];
        s = (k == 0 && l == 0) ? std::complex<double>(means[c] * static_cast<double>(n), 0.0)
                               : s / e;
      }
    fftw_execute(inv);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.at(y, x, c) = real[static_cast<std::size_t>(y) * w + x] / static_cast<double>(n);
  }
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
  }
  return out;
}

inline Image poisson_blend(const Image& img) { return clamp01(poisson_solve(img)); }

// Roll offsets that put the wrap boundary between the most similar pair of
// adjacent columns and rows.
inline std::pair<int, int> best_seam_offset(const Image& img) {
  const int w = img.width(), h = img.height(), ch = img.channels();
  auto column_gap = [&](int x0) {
    double s = 0;
    for (int y = 0; y < h; ++y)
      for (int c = 0; c < ch; ++c) s += std::abs(img.at(y, x0, c) - img.at(y, (x0 + 1) % w, c));
    return s;
  };
  auto row_gap = [&](int y0) {
    double s = 0;
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) s += std::abs(img.at(y0, x, c) - img.at((y0 + 1) % h, x, c));
    return s;
  };
  int bx = w - 1, by = h - 1;
  double gx = column_gap(bx), gy = row_gap(by);
  for (int x = 0; x < w - 1; ++x)
    if (const double g = column_gap(x); g < gx) gx = g, bx = x;
  for (int y = 0; y < h - 1; ++y)
    if (const double g = row_gap(y); g < gy) gy = g, by = y;
  // Column bx must land at W-1: out[W-1] = in[W-1-dx].
  return {w - 1 - bx, h - 1 - by};
}

struct Patch {
  Image image;
  int x = 0;
  int y = 0;
};

// Raised-cosine weight at index i of a span of n pixels.
inline double raised_cosine(int i, int n) {
  return 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (i + 0.5) / n);
}

// Weight of patch pixel i along one axis; the half touching a canvas edge
// keeps full weight.
inline double blend_weight(int i, int n, bool at_low_edge, bool at_high_edge) {
  if (at_low_edge && 2 * i < n) return 1.0;
  if (at_high_edge && 2 * i >= n) return 1.0;
  return raised_cosine(i, n);
}

// Top-left corners of `patch`-sized windows covering a `canvas` span with at
// least `overlap` pixels shared between neighbours.
inline std::vector<int> patch_positions(int canvas, int patch, int overlap) {
  require(patch > 0 && patch <= canvas, ErrorCode::invalid_argument, "patch larger than canvas");
  require(overlap >= 0 && overlap < patch, ErrorCode::invalid_argument, "invalid overlap");
  if (patch == canvas) return {0};
  const int stride = patch - overlap;
  const int count = 1 + (canvas - patch + stride - 1) / stride;
  std::vector<int> pos(count);
  for (int i = 0; i < count; ++i)
    pos[i] = static_cast<int>(std::lround(static_cast<double>(i) * (canvas - patch) / (count - 1)));
  return pos;
}

struct PatchPlacement {
  int x, y, size;
};

inline std::vector<PatchPlacement> patch_layout(int canvas, int patch, int overlap) {
  std::vector<PatchPlacement> out;
  for (int y : patch_positions(canvas, patch, overlap))
    for (int x : patch_positions(canvas, patch, overlap)) out.push_back({x, y, patch});
  return out;
}

inline Image blend_patches(const std::vector<Patch>& patches, int canvas_width, int canvas_height) {
  require(!patches.empty(), ErrorCode::coverage, "no patches");
  const int ch = patches.front().image.channels();
  Image acc(canvas_width, canvas_height, ch);
  std::vector<double> wsum(static_cast<std::size_t>(canvas_width) * canvas_height, 0.0);
  for (const auto& p : patches) {
    const int pw = p.image.width(), ph = p.image.height();
    require(p.image.channels() == ch, ErrorCode::shape_mismatch, "patch channel counts differ");
    require(p.x >= 0 && p.y >= 0 && p.x + pw <= canvas_width && p.y + ph <= canvas_height,
            ErrorCode::invalid_argument, "patch outside canvas");
    std::vector<double> wx(pw), wy(ph);
    for (int i = 0; i < pw; ++i) wx[i] = blend_weight(i, pw, p.x == 0, p.x + pw == canvas_width);
    for (int i = 0; i < ph; ++i) wy[i] = blend_weight(i, ph, p.y == 0, p.y + ph == canvas_height);
    for (int y = 0; y < ph; ++y)
      for (int x = 0; x < pw; ++x) {
        const double wt = wx[x] * wy[y];
        wsum[static_cast<std::size_t>(p.y + y) * canvas_width + p.x + x] += wt;
        for (int c = 0; c < ch; ++c) acc.at(p.y + y, p.x + x, c) += wt * p.image.at(y, x, c);
      }
  }
  for (int y = 0; y < canvas_height; ++y)
    for (int x = 0; x < canvas_width; ++x) {
      const double s = wsum[static_cast<std::size_t>(y) * canvas_width + x];
      if (s <= 0.0)
        fail(ErrorCode::coverage,
             "pixel (" + std::to_string(x) + ", " + std::to_string(y) + ") is not covered");
      for (int c = 0; c < ch; ++c) acc.at(y, x, c) /= s;
    }
  return acc;
}

inline Image blend_patches(const std::vector<Patch>& patches, int canvas_size) {
  return blend_patches(patches, canvas_size, canvas_size);
}

}  // namespace matpal
