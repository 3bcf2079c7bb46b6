#pragma once

// Parametric periodic material patterns (stripes, bricks, noise, dots)
// evaluated on the unit torus, so they can be rasterised at any resolution
// or over any sub-window and always tile.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "matpal/error.hpp"
#include "matpal/image.hpp"
#include "matpal/rng.hpp"
#include "matpal/svbrdf.hpp"

namespace matpal {

enum class PatternFamily { stripes, bricks, noise, dots };

inline constexpr std::array<PatternFamily, 4> kAllFamilies{
    PatternFamily::stripes, PatternFamily::bricks, PatternFamily::noise, PatternFamily::dots};

inline std::string_view family_name(PatternFamily f) {
  switch (f) {
    case PatternFamily::stripes: return "stripes";
    case PatternFamily::bricks: return "bricks";
    case PatternFamily::noise: return "noise";
    case PatternFamily::dots: return "dots";
  }
  return "noise";
}

// Accepts the family name or a class token that contains it ("brick",
// "striped fabric", ...). Unknown tokens map to noise.
inline PatternFamily family_from_token(std::string_view token) {
  std::string t(token);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t.find("stripe") != std::string::npos || t.find("plank") != std::string::npos ||
      t.find("wood") != std::string::npos)
    return PatternFamily::stripes;
  if (t.find("brick") != std::string::npos || t.find("tile") != std::string::npos)
    return PatternFamily::bricks;
  if (t.find("dot") != std::string::npos || t.find("polka") != std::string::npos)
    return PatternFamily::dots;
  return PatternFamily::noise;
}

using Rgb = std::array<double, 3>;

inline Rgb hsv_to_rgb(double hue_deg, double sat, double val) {
  double h = std::fmod(hue_deg, 360.0);
  if (h < 0) h += 360.0;
  const double c = val * sat;
  const double x = c * (1.0 - std::abs(std::fmod(h / 60.0, 2.0) - 1.0));
  const double m = val - c;
  Rgb rgb{};
  if (h < 60) rgb = {c, x, 0};
  else if (h < 120) rgb = {x, c, 0};
  else if (h < 180) rgb = {0, c, x};
  else if (h < 240) rgb = {0, x, c};
  else if (h < 300) rgb = {x, 0, c};
  else rgb = {c, 0, x};
  return {rgb[0] + m, rgb[1] + m, rgb[2] + m};
}

// Hue in degrees [0, 360); achromatic colours report 0.
inline double rgb_hue(const Rgb& c) {
  const double mx = std::max({c[0], c[1], c[2]});
  const double mn = std::min({c[0], c[1], c[2]});
  const double d = mx - mn;
  if (d <= 1e-12) return 0.0;
  double h;
  if (mx == c[0]) h = 60.0 * std::fmod((c[1] - c[2]) / d, 6.0);
  else if (mx == c[1]) h = 60.0 * ((c[2] - c[0]) / d + 2.0);
  else h = 60.0 * ((c[0] - c[1]) / d + 4.0);
  return h < 0 ? h + 360.0 : h;
}

inline double hue_distance(double a, double b) {
  const double d = std::fmod(std::abs(a - b), 360.0);
  return std::min(d, 360.0 - d);
}

// Periodic value noise on a `cells` x `cells` lattice with smooth
// interpolation.
class PeriodicNoise {
 public:
  PeriodicNoise() = default;
  PeriodicNoise(int cells, std::uint64_t seed) : cells_(std::max(cells, 1)) {
    Rng rng(derive_seed(seed, "lattice"));
    lattice_.resize(static_cast<std::size_t>(cells_) * cells_);
    for (auto& v : lattice_) v = rng.uniform();
  }

  // u, v in texture units (period 1).
  double operator()(double u, double v) const {
    if (lattice_.empty()) return 0.5;
    const double fx = u * cells_, fy = v * cells_;
    const double x0f = std::floor(fx), y0f = std::floor(fy);
    const double tx = smooth(fx - x0f), ty = smooth(fy - y0f);
    const int x0 = wrap(static_cast<long>(x0f)), y0 = wrap(static_cast<long>(y0f));
    const int x1 = wrap(x0 + 1L), y1 = wrap(y0 + 1L);
    const double a = at(x0, y0), b = at(x1, y0), c = at(x0, y1), d = at(x1, y1);
    return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
  }

 private:
  static double smooth(double t) { return t * t * t * (t * (t * 6 - 15) + 10); }
  int wrap(long i) const {
    long r = i % cells_;
    return static_cast<int>(r < 0 ? r + cells_ : r);
  }
  double at(int x, int y) const { return lattice_[static_cast<std::size_t>(y) * cells_ + x]; }

  int cells_ = 1;
  std::vector<double> lattice_;
};

struct PatternParams {
  PatternFamily family = PatternFamily::noise;
  int cycles_x = 4;  // stripes: wave vector; bricks: bricks per row; dots/noise: grid
  int cycles_y = 4;  // stripes: wave vector; bricks: rows
  double phase = 0.0;
  double sharpness = 0.5;  // 0 = sinusoidal profile, 1 = hard edge
  double feature = 0.15;   // mortar width / dot radius, as a fraction of a cell
  Rgb color_a{0.5, 0.5, 0.5};
  Rgb color_b{0.3, 0.3, 0.3};
  double grain = 0.1;  // multiplicative albedo noise amplitude
  double height_scale = 0.6;
  double rough_base = 0.5;
  double rough_range = 0.4;
  std::uint64_t noise_seed = 1;
};

// Evaluates the pattern fields on the unit torus.
class PatternField {
 public:
  explicit PatternField(const PatternParams& p)
      : p_(p),
        base_(std::max(p.cycles_x, 1), derive_seed(p.noise_seed, "base")),
        grain_(std::max(4 * std::max(p.cycles_x, p.cycles_y), 8), derive_seed(p.noise_seed, "grain")),
        rough_(std::max(p.cycles_x, 2), derive_seed(p.noise_seed, "rough")) {}

  const PatternParams& params() const { return p_; }

  // Blend factor between color_a (0) and color_b (1).
  double mix(double u, double v) const {
    switch (p_.family) {
      case PatternFamily::stripes: {
        const double t = 2.0 * std::numbers::pi * (p_.cycles_x * u + p_.cycles_y * v) + p_.phase;
        return sharpen(0.5 + 0.5 * std::sin(t));
      }
      case PatternFamily::bricks: {
        const int rows = std::max(p_.cycles_y, 1), cols = std::max(p_.cycles_x, 1);
        const double fy = frac(v + p_.phase / (2.0 * std::numbers::pi)) * rows;
        const int row = static_cast<int>(fy);
        const double fx = frac(u + (row % 2 ? 0.5 / cols : 0.0)) * cols;
        const double dy = std::min(fy - row, 1.0 - (fy - row));
        const double dx = std::min(fx - std::floor(fx), 1.0 - (fx - std::floor(fx)));
        const double edge = std::min(dy, dx * rows / static_cast<double>(cols));
        // 1 inside mortar, 0 on brick faces.
        return 1.0 - soft_step(edge, p_.feature * 0.5);
      }
      case PatternFamily::dots: {
        const double fx = frac(u * std::max(p_.cycles_x, 1)) - 0.5;
        const double fy = frac(v * std::max(p_.cycles_y, 1) + p_.phase / (2.0 * std::numbers::pi)) - 0.5;
        const double r = std::sqrt(fx * fx + fy * fy);
        return 1.0 - soft_step(r - p_.feature * 1.5, 0.0);
      }
      case PatternFamily::noise:
        return sharpen(base_(u, v));
    }
    return 0.5;
  }

  double height(double u, double v) const {
    const double m = mix(u, v);
    return p_.family == PatternFamily::bricks ? -m : m;
  }

  Rgb albedo(double u, double v) const {
    const double m = mix(u, v);
    const double g = 1.0 + p_.grain * (2.0 * grain_(u, v) - 1.0);
    Rgb out;
    for (int c = 0; c < 3; ++c)
      out[c] = std::clamp((p_.color_a[c] * (1.0 - m) + p_.color_b[c] * m) * g, 0.0, 1.0);
    return out;
  }

  double roughness(double u, double v) const {
    const double r = p_.rough_base + p_.rough_range * (rough_(u, v) - 0.5) + 0.15 * (mix(u, v) - 0.5);
    return std::clamp(r, 0.1, 0.9);
  }

  // Resolution-independent normal from the height gradient in texture units.
  Vec3 normal(double u, double v) const {
    constexpr double h = 1e-3;
    const double cells = std::max({p_.cycles_x, p_.cycles_y, 1});
    const double k = p_.height_scale / (2.0 * std::numbers::pi * cells);
    const double dx = (height(u + h, v) - height(u - h, v)) / (2 * h);
    const double dy = (height(u, v + h) - height(u, v - h)) / (2 * h);
    const double sx = std::clamp(-k * dx, -3.0, 3.0), sy = std::clamp(-k * dy, -3.0, 3.0);
    return normalize({sx, sy, 1.0});
  }

 private:
  static double frac(double x) { return x - std::floor(x); }
  double sharpen(double t) const {
    // Blend between the smooth profile and a steep logistic around 0.5.
    const double steep = 1.0 / (1.0 + std::exp(-(t - 0.5) * 24.0));
    return (1.0 - p_.sharpness) * t + p_.sharpness * steep;
  }
  double soft_step(double d, double threshold) const {
    const double width = 0.02 + 0.1 * (1.0 - p_.sharpness);
    return std::clamp((d - threshold) / width + 0.5, 0.0, 1.0);
  }

  PatternParams p_;
  PeriodicNoise base_, grain_, rough_;
};

// Rasterises the window [x0, x0+w) x [y0, y0+h) of a `canvas`-pixel
// period. Pass x0 = y0 = 0, w = h = canvas for the full texture.
inline MaterialMaps rasterize_material(const PatternField& f, int canvas, int x0, int y0, int w,
                                       int h) {
  MaterialMaps m = MaterialMaps::zeros(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double u = (x0 + x + 0.5) / canvas, v = (y0 + y + 0.5) / canvas;
      const Rgb a = f.albedo(u, v);
      const Vec3 n = f.normal(u, v);
      for (int c = 0; c < 3; ++c) m.albedo.at(y, x, c) = a[c];
      m.normals.at(y, x, 0) = n.x;
      m.normals.at(y, x, 1) = n.y;
      m.normals.at(y, x, 2) = n.z;
      m.roughness.at(y, x) = f.roughness(u, v);
    }
  return m;
}

inline MaterialMaps rasterize_material(const PatternField& f, int size) {
  return rasterize_material(f, size, 0, 0, size, size);
}

}  // namespace matpal
