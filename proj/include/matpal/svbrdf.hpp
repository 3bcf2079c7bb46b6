#pragma once

// Material maps, the microfacet rendering operator, lighting sampling and the
// regression / multi-view rendering losses used to train decomposition.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "matpal/error.hpp"
#include "matpal/image.hpp"
#include "matpal/rng.hpp"

namespace matpal {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double length(Vec3 a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalize(Vec3 a) { return a * (1.0 / length(a)); }

// Degrees: azimuth around +z, elevation above the surface plane.
inline Vec3 direction_from_angles(double azimuth_deg, double elevation_deg) {
  require(std::isfinite(azimuth_deg) && elevation_deg > 0.0 && elevation_deg <= 90.0, ErrorCode::invalid_argument,
          "elevation must lie in (0, 90] degrees, got " + std::to_string(elevation_deg));
  const double az = azimuth_deg * std::numbers::pi / 180.0;
  const double el = elevation_deg * std::numbers::pi / 180.0;
  return normalize({std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)});
}

constexpr double kSpecularEpsilon = 1e-4;
// Lower bound on the GGX alpha; a perfectly smooth microfacet lobe is a
// delta and cannot be evaluated pointwise.
constexpr double kMinGgxAlpha = 1e-3;
constexpr double kDefaultF0 = 0.04;
constexpr double kDefaultIntensity = std::numbers::pi;

struct LightingConfig {
  Vec3 light_dir{0, 0, 1};
  Vec3 view_dir{0, 0, 1};
  double intensity = kDefaultIntensity;
  double f0 = kDefaultF0;

  void validate() const {
    for (Vec3 d : {light_dir, view_dir}) {
      require(std::isfinite(d.x) && std::isfinite(d.y) && std::isfinite(d.z),
              ErrorCode::invalid_argument, "non-finite lighting direction");
      require(std::abs(length(d) - 1.0) <= 1e-6 && d.z > 0.0, ErrorCode::invalid_argument,
              "lighting directions must be unit vectors with z > 0");
    }
    require(std::isfinite(intensity) && intensity >= 0.0, ErrorCode::invalid_argument,
            "intensity must be finite and non-negative");
    require(f0 >= 0.0 && f0 <= 1.0, ErrorCode::invalid_argument, "f0 must lie in [0,1]");
  }
};

struct LossWeights {
  double lambda_reg = 1.0;
  int view_count = 9;

  void validate() const {
    require(lambda_reg >= 0.0 && std::isfinite(lambda_reg), ErrorCode::invalid_argument,
            "lambda_reg must be >= 0");
    require(view_count >= 1, ErrorCode::invalid_argument, "view_count must be >= 1");
  }
};

// The SVBRDF triple. Albedo is linear RGB, normals are unit tangent-space
// vectors, roughness is a single channel.
struct MaterialMaps {
  Image albedo;     // 3 channels
  Image normals;    // 3 channels
  Image roughness;  // 1 channel

  int width() const noexcept { return albedo.width(); }
  int height() const noexcept { return albedo.height(); }

  static MaterialMaps zeros(int width, int height) {
    return {Image(width, height, 3), Image(width, height, 3), Image(width, height, 1)};
  }

  static MaterialMaps flat(int width, int height, std::array<double, 3> albedo,
                           double roughness) {
    MaterialMaps m{constant_image(width, height, albedo), Image(width, height, 3),
                   Image(width, height, 1, roughness)};
    for (std::size_t i = 2; i < m.normals.size(); i += 3) m.normals.data()[i] = 1.0;
    return m;
  }

  void check_shapes() const {
    require(albedo.channels() == 3 && normals.channels() == 3 && roughness.channels() == 1,
            ErrorCode::shape_mismatch, "material maps need 3/3/1 channels");
    require(albedo.same_extent(normals) && albedo.same_extent(roughness),
            ErrorCode::shape_mismatch, "material maps differ in resolution");
  }

  // Empty string when every invariant holds, otherwise a description of the
  // first violation.
  std::string invariant_violation() const {
    if (albedo.channels() != 3 || normals.channels() != 3 || roughness.channels() != 1)
      return "channel layout";
    if (!albedo.same_extent(normals) || !albedo.same_extent(roughness)) return "resolution";
    for (double v : albedo.data())
      if (!(v >= 0.0 && v <= 1.0)) return "albedo outside [0,1]";
    for (double v : roughness.data())
      if (!(v >= 0.0 && v <= 1.0)) return "roughness outside [0,1]";
    const auto n = normals.data();
    for (std::size_t i = 0; i < n.size(); i += 3) {
      const double len = std::sqrt(n[i] * n[i] + n[i + 1] * n[i + 1] + n[i + 2] * n[i + 2]);
      if (!(std::abs(len - 1.0) <= 1e-5)) return "normal not unit length";
      if (!(n[i + 2] >= 1e-3)) return "normal z below 1e-3";
    }
    return {};
  }

  void validate() const {
    const auto v = invariant_violation();
    require(v.empty(), ErrorCode::invalid_input, "material invariant violated: " + v);
  }

  friend bool operator==(const MaterialMaps&, const MaterialMaps&) = default;
};

// Same layout as MaterialMaps, used for derivatives; carries no invariants.
using MaterialGradient = MaterialMaps;

inline void require_same_material_shape(const MaterialMaps& a, const MaterialMaps& b) {
  a.check_shapes();
  b.check_shapes();
  require(a.albedo.same_extent(b.albedo), ErrorCode::shape_mismatch,
          "materials differ in resolution");
}

// ---------------------------------------------------------------------------
// Normal map encoding
// ---------------------------------------------------------------------------

inline Vec3 decode_normal(double r, double g, double b) {
  Vec3 v{2.0 * r - 1.0, 2.0 * g - 1.0, 2.0 * b - 1.0};
  const double len = length(v);
  if (len < 1e-6) return {0, 0, 1};
  v = v * (1.0 / len);
  if (v.z < 1e-3) return {0, 0, 1};
  return v;
}

inline Image decode_normals(const Image& encoded) {
  require(encoded.channels() == 3, ErrorCode::shape_mismatch, "normal map needs 3 channels");
  Image out(encoded.width(), encoded.height(), 3);
  const auto in = encoded.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); i += 3) {
    require(std::isfinite(in[i]) && std::isfinite(in[i + 1]) && std::isfinite(in[i + 2]),
            ErrorCode::invalid_input, "non-finite value in normal map");
    const Vec3 n = decode_normal(in[i], in[i + 1], in[i + 2]);
    o[i] = n.x;
    o[i + 1] = n.y;
    o[i + 2] = n.z;
  }
  return out;
}

inline Image encode_normals(const Image& normals) {
  Image out = normals;
  for (auto& v : out.data()) v = 0.5 * (v + 1.0);
  return out;
}

// Applies roll(dx, dy) then dihedral(k) to every map, rotating the normal
// vectors with the pixel grid. render() commutes with this when the lights
// are transformed the same way.
inline MaterialMaps transform_material(const MaterialMaps& m, int dx, int dy, int k) {
  MaterialMaps out{dihedral(roll(m.albedo, dx, dy), k), dihedral(roll(m.normals, dx, dy), k),
                   dihedral(roll(m.roughness, dx, dy), k)};
  auto n = out.normals.data();
  for (std::size_t i = 0; i < n.size(); i += 3) {
    if (k & 4) std::swap(n[i], n[i + 1]);
    if (k & 1) n[i] = -n[i];
    if (k & 2) n[i + 1] = -n[i + 1];
  }
  return out;
}

inline Vec3 transform_direction(Vec3 v, int k) {
  if (k & 4) std::swap(v.x, v.y);
  if (k & 1) v.x = -v.x;
  if (k & 2) v.y = -v.y;
  return v;
}

// ---------------------------------------------------------------------------
// Lighting
// ---------------------------------------------------------------------------

// Cosine-weighted direction on the upper hemisphere; z is strictly positive.
inline Vec3 sample_hemisphere(Rng& rng) {
  const double u = rng.uniform();
  const double phi = 2.0 * std::numbers::pi * rng.uniform();
  const double r = std::sqrt(u);
  return {r * std::cos(phi), r * std::sin(phi), std::sqrt(1.0 - u)};
}

inline Vec3 mirror_about_z(Vec3 v) { return {-v.x, -v.y, v.z}; }

// `count` views: the first min(count, 6) put light and viewer in mirror
// configuration so flat surfaces show their specular peak; the rest draw
// light and view independently.
inline std::vector<LightingConfig> sample_lighting(std::uint64_t seed, int count = 9) {
  require(count >= 1, ErrorCode::invalid_argument, "need at least one view");
  Rng rng(derive_seed(seed, "lighting"));
  std::vector<LightingConfig> out;
  out.reserve(count);
  const int symmetric = std::min(count, 6);
  for (int i = 0; i < symmetric; ++i) {
    LightingConfig cfg;
    cfg.view_dir = sample_hemisphere(rng);
    cfg.light_dir = mirror_about_z(cfg.view_dir);
    out.push_back(cfg);
  }
  for (int i = symmetric; i < count; ++i) {
    LightingConfig cfg;
    cfg.light_dir = sample_hemisphere(rng);
    cfg.view_dir = sample_hemisphere(rng);
    out.push_back(cfg);
  }
  return out;
}

// One independent random configuration, used to render network inputs.
inline LightingConfig sample_random_lighting(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "random-lighting"));
  LightingConfig cfg;
  cfg.light_dir = sample_hemisphere(rng);
  cfg.view_dir = sample_hemisphere(rng);
  return cfg;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace detail {

// Forward-mode dual number with N tangent directions.
template <int N>
struct Dual {
  double v = 0;
  std::array<double, N> d{};

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: implicit lift of constants

  static Dual variable(double value, int index) {
    Dual r(value);
    r.d[index] = 1.0;
    return r;
  }

  friend Dual operator+(const Dual& a, const Dual& b) {
    Dual r(a.v + b.v);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] + b.d[i];
    return r;
  }
  friend Dual operator-(const Dual& a, const Dual& b) {
    Dual r(a.v - b.v);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] - b.d[i];
    return r;
  }
  friend Dual operator*(const Dual& a, const Dual& b) {
    Dual r(a.v * b.v);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
    return r;
  }
  friend Dual operator/(const Dual& a, const Dual& b) {
    Dual r(a.v / b.v);
    const double inv = 1.0 / (b.v * b.v);
    for (int i = 0; i < N; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) * inv;
    return r;
  }
  friend Dual sqrt(const Dual& a) {
    Dual r(std::sqrt(a.v));
    const double k = 0.5 / r.v;
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * k;
    return r;
  }
};

inline double value_of(double x) { return x; }
template <int N>
double value_of(const Dual<N>& x) {
  return x.v;
}
inline double sqrt(double x) { return std::sqrt(x); }

template <class T>
T max_with(const T& a, double floor) {
  return value_of(a) > floor ? a : T(floor);
}

struct ViewTerms {
  Vec3 l, v, h;
  double fresnel;
  double intensity;
};

inline ViewTerms view_terms(const LightingConfig& cfg) {
  ViewTerms t;
  t.l = cfg.light_dir;
  t.v = cfg.view_dir;
  t.h = normalize(cfg.light_dir + cfg.view_dir);
  const double vh = std::clamp(dot(t.v, t.h), 0.0, 1.0);
  t.fresnel = cfg.f0 + (1.0 - cfg.f0) * std::pow(1.0 - vh, 5.0);
  t.intensity = cfg.intensity;
  return t;
}

// Unclamped radiance of one pixel for one channel set. Generic in the
// scalar so derivatives come from the same expression.
template <class T>
std::array<T, 3> shade(const std::array<T, 3>& albedo, const std::array<T, 3>& n,
                       const T& roughness, const ViewTerms& vt) {
  const T nl = n[0] * vt.l.x + n[1] * vt.l.y + n[2] * vt.l.z;
  const T nv = n[0] * vt.v.x + n[1] * vt.v.y + n[2] * vt.v.z;
  const T nh = max_with(T(n[0] * vt.h.x + n[1] * vt.h.y + n[2] * vt.h.z), 0.0);
  const T nl_c = max_with(nl, kSpecularEpsilon);
  const T nv_c = max_with(nv, kSpecularEpsilon);
  const T alpha = max_with(T(roughness * roughness), kMinGgxAlpha);
  const T a2 = alpha * alpha;
  const T denom = nh * nh * (a2 - T(1.0)) + T(1.0);
  const T distribution = a2 / (T(std::numbers::pi) * denom * denom);
  const T one_minus_a2 = T(1.0) - a2;
  const T g_l = T(2.0) * nl_c / (nl_c + sqrt(a2 + one_minus_a2 * nl_c * nl_c));
  const T g_v = T(2.0) * nv_c / (nv_c + sqrt(a2 + one_minus_a2 * nv_c * nv_c));
  const T specular =
      distribution * T(vt.fresnel) * g_l * g_v / (T(4.0) * nl_c * nv_c);
  const T cosine = max_with(nl, 0.0);
  const T scale = T(vt.intensity) * cosine;
  std::array<T, 3> out;
  for (int c = 0; c < 3; ++c)
    out[c] = (albedo[c] * T(1.0 / std::numbers::pi) + specular) * scale;
  return out;
}

}  // namespace detail

using RenderedImage = Image;

// Renders the material under one directional light. Evaluated plane by plane
// so the inner loops vectorise.
inline RenderedImage render(const MaterialMaps& m, const LightingConfig& cfg) {
  m.check_shapes();
  const auto vt = detail::view_terms(cfg);
  const std::size_t n = m.albedo.pixel_count();
  const auto nrm = m.normals.data();
  const auto rough = m.roughness.data();
  const auto alb = m.albedo.data();

  std::vector<double> nl(n), nv(n), nh(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double nx = nrm[3 * i], ny = nrm[3 * i + 1], nz = nrm[3 * i + 2];
    nl[i] = nx * vt.l.x + ny * vt.l.y + nz * vt.l.z;
    nv[i] = nx * vt.v.x + ny * vt.v.y + nz * vt.v.z;
    nh[i] = std::max(nx * vt.h.x + ny * vt.h.y + nz * vt.h.z, 0.0);
  }
  std::vector<double> spec(n), scale(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double nl_c = std::max(nl[i], kSpecularEpsilon);
    const double nv_c = std::max(nv[i], kSpecularEpsilon);
    const double alpha = std::max(rough[i] * rough[i], kMinGgxAlpha);
    const double a2 = alpha * alpha;
    const double denom = nh[i] * nh[i] * (a2 - 1.0) + 1.0;
    const double d = a2 / (std::numbers::pi * denom * denom);
    const double g_l = 2.0 * nl_c / (nl_c + std::sqrt(a2 + (1.0 - a2) * nl_c * nl_c));
    const double g_v = 2.0 * nv_c / (nv_c + std::sqrt(a2 + (1.0 - a2) * nv_c * nv_c));
    spec[i] = d * vt.fresnel * g_l * g_v / (4.0 * nl_c * nv_c);
    scale[i] = vt.intensity * std::max(nl[i], 0.0);
  }
  RenderedImage out(m.width(), m.height(), 3);
  auto o = out.data();
  constexpr double inv_pi = 1.0 / std::numbers::pi;
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c)
      o[3 * i + c] = std::clamp((alb[3 * i + c] * inv_pi + spec[i]) * scale[i], 0.0, 1.0);
  return out;
}

// Accumulates d(sum_pixels upstream . render(m, cfg)) / d(maps) into `grad`.
// Pixels whose radiance is clamped contribute nothing.
inline void render_backward(const MaterialMaps& m, const LightingConfig& cfg,
                            const Image& upstream, MaterialGradient& grad) {
  using D = detail::Dual<7>;
  m.check_shapes();
  require(upstream.channels() == 3 && upstream.same_extent(m.albedo), ErrorCode::shape_mismatch,
          "render_backward upstream shape");
  const auto vt = detail::view_terms(cfg);
  const std::size_t n = m.albedo.pixel_count();
  const auto alb = m.albedo.data();
  const auto nrm = m.normals.data();
  const auto rough = m.roughness.data();
  const auto up = upstream.data();
  auto ga = grad.albedo.data();
  auto gn = grad.normals.data();
  auto gr = grad.roughness.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (up[3 * i] == 0.0 && up[3 * i + 1] == 0.0 && up[3 * i + 2] == 0.0) continue;
    const std::array<D, 3> a{D::variable(alb[3 * i], 0), D::variable(alb[3 * i + 1], 1),
                             D::variable(alb[3 * i + 2], 2)};
    const std::array<D, 3> nn{D::variable(nrm[3 * i], 3), D::variable(nrm[3 * i + 1], 4),
                              D::variable(nrm[3 * i + 2], 5)};
    const D r = D::variable(rough[i], 6);
    const auto rad = detail::shade(a, nn, r, vt);
    for (int c = 0; c < 3; ++c) {
      const double g = up[3 * i + c];
      if (g == 0.0 || rad[c].v <= 0.0 || rad[c].v >= 1.0) continue;
      for (int k = 0; k < 3; ++k) ga[3 * i + k] += g * rad[c].d[k];
      for (int k = 0; k < 3; ++k) gn[3 * i + k] += g * rad[c].d[3 + k];
      gr[i] += g * rad[c].d[6];
    }
  }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline constexpr int kStackedChannels = 7;

// Mean absolute difference over the stacked {albedo, encoded normals,
// roughness} channels. Accumulates the subgradient w.r.t. `m` into `grad`
// (scaled by `scale`) when given.
inline double loss_reg(const MaterialMaps& m, const MaterialMaps& target,
                       MaterialGradient* grad = nullptr, double scale = 1.0) {
  require_same_material_shape(m, target);
  const double count = static_cast<double>(m.albedo.pixel_count()) * kStackedChannels;
  const auto sgn = [](double d) { return d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0); };
  double sum = 0.0;
  {
    const auto a = m.albedo.data(), b = target.albedo.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = a[i] - b[i];
      sum += std::abs(d);
      if (grad) grad->albedo.data()[i] += scale * sgn(d) / count;
    }
  }
  {
    const auto a = m.normals.data(), b = target.normals.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = 0.5 * (a[i] - b[i]);
      sum += std::abs(d);
      if (grad) grad->normals.data()[i] += scale * 0.5 * sgn(d) / count;
    }
  }
  {
    const auto a = m.roughness.data(), b = target.roughness.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = a[i] - b[i];
      sum += std::abs(d);
      if (grad) grad->roughness.data()[i] += scale * sgn(d) / count;
    }
  }
  return sum / count;
}

// Mean over views of the mean absolute pixel difference between renderings.
// When `target_renders` is supplied it must hold render(target, cfgs[i]).
inline double loss_ren(const MaterialMaps& m, const MaterialMaps& target,
                       const std::vector<LightingConfig>& cfgs,
                       MaterialGradient* grad = nullptr, double scale = 1.0,
                       const std::vector<RenderedImage>* target_renders = nullptr) {
  require(!cfgs.empty(), ErrorCode::invalid_argument, "loss_ren needs at least one view");
  require_same_material_shape(m, target);
  const double per_view = static_cast<double>(m.albedo.pixel_count()) * 3.0;
  const double views = static_cast<double>(cfgs.size());
  double total = 0.0;
  Image upstream;
  if (grad) upstream = Image(m.width(), m.height(), 3);
  for (std::size_t k = 0; k < cfgs.size(); ++k) {
    const RenderedImage pm = render(m, cfgs[k]);
    const RenderedImage pt = target_renders ? (*target_renders)[k] : render(target, cfgs[k]);
    const auto a = pm.data(), b = pt.data();
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = a[i] - b[i];
      s += std::abs(d);
      if (grad) upstream.data()[i] = scale * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / (per_view * views);
    }
    total += s / per_view;
    if (grad) render_backward(m, cfgs[k], upstream, *grad);
  }
  return total / views;
}

inline double total_loss(const MaterialMaps& m, const MaterialMaps& target,
                         const std::vector<LightingConfig>& cfgs, const LossWeights& w,
                         MaterialGradient* grad = nullptr,
                         const std::vector<RenderedImage>* target_renders = nullptr) {
  w.validate();
  require(!cfgs.empty(), ErrorCode::invalid_argument, "total_loss needs at least one view");
  const double reg = w.lambda_reg > 0.0 || !grad ? loss_reg(m, target, grad, w.lambda_reg) : 0.0;
  const double ren = loss_ren(m, target, cfgs, grad, 1.0, target_renders);
  return w.lambda_reg * reg + ren;
}

}  // namespace matpal
