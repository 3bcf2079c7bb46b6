#pragma once

// Fixtures and brute-force oracles shared by unit and acceptance tests.

#include <Eigen/Dense>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "matpal.hpp"

namespace fixtures {

using namespace matpal;

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "matpal-test") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(rd()) + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline Image random_image(int w, int h, int c, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Image img(w, h, c);
  for (auto& v : img.data()) v = rng.uniform(lo, hi);
  return img;
}

struct MaterialRanges {
  double albedo_lo = 0.0, albedo_hi = 1.0;
  double rough_lo = 0.0, rough_hi = 1.0;
  double max_tilt = 0.6;
};

inline MaterialMaps random_material(int w, int h, Rng& rng, const MaterialRanges& r = {}) {
  MaterialMaps m{random_image(w, h, 3, rng, r.albedo_lo, r.albedo_hi), Image(w, h, 3),
                 random_image(w, h, 1, rng, r.rough_lo, r.rough_hi)};
  auto n = m.normals.data();
  for (std::size_t i = 0; i < n.size(); i += 3) {
    const Vec3 v = normalize({rng.uniform(-r.max_tilt, r.max_tilt), rng.uniform(-r.max_tilt, r.max_tilt), 1.0});
    n[i] = v.x, n[i + 1] = v.y, n[i + 2] = v.z;
  }
  return m;
}

// Textbook per-pixel Cook-Torrance GGX (Smith, Schlick), written
// independently of the library's vectorised renderer.
inline Image scalar_render_reference(const MaterialMaps& m, const LightingConfig& cfg) {
  const double pi = std::numbers::pi;
  Image out(m.width(), m.height(), 3);
  const Vec3 l = cfg.light_dir, v = cfg.view_dir;
  const Vec3 hv = normalize({l.x + v.x, l.y + v.y, l.z + v.z});
  const double vh = std::clamp(v.x * hv.x + v.y * hv.y + v.z * hv.z, 0.0, 1.0);
  const double fresnel = cfg.f0 + (1.0 - cfg.f0) * std::pow(1.0 - vh, 5);
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) {
      const double nx = m.normals.at(y, x, 0), ny = m.normals.at(y, x, 1), nz = m.normals.at(y, x, 2);
      const double nl = nx * l.x + ny * l.y + nz * l.z;
      const double nv = nx * v.x + ny * v.y + nz * v.z;
      const double nh = std::max(nx * hv.x + ny * hv.y + nz * hv.z, 0.0);
      const double r = m.roughness.at(y, x);
      const double alpha = std::max(r * r, 1e-3);
      const double a2 = alpha * alpha;
      const double dd = nh * nh * (a2 - 1.0) + 1.0;
      const double D = a2 / (pi * dd * dd);
      auto g1 = [&](double c) {
        c = std::max(c, 1e-4);
        return 2.0 * c / (c + std::sqrt(a2 + (1.0 - a2) * c * c));
      };
      const double spec = D * fresnel * g1(nl) * g1(nv) / (4.0 * std::max(nl, 1e-4) * std::max(nv, 1e-4));
      for (int c = 0; c < 3; ++c) {
        const double radiance = (m.albedo.at(y, x, c) / pi + spec) * cfg.intensity * std::max(nl, 0.0);
        out.at(y, x, c) = std::clamp(radiance, 0.0, 1.0);
      }
    }
  return out;
}

// Direct double loop over views and pixels.
inline double loss_ren_reference(const MaterialMaps& a, const MaterialMaps& b,
                                 const std::vector<LightingConfig>& cfgs) {
  double total = 0;
  for (const auto& cfg : cfgs) {
    const Image ra = scalar_render_reference(a, cfg), rb = scalar_render_reference(b, cfg);
    double s = 0;
    for (int y = 0; y < a.height(); ++y)
      for (int x = 0; x < a.width(); ++x)
        for (int c = 0; c < 3; ++c) s += std::abs(ra.at(y, x, c) - rb.at(y, x, c));
    total += s / (3.0 * a.width() * a.height());
  }
  return total / cfgs.size();
}

// A pair that agrees under one light/view and disagrees under the training
// set: the second material swaps diffuse energy for a sharper specular lobe
// that the single view cannot see.
struct AmbiguousPair {
  MaterialMaps a, b;
  LightingConfig view;
};

inline AmbiguousPair ambiguous_pair(int size = 16, std::uint64_t seed = 7) {
  Rng rng(seed);
  AmbiguousPair p;
  p.view.light_dir = {0.0, 0.0, 1.0};
  p.view.view_dir = direction_from_angles(0.0, 50.0);
  p.a = MaterialMaps::flat(size, size, {0.5, 0.5, 0.5}, 0.9);
  for (auto& v : p.a.albedo.data()) v = rng.uniform(0.3, 0.6);
  p.b = MaterialMaps::flat(size, size, {0.5, 0.5, 0.5}, 0.3);
  // Light along the normal: radiance = albedo * I/pi + I*spec, so the albedo
  // that reproduces a's pixel follows in closed form.
  const Image ra = render(p.a, p.view);
  const Image spec_b = render(MaterialMaps::flat(size, size, {0, 0, 0}, 0.3), p.view);
  const double k = p.view.intensity / std::numbers::pi;
  for (std::size_t i = 0; i < ra.size(); ++i)
    p.b.albedo.data()[i] = std::clamp((ra.data()[i] - spec_b.data()[i]) / k, 0.0, 1.0);
  return p;
}

// Images whose opposite edges differ: linear ramps plus non-periodic waves.
inline Image seamy_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  Image img(w, h, 3);
  for (int c = 0; c < 3; ++c) {
    const double base = rng.uniform(0.35, 0.65), gx = rng.uniform(-0.25, 0.25), gy = rng.uniform(-0.25, 0.25);
    const double fx = rng.uniform(0.6, 2.4), fy = rng.uniform(0.6, 2.4), ph = rng.uniform(0, 6.28);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double u = static_cast<double>(x) / w, v = static_cast<double>(y) / h;
        img.at(y, x, c) = base + gx * (u - 0.5) + gy * (v - 0.5) +
                          0.06 * std::sin(2 * std::numbers::pi * (fx * u + fy * v) + ph) + rng.uniform(-0.01, 0.01);
      }
  }
  return img;
}

// Smooth coordinates only: finite differences are meaningless across the
// kinks of |.|, max(.) and the render clamp.
struct GradientProbe {
  int map;  // 0 albedo, 1 normals, 2 roughness
  std::size_t index;
  double analytic, numeric;
};

inline double* coordinate(MaterialMaps& m, int map, std::size_t index) {
  Image* maps[3] = {&m.albedo, &m.normals, &m.roughness};
  return &maps[map]->data()[index];
}

inline std::vector<GradientProbe> gradient_check(const MaterialMaps& m, const MaterialMaps& target,
                                                 const std::vector<LightingConfig>& cfgs, const LossWeights& w,
                                                 int count, double h, std::uint64_t seed) {
  MaterialGradient grad = MaterialMaps::zeros(m.width(), m.height());
  total_loss(m, target, cfgs, w, &grad);
  Rng rng(seed);
  std::vector<GradientProbe> out;
  MaterialMaps probe = m;
  for (int attempt = 0; attempt < 100000 && static_cast<int>(out.size()) < count; ++attempt) {
    const int map = static_cast<int>(rng.below(3));
    const std::size_t n = map == 2 ? m.roughness.size() : m.albedo.size();
    const std::size_t idx = rng.below(n);
    double* p = coordinate(probe, map, idx);
    const double x0 = *p;
    auto loss_at = [&](double x) {
      *p = x;
      return total_loss(probe, target, cfgs, w);
    };
    const double lp = loss_at(x0 + h), lm = loss_at(x0 - h), l0 = loss_at(x0);
    const double lp2 = loss_at(x0 + h / 2), lm2 = loss_at(x0 - h / 2);
    *p = x0;
    // Curvature test: a kink inside [x0-h, x0+h] leaves an O(h) second
    // difference, smooth regions leave O(h^2).
    if (std::abs(lp + lm - 2 * l0) > 1e-9 || std::abs(lp2 + lm2 - 2 * l0) > 1e-9) continue;
    const double numeric = (lp - lm) / (2 * h);
    out.push_back({map, idx, *coordinate(grad, map, idx), numeric});
  }
  return out;
}

inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Two-region test image: left half red stripes, right half yellow bricks. Both
// hues lie inside the synthetic source domain.
struct TwoRegionScene {
  Image image;
  RegionMask left, right;
  MaterialMaps truth_left, truth_right;
  PatternParams params_left, params_right;
};

inline TwoRegionScene two_region_scene(int region = 256, int height = 256, std::uint64_t seed = 11) {
  Rng rng(seed);
  PatternParams s = synthetic_params(PatternFamily::stripes, DomainShift::none, rng);
  s.color_a = hsv_to_rgb(0, 0.7, 0.8);
  s.color_b = hsv_to_rgb(5, 0.7, 0.35);
  s.cycles_x = 6, s.cycles_y = 0;
  PatternParams b = synthetic_params(PatternFamily::bricks, DomainShift::none, rng);
  b.color_a = hsv_to_rgb(45, 0.45, 0.8);
  b.color_b = hsv_to_rgb(40, 0.3, 0.4);
  b.cycles_x = 4, b.cycles_y = 8;
  TwoRegionScene sc;
  sc.params_left = s, sc.params_right = b;
  sc.truth_left = rasterize_material(PatternField(s), region);
  sc.truth_right = rasterize_material(PatternField(b), region);
  const int w = 2 * region;
  MaterialMaps full = MaterialMaps::zeros(w, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < w; ++x) {
      const MaterialMaps& src = x < region ? sc.truth_left : sc.truth_right;
      const int sx = x % region, sy = y % region;
      for (int c = 0; c < 3; ++c) {
        full.albedo.at(y, x, c) = src.albedo.at(sy, sx, c);
        full.normals.at(y, x, c) = src.normals.at(sy, sx, c);
      }
      full.roughness.at(y, x) = src.roughness.at(sy, sx);
    }
  LightingConfig cfg;
  cfg.light_dir = direction_from_angles(30.0, 70.0);
  cfg.view_dir = {0.0, 0.0, 1.0};
  sc.image = render(full, cfg);
  sc.left = RegionMask(w, height);
  sc.right = RegionMask(w, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < w; ++x) (x < region ? sc.left : sc.right).set(x, y);
  return sc;
}

// Mean albedo distance to `draws` phase-randomised outputs of a pattern
// generator: the class, not one aligned instance.
inline double generator_distance(const Image& albedo, const PatternParams& params, int draws = 8,
                                 std::uint64_t seed = 99) {
  Rng rng(seed);
  double sum = 0;
  for (int k = 0; k < draws; ++k) {
    PatternParams p = params;
    p.phase = rng.uniform(0.0, 2 * std::numbers::pi);
    p.noise_seed = rng.bits();
    const Image ref = rasterize_material(PatternField(p), albedo.width()).albedo;
    sum += perceptual_distance(albedo, ref);
  }
  return sum / draws;
}

// Per-window SSIM with an explicit 2-D Gaussian, no separable filtering.
inline double ssim_reference(const Image& a, const Image& b) {
  const int n = 11;
  std::vector<double> g(n);
  double gs = 0;
  for (int i = 0; i < n; ++i) gs += g[i] = std::exp(-std::pow(i - 5.0, 2) / (2 * 1.5 * 1.5));
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  for (int c = 0; c < a.channels(); ++c) {
    double s = 0;
    int count = 0;
    for (int y0 = 0; y0 + n <= a.height(); ++y0)
      for (int x0 = 0; x0 + n <= a.width(); ++x0) {
        double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
        for (int j = 0; j < n; ++j)
          for (int i = 0; i < n; ++i) {
            const double w = g[i] * g[j] / (gs * gs);
            const double va = a.at(y0 + j, x0 + i, c), vb = b.at(y0 + j, x0 + i, c);
            ma += w * va, mb += w * vb, aa += w * va * va, bb += w * vb * vb, ab += w * va * vb;
          }
        const double sa = aa - ma * ma, sb = bb - mb * mb, sab = ab - ma * mb;
        s += (2 * ma * mb + c1) * (2 * sab + c2) / ((ma * ma + mb * mb + c1) * (sa + sb + c2));
        ++count;
      }
    total += s / count;
  }
  return total / a.channels();
}

// A loopback port that was bound and then closed, so nothing listens on it.
inline int closed_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  socklen_t len = sizeof addr;
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), len);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

// Small deterministic model for pipeline tests.
inline DecompositionModel quick_model(int steps = 30, std::uint64_t seed = 3) {
  const auto ds = gen_synthetic(16, default_synthetic_ontology(), DomainShift::none, seed);
  TrainingConfig cfg;
  cfg.steps = steps;
  cfg.batch_size = 2;
  return train_source(ds.samples, cfg, seed);
}

}  // namespace fixtures
