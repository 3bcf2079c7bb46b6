#pragma once

// Texture synthesis behind a pluggable backend: concept learning from region
// crops, tileable candidate generation and perceptual candidate selection.
// Two backends ship: a deterministic procedural one and an HTTP client for
// an external diffusion service.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>  // before httplib.h, which breaks Eigen when included first
#include <fftw3.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "matpal/error.hpp"
#include "matpal/hashing.hpp"
#include "matpal/image.hpp"
#include "matpal/metrics.hpp"
#include "matpal/patterns.hpp"
#include "matpal/png_io.hpp"
#include "matpal/rng.hpp"
#include "matpal/svbrdf.hpp"
#include "matpal/tiling.hpp"

namespace matpal {

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

inline constexpr std::string_view kPlaceholder = "{}";
inline constexpr std::string_view kConceptToken = "S*";

enum class PromptRole { train, generate };

struct PromptTemplate {
  std::string text;
  PromptRole role = PromptRole::generate;

  PromptTemplate(std::string t, PromptRole r) : text(std::move(t)), role(r) {
    std::size_t count = 0;
    for (auto p = text.find(kPlaceholder); p != std::string::npos; p = text.find(kPlaceholder, p + 1))
      ++count;
    require(count == 1, ErrorCode::invalid_argument,
            "prompt template needs exactly one '{}' placeholder: " + text);
  }

  std::string fill(const std::string& token) const {
    std::string out = text;
    out.replace(out.find(kPlaceholder), kPlaceholder.size(), token);
    return out;
  }
};

inline const PromptTemplate& train_template() {
  static const PromptTemplate t{"an object with {} texture", PromptRole::train};
  return t;
}

inline const std::vector<PromptTemplate>& generate_templates() {
  static const std::vector<PromptTemplate> t{
      {"a photo of a {}", PromptRole::generate},
      {"a {} material", PromptRole::generate},
      {"a {} texture", PromptRole::generate},
      {"realistic {} texture in top view", PromptRole::generate},
      {"high resolution realistic {} texture in top view", PromptRole::generate},
  };
  return t;
}

inline constexpr std::size_t kDefaultGenerateTemplate = 3;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct ConceptHandle {
  std::string concept_id;
  std::string backend_id;
  std::vector<std::string> created_from;  // crop digests
  std::string prompt_train;
};

inline nlohmann::json to_json(const ConceptHandle& h) {
  return {{"concept_id", h.concept_id},
          {"backend_id", h.backend_id},
          {"created_from", h.created_from},
          {"prompt_train", h.prompt_train}};
}

// What to generate: a learned concept or a bare class token.
struct TextureSubject {
  std::optional<ConceptHandle> concept_handle;
  std::string class_token;

  static TextureSubject of(ConceptHandle h) { return {std::move(h), {}}; }
  static TextureSubject of_class(std::string token) { return {std::nullopt, std::move(token)}; }
  bool is_concept() const { return concept_handle.has_value(); }
  std::string label() const { return is_concept() ? concept_handle->concept_id : class_token; }
  std::string prompt_token() const { return is_concept() ? std::string(kConceptToken) : class_token; }
};

inline constexpr double kTileableSeamThreshold = 0.02;

struct TextureCandidate {
  Image image;
  int resolution = 0;
  std::string concept_label;  // concept id or class token
  std::string prompt;
  std::uint64_t seed = 0;
  bool tileable = false;
  SeamReport seam;
};

struct GenerateRequest {
  TextureSubject subject;
  std::string prompt;
  int resolution = 512;
  int n = 1;
  bool tileable = true;
  std::uint64_t seed = 0;
};

class TextureBackend {
 public:
  virtual ~TextureBackend() = default;
  virtual std::string id() const = 0;
  virtual int native_max_resolution() const = 0;
  virtual ConceptHandle learn_concept(const std::vector<Image>& crops, const std::string& prompt_train,
                                      std::uint64_t seed) = 0;
  // n raw square images at the requested resolution; candidate i uses seed + i.
  virtual std::vector<Image> synthesize(const GenerateRequest& req) = 0;
};

inline std::string crop_digest(const Image& crop) { return image_digest(crop); }

// ---------------------------------------------------------------------------
// Spectral and orientation statistics
// ---------------------------------------------------------------------------

// Dominant gradient orientation (radians) and coherence in [0,1] from the
// averaged structure tensor.
struct Orientation {
  double angle = 0.0;
  double coherence = 0.0;
};

inline Orientation structure_orientation(const std::vector<Image>& lums) {
  double jxx = 0, jyy = 0, jxy = 0;
  for (const auto& l : lums)
    for (int y = 0; y + 1 < l.height(); ++y)
      for (int x = 0; x + 1 < l.width(); ++x) {
        const double gx = l.at(y, x + 1) - l.at(y, x), gy = l.at(y + 1, x) - l.at(y, x);
        jxx += gx * gx, jyy += gy * gy, jxy += gx * gy;
      }
  const double tr = jxx + jyy;
  const double diff = std::sqrt((jxx - jyy) * (jxx - jyy) + 4 * jxy * jxy);
  return {0.5 * std::atan2(2 * jxy, jxx - jyy), tr > 1e-12 ? diff / tr : 0.0};
}

inline constexpr int kSpectrumSize = 64;
inline constexpr int kSpectrumBand = 24;

// Hann-windowed amplitude spectrum of a kSpectrumSize square luminance
// image over the half plane kx in [0, band], ky in [-band, band], DC
// removed, normalised to unit sum. Translation-invariant up to windowing.
inline std::vector<double> amplitude_spectrum(const Image& lum) {
  const int n = kSpectrumSize;
  require(lum.width() == n && lum.height() == n, ErrorCode::shape_mismatch, "spectrum input size");
  std::vector<double> in(static_cast<std::size_t>(n) * n);
  std::vector<std::complex<double>> out(static_cast<std::size_t>(n) * (n / 2 + 1));
  double mean = 0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) mean += lum.at(y, x);
  mean /= n * n;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double wx = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * (x + 0.5) / n);
      const double wy = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * (y + 0.5) / n);
      in[static_cast<std::size_t>(y) * n + x] = (lum.at(y, x) - mean) * wx * wy;
    }
  fftw_plan plan;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_2d(n, n, in.data(), reinterpret_cast<fftw_complex*>(out.data()),
                                FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  const int b = kSpectrumBand;
  std::vector<double> spec;
  spec.reserve(static_cast<std::size_t>(b + 1) * (2 * b + 1));
  double sum = 0;
  for (int ky = -b; ky <= b; ++ky)
    for (int kx = 0; kx <= b; ++kx) {
      double a = std::abs(out[static_cast<std::size_t>((ky + n) % n) * (n / 2 + 1) + kx]);
      if (kx == 0 && ky <= 0) a = 0;  // DC and the mirrored half of the kx = 0 column
      spec.push_back(a);
      sum += a;
    }
  if (sum > 0)
    for (auto& v : spec) v /= sum;
  return spec;
}

// Frequency (cycles per image) of the strongest spectral component.
inline std::pair<int, int> spectral_peak(const std::vector<double>& spec) {
  const int b = kSpectrumBand;
  std::size_t best = 0;
  for (std::size_t i = 1; i < spec.size(); ++i)
    if (spec[i] > spec[best]) best = i;
  const int ky = static_cast<int>(best) / (b + 1) - b, kx = static_cast<int>(best) % (b + 1);
  return {kx, ky};
}

inline double spectrum_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

// L1 distance from `target` to the best mix of `model` with a flat spectrum;
// the flat part absorbs grain and shading noise the clean model lacks.
inline double spectrum_distance_with_floor(const std::vector<double>& target,
                                           const std::vector<double>& model) {
  std::vector<double> flat(model.size(), 0.0);
  const int b = kSpectrumBand;
  double live = 0;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const int ky = static_cast<int>(i) / (b + 1) - b, kx = static_cast<int>(i) % (b + 1);
    if (kx > 0 || ky > 0) flat[i] = 1.0, live += 1.0;
  }
  double best = 1e300;
  for (int step = 0; step <= 20; ++step) {
    const double a = step / 20.0;
    double s = 0;
    for (std::size_t i = 0; i < target.size(); ++i)
      s += std::abs(target[i] - (a * model[i] + (1.0 - a) * flat[i] / live));
    best = std::min(best, s);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Procedural backend
// ---------------------------------------------------------------------------

// A fitted concept. Pattern cycles are per crop of `crop_size` pixels, so
// textures keep the crop pixel scale at any resolution.
struct ConceptModel {
  PatternParams params;
  Rgb mean{0.5, 0.5, 0.5};
  Rgb std_dev{0.0, 0.0, 0.0};
  int crop_size = 256;
  double fit_distance = 0.0;
};

struct PromptStyle {
  double ramp = 0.0;  // multiplicative illumination gradient amplitude
  double blur = 0.0;  // Gaussian blur sigma in pixels at 256 px
};

// Wording effects of the procedural stand-in: prompts that do not ask for a
// "texture" look like photographs (uneven light, defocus); "top view" keeps
// the light flat.
inline PromptStyle prompt_style(const std::string& prompt) {
  std::string p = prompt;
  std::transform(p.begin(), p.end(), p.begin(), [](unsigned char c) { return std::tolower(c); });
  const bool texture = p.find("texture") != std::string::npos;
  const bool top_view = p.find("top view") != std::string::npos;
  if (!texture) return {0.45, 1.5};
  if (!top_view) return {0.15, 0.0};
  return {};
}

namespace detail {

inline Image mix_image(const PatternField& f, int size) {
  Image out(size, size, 1);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) out.at(y, x) = f.mix((x + 0.5) / size, (y + 0.5) / size);
  return out;
}

inline Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0) return img;
  const int r = static_cast<int>(std::ceil(3 * sigma));
  const auto k = gaussian_kernel(2 * r + 1, sigma);
  const int w = img.width(), h = img.height();
  Image tmp(w, h, img.channels()), out(w, h, img.channels());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < img.channels(); ++c) {
        double s = 0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * img.wrap(y, x + i, c);
        tmp.at(y, x, c) = s;
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < img.channels(); ++c) {
        double s = 0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * tmp.wrap(y + i, x, c);
        out.at(y, x, c) = s;
      }
  return out;
}

// Pattern parameter proposals for one family around the spectral peak.
inline std::vector<PatternParams> family_proposals(PatternFamily fam, int kx, int ky) {
  std::vector<PatternParams> out;
  auto base = [&] {
    PatternParams p;
    p.family = fam;
    p.sharpness = 0.5;
    return p;
  };
  const int f = std::clamp(static_cast<int>(std::lround(std::hypot(kx, ky))), 1, kSpectrumBand);
  switch (fam) {
    case PatternFamily::stripes:
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          PatternParams p = base();
          p.cycles_x = kx + dx;
          p.cycles_y = ky + dy;
          if (p.cycles_x == 0 && p.cycles_y == 0) continue;
          out.push_back(p);
        }
      break;
    case PatternFamily::bricks:
      for (int rows = 2; rows <= kSpectrumBand; ++rows)
        for (int div : {1, 2, 3}) {
          PatternParams p = base();
          p.cycles_y = rows;
          p.cycles_x = std::max(1, rows / div);
          p.feature = 0.22;
          out.push_back(p);
        }
      break;
    case PatternFamily::dots:
      for (int c = std::max(1, f - 2); c <= std::min(kSpectrumBand, f + 2); ++c) {
        PatternParams p = base();
        p.cycles_x = p.cycles_y = c;
        p.feature = 0.16;
        out.push_back(p);
      }
      break;
    case PatternFamily::noise:
      for (int c = 2; c <= kSpectrumBand; c += 2) {
        PatternParams p = base();
        p.cycles_x = p.cycles_y = c;
        out.push_back(p);
      }
      break;
  }
  return out;
}

// Means of the pixels above and below the median luminance.
inline std::pair<Rgb, Rgb> luminance_clusters(const std::vector<Image>& crops) {
  std::vector<double> lum;
  for (const auto& c : crops)
    for (int y = 0; y < c.height(); ++y)
      for (int x = 0; x < c.width(); ++x)
        lum.push_back(0.2126 * c.at(y, x, 0) + 0.7152 * c.at(y, x, 1) + 0.0722 * c.at(y, x, 2));
  std::vector<double> sorted = lum;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
  const double median = sorted[sorted.size() / 2];
  Rgb hi{}, lo{};
  double nh = 0, nl = 0;
  std::size_t i = 0;
  for (const auto& c : crops)
    for (int y = 0; y < c.height(); ++y)
      for (int x = 0; x < c.width(); ++x, ++i) {
        auto& dst = lum[i] > median ? hi : lo;
        (lum[i] > median ? nh : nl) += 1;
        for (int k = 0; k < 3; ++k) dst[k] += c.at(y, x, k);
      }
  for (int k = 0; k < 3; ++k) {
    hi[k] = nh > 0 ? hi[k] / nh : 0.5;
    lo[k] = nl > 0 ? lo[k] / nl : hi[k];
  }
  if (nh == 0) hi = lo;
  return {hi, lo};
}

}  // namespace detail

// Fits a pattern to crops: colour moments, structure-tensor orientation,
// spectral peak, then the family and cycle counts whose synthesised pattern
// spectrum is closest to the crops' mean spectrum.
inline ConceptModel fit_concept(const std::vector<Image>& crops) {
  require(!crops.empty(), ErrorCode::invalid_argument, "no crops to learn from");
  const int side = crops.front().width();
  ConceptModel m;
  m.crop_size = side;
  Rgb sum{}, sq{};
  double n = 0;
  std::vector<Image> lums, small;
  for (const auto& raw : crops) {
    require(raw.width() == side && raw.height() == side, ErrorCode::invalid_argument,
            "crops must share one square size");
    const Image c = to_rgb(raw);
    for (std::size_t i = 0; i < c.data().size(); ++i) {
      sum[i % 3] += c.data()[i];
      sq[i % 3] += c.data()[i] * c.data()[i];
    }
    n += static_cast<double>(c.pixel_count());
    lums.push_back(luminance(c));
    small.push_back(resize_bilinear(lums.back(), kSpectrumSize, kSpectrumSize));
  }
  for (int k = 0; k < 3; ++k) {
    m.mean[k] = sum[k] / n;
    m.std_dev[k] = std::sqrt(std::max(sq[k] / n - m.mean[k] * m.mean[k], 0.0));
  }
  std::vector<double> target(static_cast<std::size_t>(kSpectrumBand + 1) * (2 * kSpectrumBand + 1), 0.0);
  for (const auto& s : small) {
    const auto sp = amplitude_spectrum(s);
    for (std::size_t i = 0; i < sp.size(); ++i) target[i] += sp[i] / static_cast<double>(small.size());
  }
  auto [kx, ky] = spectral_peak(target);
  // Orientation disambiguates the sign lost by the half-plane peak search.
  const Orientation o = structure_orientation(lums);
  if (kx == 0 && ky < 0) ky = -ky;
  if (o.coherence > 0.3 && kx != 0 && ky != 0 && (std::sin(2 * o.angle) > 0) != (ky > 0)) ky = -ky;

  double best = 1e300;
  PatternParams chosen;
  for (PatternFamily fam : kAllFamilies)
    for (const auto& p : detail::family_proposals(fam, kx, ky)) {
      const double d = spectrum_distance_with_floor(
          target, amplitude_spectrum(detail::mix_image(PatternField(p), kSpectrumSize)));
      if (d < best) best = d, chosen = p;
    }
  const auto [light, dark] = detail::luminance_clusters(crops);
  chosen.color_a = chosen.family == PatternFamily::bricks ? light : dark;
  chosen.color_b = chosen.family == PatternFamily::bricks ? dark : light;
  chosen.grain = 0.05;
  m.params = chosen;
  m.fit_distance = best;
  return m;
}

// Parameters for a bare class token: family from the token, hue from a hash
// of the token.
inline ConceptModel class_model(const std::string& token, int crop_size = 256) {
  ConceptModel m;
  m.crop_size = crop_size;
  const double hue = static_cast<double>(splitmix64(std::hash<std::string>{}(token)) % 360);
  PatternParams& p = m.params;
  p.family = family_from_token(token);
  p.color_a = hsv_to_rgb(hue, 0.5, 0.75);
  p.color_b = hsv_to_rgb(hue + 10, 0.55, 0.4);
  switch (p.family) {
    case PatternFamily::stripes: p.cycles_x = 6; p.cycles_y = 0; break;
    case PatternFamily::bricks: p.cycles_x = 4; p.cycles_y = 8; p.feature = 0.22; break;
    case PatternFamily::dots: p.cycles_x = p.cycles_y = 6; p.feature = 0.16; break;
    case PatternFamily::noise: p.cycles_x = p.cycles_y = 8; break;
  }
  for (int k = 0; k < 3; ++k) {
    m.mean[k] = 0.5 * (p.color_a[k] + p.color_b[k]);
    m.std_dev[k] = 0.5 * std::abs(p.color_a[k] - p.color_b[k]);
  }
  return m;
}

struct ProceduralOptions {
  int native_max_resolution = 1024;
  int patch_overlap = 128;
};

class ProceduralBackend final : public TextureBackend {
 public:
  explicit ProceduralBackend(ProceduralOptions opt = {}) : opt_(opt) {}

  std::string id() const override { return "procedural"; }
  int native_max_resolution() const override { return opt_.native_max_resolution; }

  ConceptHandle learn_concept(const std::vector<Image>& crops, const std::string& prompt_train,
                              std::uint64_t seed) override {
    require(!crops.empty(), ErrorCode::invalid_argument, "learn_concept needs at least one crop");
    ConceptHandle h;
    h.backend_id = id();
    h.prompt_train = prompt_train;
    Sha256 d;
    d.update(id()).update(prompt_train).update_u64(seed);
    for (const auto& c : crops) {
      h.created_from.push_back(crop_digest(c));
      d.update(h.created_from.back());
    }
    h.concept_id = "proc-" + d.hex().substr(0, 16);
    ConceptModel model = fit_concept(crops);
    std::lock_guard lock(mu_);
    concepts_.emplace(h.concept_id, std::move(model));
    return h;
  }

  const ConceptModel& concept_model(const std::string& concept_id) const {
    std::lock_guard lock(mu_);
    const auto it = concepts_.find(concept_id);
    if (it == concepts_.end()) fail(ErrorCode::not_found, "unknown concept " + concept_id);
    return it->second;
  }

  std::vector<Image> synthesize(const GenerateRequest& req) override {
    const ConceptModel model = req.subject.is_concept()
                                   ? concept_model(req.subject.concept_handle->concept_id)
                                   : class_model(req.subject.class_token);
    std::vector<Image> out;
    for (int i = 0; i < req.n; ++i)
      out.push_back(texture(model, req.prompt, req.resolution, req.seed + static_cast<std::uint64_t>(i)));
    return out;
  }

  // Pattern material for one seed at `resolution`, keeping the crop scale.
  PatternParams seeded_params(const ConceptModel& model, int resolution, std::uint64_t seed) const {
    PatternParams p = model.params;
    Rng rng(derive_seed(seed, "procedural"));
    const double scale = static_cast<double>(resolution) / model.crop_size;
    p.cycles_x = static_cast<int>(std::lround(p.cycles_x * scale));
    p.cycles_y = static_cast<int>(std::lround(p.cycles_y * scale));
    if (p.cycles_x == 0 && p.cycles_y == 0) p.cycles_x = 1;
    p.phase = rng.uniform(0.0, 2 * std::numbers::pi);
    p.noise_seed = rng.bits();
    p.height_scale = rng.uniform(0.4, 0.8);
    p.rough_base = rng.uniform(0.35, 0.65);
    p.rough_range = 0.3;
    return p;
  }

  Image texture(const ConceptModel& model, const std::string& prompt, int resolution,
                std::uint64_t seed) const {
    const PatternField field(seeded_params(model, resolution, seed));
    Rng rng(derive_seed(seed, "lighting"));
    LightingConfig light;
    light.light_dir = direction_from_angles(rng.uniform(0.0, 360.0), rng.uniform(75.0, 85.0));
    light.view_dir = {0, 0, 1};

    Image img;
    const int native = opt_.native_max_resolution;
    if (resolution <= native) {
      img = render(rasterize_material(field, resolution), light);
    } else {
      std::vector<Patch> patches;
      for (const auto& pl : patch_layout(resolution, native, opt_.patch_overlap))
        patches.push_back({render(rasterize_material(field, resolution, pl.x, pl.y, native, native), light),
                           pl.x, pl.y});
      img = blend_patches(patches, resolution);
    }
    img = match_moments(img, model);

    const PromptStyle style = prompt_style(prompt);
    if (style.ramp > 0) {
      const double a = rng.uniform(0.0, 2 * std::numbers::pi);
      const double cx = std::cos(a), cy = std::sin(a);
      for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
          const double t = (cx * (x + 0.5) + cy * (y + 0.5)) / resolution - 0.5 * (cx + cy);
          for (int c = 0; c < 3; ++c) img.at(y, x, c) *= 1.0 + style.ramp * 2.0 * t;
        }
    }
    if (style.blur > 0) img = detail::gaussian_blur(img, style.blur * resolution / 256.0);
    return clamp01(img);
  }

  // Per-channel affine map onto the concept's colour mean and spread.
  static Image match_moments(Image img, const ConceptModel& model) {
    const auto mean = channel_means(img);
    std::array<double, 3> sd{};
    const auto d = img.data();
    for (std::size_t i = 0; i < d.size(); ++i) sd[i % 3] += (d[i] - mean[i % 3]) * (d[i] - mean[i % 3]);
    for (int c = 0; c < 3; ++c) sd[c] = std::sqrt(sd[c] / static_cast<double>(img.pixel_count()));
    for (std::size_t i = 0; i < d.size(); ++i) {
      const int c = static_cast<int>(i % 3);
      const double gain = sd[c] > 1e-9 ? model.std_dev[c] / sd[c] : 0.0;
      d[i] = model.mean[c] + (d[i] - mean[c]) * gain;
    }
    return img;
  }

 private:
  ProceduralOptions opt_;
  mutable std::mutex mu_;
  std::map<std::string, ConceptModel> concepts_;
};

// ---------------------------------------------------------------------------
// Remote backend
// ---------------------------------------------------------------------------

struct RemoteOptions {
  std::string base_url;
  int max_attempts = 3;
  int max_in_flight = 2;
  int concept_steps = 400;
  std::chrono::seconds finetune_timeout{600};
  std::chrono::seconds generate_timeout{120};
  std::chrono::milliseconds backoff{50};
  int native_max_resolution = 1024;
};

class RemoteBackend final : public TextureBackend {
 public:
  explicit RemoteBackend(RemoteOptions opt) : opt_(std::move(opt)) {
    require(!opt_.base_url.empty(), ErrorCode::invalid_argument, "remote backend needs a URL");
    require(opt_.max_attempts >= 1 && opt_.max_in_flight >= 1, ErrorCode::invalid_argument,
            "remote backend limits must be positive");
  }

  std::string id() const override { return "remote:" + opt_.base_url; }
  int native_max_resolution() const override { return opt_.native_max_resolution; }

  bool healthy() {
    try {
      const auto j = call("GET", "/v1/health", {}, std::chrono::seconds(10));
      return j.value("status", std::string()) == "ok";
    } catch (const BackendError&) {
      return false;
    }
  }

  ConceptHandle learn_concept(const std::vector<Image>& crops, const std::string& prompt_train,
                              std::uint64_t seed) override {
    require(!crops.empty(), ErrorCode::invalid_argument, "learn_concept needs at least one crop");
    nlohmann::json body{{"prompt_train", prompt_train}, {"steps", opt_.concept_steps}, {"seed", seed}};
    ConceptHandle h;
    h.backend_id = id();
    h.prompt_train = prompt_train;
    body["images"] = nlohmann::json::array();
    for (const auto& c : crops) {
      const auto png = encode_png(c, 8);
      body["images"].push_back(base64_encode(png));
      h.created_from.push_back(crop_digest(c));
    }
    const auto reply = call("POST", "/v1/concepts", body, opt_.finetune_timeout);
    require(reply.contains("concept_id"), ErrorCode::backend, "concept reply lacks concept_id");
    h.concept_id = reply.at("concept_id").get<std::string>();
    return h;
  }

  std::vector<Image> synthesize(const GenerateRequest& req) override {
    nlohmann::json body{{"prompt", req.prompt}, {"width", req.resolution}, {"height", req.resolution},
                        {"n", req.n},           {"tileable", req.tileable}, {"seed", req.seed}};
    if (req.subject.is_concept()) body["concept_id"] = req.subject.concept_handle->concept_id;
    else body["class_token"] = req.subject.class_token;
    const auto reply = call("POST", "/v1/generate", body, opt_.generate_timeout);
    std::vector<Image> out;
    for (const auto& s : reply.at("images")) {
      const auto bytes = base64_decode(s.get<std::string>());
      out.push_back(to_rgb(decode_png(bytes).image));
    }
    if (static_cast<int>(out.size()) != req.n)
      throw BackendError("backend returned " + std::to_string(out.size()) + " images, expected " +
                             std::to_string(req.n),
                         false);
    return out;
  }

 private:
  // Bounded in-flight requests.
  class Slot {
   public:
    explicit Slot(RemoteBackend& b) : b_(b) {
      std::unique_lock lock(b_.slot_mu_);
      b_.slot_cv_.wait(lock, [&] { return b_.in_flight_ < b_.opt_.max_in_flight; });
      ++b_.in_flight_;
    }
    ~Slot() {
      {
        std::lock_guard lock(b_.slot_mu_);
        --b_.in_flight_;
      }
      b_.slot_cv_.notify_one();
    }

   private:
    RemoteBackend& b_;
  };

  nlohmann::json call(const std::string& method, const std::string& path, const nlohmann::json& body,
                      std::chrono::seconds timeout) {
    Slot slot(*this);
    const std::string payload = body.is_null() ? std::string() : body.dump();
    const std::string key = sha256_hex(method + path + payload);
    std::string last_error = "no attempt made";
    int last_status = 0;
    for (int attempt = 1; attempt <= opt_.max_attempts; ++attempt) {
      httplib::Client client(opt_.base_url);
      client.set_connection_timeout(std::chrono::seconds(5));
      client.set_read_timeout(timeout);
      client.set_write_timeout(timeout);
      httplib::Headers headers{{"Idempotency-Key", key}};
      auto res = method == "GET" ? client.Get(path, headers)
                                 : client.Post(path, headers, payload, "application/json");
      bool retryable = true;
      if (!res) {
        last_error = "request to " + opt_.base_url + path + " failed: " + httplib::to_string(res.error());
        last_status = 0;
      } else if (res->status >= 200 && res->status < 300) {
        try {
          return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
          throw BackendError(std::string("malformed backend reply: ") + e.what(), false, attempt,
                             res->status);
        }
      } else {
        last_status = res->status;
        retryable = res->status >= 500 || res->status == 429;
        last_error = "backend answered HTTP " + std::to_string(res->status);
        try {
          const auto j = nlohmann::json::parse(res->body);
          if (j.contains("message"))
            last_error += ": " + j.value("code", std::string()) + " " + j.at("message").get<std::string>();
        } catch (const nlohmann::json::exception&) {
        }
      }
      if (!retryable) throw BackendError(last_error, false, attempt, last_status);
      if (attempt < opt_.max_attempts) std::this_thread::sleep_for(opt_.backoff * (1 << (attempt - 1)));
    }
    throw BackendError(last_error, true, opt_.max_attempts, last_status);
  }

  RemoteOptions opt_;
  std::mutex slot_mu_;
  std::condition_variable slot_cv_;
  int in_flight_ = 0;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

inline ConceptHandle learn_concept(TextureBackend& backend, const std::vector<Image>& crops,
                                   const std::string& prompt_train, std::uint64_t seed) {
  require(!crops.empty(), ErrorCode::invalid_argument, "learn_concept needs at least one crop");
  const int side = crops.front().width();
  for (const auto& c : crops)
    require(c.width() == side && c.height() == side, ErrorCode::invalid_argument,
            "crops must all be c_in x c_in");
  return backend.learn_concept(crops, prompt_train, seed);
}

// Random roll, periodic Poisson solve, then a roll that puts the wrap
// boundary where neighbouring pixels agree most.
inline Image make_tileable(const Image& img, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "roll"));
  const int dx = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.width())));
  const int dy = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.height())));
  const Image blended = poisson_blend(roll(img, dx, dy));
  const auto [bx, by] = best_seam_offset(blended);
  return roll(blended, bx, by);
}

inline void validate_resolution(int resolution) {
  require(resolution >= 256 && resolution <= 4096 && resolution % 64 == 0, ErrorCode::invalid_argument,
          "resolution must be a multiple of 64 in [256, 4096], got " + std::to_string(resolution));
}

inline std::vector<TextureCandidate> generate(TextureBackend& backend, const TextureSubject& subject,
                                              const std::string& prompt, int resolution, int n,
                                              bool tileable, std::uint64_t seed) {
  validate_resolution(resolution);
  require(n >= 1, ErrorCode::invalid_argument, "n must be >= 1");
  require(subject.is_concept() || !subject.class_token.empty(), ErrorCode::invalid_argument,
          "generation needs a concept or a class token");
  const auto images = backend.synthesize({subject, prompt, resolution, n, tileable, seed});
  std::vector<TextureCandidate> out;
  for (int i = 0; i < n; ++i) {
    TextureCandidate c;
    c.image = images[static_cast<std::size_t>(i)];
    require(c.image.width() == resolution && c.image.height() == resolution, ErrorCode::backend,
            "backend returned a " + c.image.shape_string() + " image");
    c.seed = seed + static_cast<std::uint64_t>(i);
    if (tileable && seam_score(c.image).combined > kTileableSeamThreshold)
      c.image = make_tileable(c.image, c.seed);
    c.resolution = resolution;
    c.concept_label = subject.label();
    c.prompt = prompt;
    c.seam = seam_score(c.image);
    c.tileable = tileable && c.seam.combined <= kTileableSeamThreshold;
    out.push_back(std::move(c));
  }
  return out;
}

// Candidate brought to the crop size: centre crop when larger, resize
// otherwise.
inline Image candidate_view(const Image& candidate, int side) {
  if (candidate.width() >= side && candidate.height() >= side) return center_crop(candidate, side, side);
  return resize_bilinear(candidate, side, side);
}

struct Selection {
  std::size_t index = 0;
  double score = 0.0;
};

inline Selection select_best(const std::vector<Image>& candidates, const std::vector<Image>& crops,
                             const PerceptualMetric& metric = perceptual_distance) {
  require(!candidates.empty() && !crops.empty(), ErrorCode::invalid_argument,
          "select_best needs candidates and crops");
  Selection best{0, 1e300};
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double s = 0;
    for (const auto& c : crops) s += metric(to_rgb(candidate_view(candidates[i], c.width())), to_rgb(c));
    s /= static_cast<double>(crops.size());
    if (s < best.score) best = {i, s};
  }
  return best;
}

inline Selection select_best(const std::vector<TextureCandidate>& candidates,
                             const std::vector<Image>& crops,
                             const PerceptualMetric& metric = perceptual_distance) {
  std::vector<Image> images;
  for (const auto& c : candidates) images.push_back(c.image);
  return select_best(images, crops, metric);
}

}  // namespace matpal
