#pragma once

// Evaluation: per-map MSE/SSIM, relative improvement, a reference perceptual
// distance, FID/KID over pluggable embeddings, and the resemblance and
// re-rendering comparisons.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "matpal/decomposition.hpp"
#include "matpal/error.hpp"
#include "matpal/hashing.hpp"
#include "matpal/image.hpp"
#include "matpal/rng.hpp"
#include "matpal/svbrdf.hpp"

namespace matpal {

// ---------------------------------------------------------------------------
// Pixel metrics
// ---------------------------------------------------------------------------

inline double mse(const Image& a, const Image& b) {
  require_same_shape(a, b, "mse");
  const auto x = a.data(), y = b.data();
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

inline std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(size);
  double sum = 0;
  for (int i = 0; i < size; ++i) {
    const double d = i - (size - 1) / 2.0;
    k[i] = std::exp(-d * d / (2 * sigma * sigma));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01, k2 = 0.03, data_range = 1.0;
};

namespace detail {
// Separable "valid" filtering of one channel.
inline std::vector<double> filter_valid(const Image& img, int c, const std::vector<double>& k,
                                        std::function<double(double)> f = {}) {
  const int w = img.width(), h = img.height(), n = static_cast<int>(k.size());
  const int ow = w - n + 1, oh = h - n + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow, 0.0), out(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < n; ++i) {
        const double v = img.at(y, x + i, c);
        s += k[i] * (f ? f(v) : v);
      }
      rows[static_cast<std::size_t>(y) * ow + x] = s;
    }
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += k[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}
}  // namespace detail

// Mean SSIM over valid window positions, averaged over channels. Images
// smaller than the window shrink it to the largest odd size that fits.
inline double ssim(const Image& a, const Image& b, const SsimParams& p = {}) {
  require_same_shape(a, b, "ssim");
  int win = std::min({p.window, a.width(), a.height()});
  if (win % 2 == 0) --win;
  require(win >= 1, ErrorCode::invalid_input, "ssim needs a non-empty image");
  const auto k = gaussian_kernel(win, p.sigma);
  const double c1 = std::pow(p.k1 * p.data_range, 2), c2 = std::pow(p.k2 * p.data_range, 2);
  // Joint image holding a*b so the cross moment uses the same filter.
  Image ab(a.width(), a.height(), a.channels());
  for (std::size_t i = 0; i < ab.data().size(); ++i) ab.data()[i] = a.data()[i] * b.data()[i];
  double total = 0;
  for (int c = 0; c < a.channels(); ++c) {
    const auto sq = [](double v) { return v * v; };
    const auto mu_a = detail::filter_valid(a, c, k), mu_b = detail::filter_valid(b, c, k);
    const auto aa = detail::filter_valid(a, c, k, sq), bb = detail::filter_valid(b, c, k, sq);
    const auto xy = detail::filter_valid(ab, c, k);
    double s = 0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double va = aa[i] - mu_a[i] * mu_a[i], vb = bb[i] - mu_b[i] * mu_b[i];
      const double cov = xy[i] - mu_a[i] * mu_b[i];
      s += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
           ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    total += s / static_cast<double>(mu_a.size());
  }
  return total / a.channels();
}

// ---------------------------------------------------------------------------
// Reports and relative improvement
// ---------------------------------------------------------------------------

struct MapScores {
  double mse = 0.0;
  double ssim = 1.0;
};

struct EvalReport {
  MapScores albedo, normals, roughness;
  std::optional<MapScores> rendered;
  std::optional<double> delta_percent;
  std::string baseline;
  std::size_t sample_count = 0;
  std::vector<std::uint64_t> seeds;

  double mean_mse() const { return (albedo.mse + normals.mse + roughness.mse) / 3.0; }
};

inline double delta_percent(const EvalReport& ours, const EvalReport& base) {
  double sum = 0;
  const MapScores* o[3] = {&ours.albedo, &ours.normals, &ours.roughness};
  const MapScores* b[3] = {&base.albedo, &base.normals, &base.roughness};
  // Equal values contribute 0 even on a zero baseline.
  auto rel = [](double gain, double base) {
    if (gain == 0.0) return 0.0;
    require(base != 0.0, ErrorCode::undefined_ratio,
            "baseline metric is zero; relative improvement is undefined");
    return gain / base;
  };
  for (int i = 0; i < 3; ++i) {
    sum += rel(b[i]->mse - o[i]->mse, b[i]->mse);
    sum += rel(o[i]->ssim - b[i]->ssim, b[i]->ssim);
  }
  return 100.0 * sum / 6.0;
}

// Normals are compared in their [0,1] encoding so all maps share one range.
inline void accumulate_scores(const MaterialMaps& pred, const MaterialMaps& truth, EvalReport& r) {
  r.albedo.mse += mse(pred.albedo, truth.albedo);
  r.albedo.ssim += ssim(pred.albedo, truth.albedo);
  const Image pn = encode_normals(pred.normals), tn = encode_normals(truth.normals);
  r.normals.mse += mse(pn, tn);
  r.normals.ssim += ssim(pn, tn);
  r.roughness.mse += mse(pred.roughness, truth.roughness);
  r.roughness.ssim += ssim(pred.roughness, truth.roughness);
}

// Decomposes one render per sample (fixed lighting seeds) and scores the maps
// against ground truth.
inline EvalReport evaluate(const DecompositionModel& model, const std::vector<SourceSample>& samples,
                           std::uint64_t seed, int views_per_sample = 1) {
  require(!samples.empty(), ErrorCode::invalid_argument, "nothing to evaluate");
  require(views_per_sample >= 1, ErrorCode::invalid_argument, "views_per_sample must be >= 1");
  EvalReport r;
  r.albedo.ssim = r.normals.ssim = r.roughness.ssim = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (int v = 0; v < views_per_sample; ++v) {
      const auto cfg = sample_random_lighting(derive_seed(seed, {i, static_cast<std::uint64_t>(v)}));
      accumulate_scores(decompose(model, render(samples[i].maps, cfg)), samples[i].maps, r);
    }
  const double n = static_cast<double>(samples.size()) * views_per_sample;
  for (auto* m : {&r.albedo, &r.normals, &r.roughness}) m->mse /= n, m->ssim /= n;
  r.sample_count = samples.size();
  r.seeds = {seed};
  return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
  auto scores = [](const MapScores& s) { return nlohmann::json{{"mse", s.mse}, {"ssim", s.ssim}}; };
  nlohmann::json j{{"albedo", scores(r.albedo)},
                   {"normals", scores(r.normals)},
                   {"roughness", scores(r.roughness)},
                   {"sample_count", r.sample_count},
                   {"seeds", r.seeds}};
  if (r.rendered) j["rendered"] = scores(*r.rendered);
  if (r.delta_percent) {
    j["delta_percent"] = *r.delta_percent;
    j["baseline"] = r.baseline;
  }
  return j;
}

inline std::string format_fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// Aligned text table with one row per named report.
inline std::string eval_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(18) << "model" << std::right;
  for (const char* h : {"A mse", "A ssim", "N mse", "N ssim", "R mse", "R ssim", "delta%"})
    os << std::setw(10) << h;
  os << "\n";
  for (const auto& [name, r] : rows) {
    os << std::left << std::setw(18) << name << std::right;
    for (const auto* m : {&r.albedo, &r.normals, &r.roughness})
      os << std::setw(10) << format_fixed(m->mse) << std::setw(10) << format_fixed(m->ssim);
    os << std::setw(10) << (r.delta_percent ? format_fixed(*r.delta_percent, 2) : std::string("-"))
       << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Reference perceptual distance
// ---------------------------------------------------------------------------

namespace detail {
// 5-tap binomial blur with mirrored borders.
inline Image binomial_blur(const Image& img) {
  static constexpr double k[5] = {1 / 16.0, 4 / 16.0, 6 / 16.0, 4 / 16.0, 1 / 16.0};
  const int w = img.width(), h = img.height(), ch = img.channels();
  auto mirror = [](int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
    return i;
  };
  Image tmp(w, h, ch), out(w, h, ch);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) {
        double s = 0;
        for (int i = -2; i <= 2; ++i) s += k[i + 2] * img.at(y, mirror(x + i, w), c);
        tmp.at(y, x, c) = s;
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) {
        double s = 0;
        for (int i = -2; i <= 2; ++i) s += k[i + 2] * tmp.at(mirror(y + i, h), x, c);
        out.at(y, x, c) = s;
      }
  return out;
}

inline Image downsample2(const Image& img) {
  const Image b = binomial_blur(img);
  Image out((img.width() + 1) / 2, (img.height() + 1) / 2, img.channels());
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = b.at(2 * y, 2 * x, c);
  return out;
}

inline constexpr double kContrastFloor = 0.05;

// Locally contrast-normalised image and its local mean.
inline std::pair<Image, Image> local_contrast(const Image& img) {
  const Image mu = binomial_blur(img);
  Image sq = img;
  for (auto& v : sq.data()) v *= v;
  const Image mu2 = binomial_blur(sq);
  Image out = img;
  for (std::size_t i = 0; i < out.data().size(); ++i) {
    const double var = std::max(mu2.data()[i] - mu.data()[i] * mu.data()[i], 0.0);
    out.data()[i] = (img.data()[i] - mu.data()[i]) / (std::sqrt(var) + kContrastFloor);
  }
  return {out, mu};
}

inline double mean_abs_diff(const Image& a, const Image& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
  return s / static_cast<double>(std::max<std::size_t>(a.data().size(), 1));
}
}  // namespace detail

inline constexpr int kPyramidLevels = 4;

// Mean over pyramid levels of L1 between locally contrast-normalised images
// plus L1 between their local means. Levels stop early below 4 px.
inline double perceptual_distance(const Image& a, const Image& b) {
  require_same_shape(a, b, "perceptual_distance");
  Image x = a, y = b;
  double total = 0;
  int levels = 0;
  for (int l = 0; l < kPyramidLevels; ++l) {
    const auto [lx, mx] = detail::local_contrast(x);
    const auto [ly, my] = detail::local_contrast(y);
    total += detail::mean_abs_diff(lx, ly) + detail::mean_abs_diff(mx, my);
    ++levels;
    if (x.width() < 8 || x.height() < 8) break;
    x = detail::downsample2(x);
    y = detail::downsample2(y);
  }
  return total / levels;
}

using PerceptualMetric = std::function<double(const Image&, const Image&)>;

struct MaterialDistance {
  double albedo = 0, normals = 0, roughness = 0;
  double mean() const { return (albedo + normals + roughness) / 3.0; }
};

inline MaterialDistance material_distance(const MaterialMaps& a, const MaterialMaps& b,
                                          const PerceptualMetric& metric = perceptual_distance) {
  return {metric(a.albedo, b.albedo), metric(encode_normals(a.normals), encode_normals(b.normals)),
          metric(a.roughness, b.roughness)};
}

// ---------------------------------------------------------------------------
// Embeddings, FID and KID
// ---------------------------------------------------------------------------

class EmbeddingExtractor {
 public:
  virtual ~EmbeddingExtractor() = default;
  virtual std::string name() const = 0;
  virtual int dimension() const = 0;
  virtual std::vector<double> embed(const Image& img) const = 0;
};

// Per-cell mean, standard deviation and gradient energy of each channel over
// an 8x8 grid, randomly projected (fixed seed) to `dim` values.
class PatchStatsEmbedding final : public EmbeddingExtractor {
 public:
  static constexpr int kGrid = 8;
  static constexpr int kStats = kGrid * kGrid * 3 * 3;

  explicit PatchStatsEmbedding(int dim = 64, std::uint64_t seed = 0x5eed) : dim_(dim) {
    Rng rng(derive_seed(seed, "projection"));
    proj_.resize(static_cast<std::size_t>(dim) * kStats);
    const double scale = 1.0 / std::sqrt(static_cast<double>(kStats));
    for (auto& v : proj_) v = rng.normal() * scale;
  }

  std::string name() const override { return "patch-stats-" + std::to_string(dim_); }
  int dimension() const override { return dim_; }

  std::vector<double> stats(const Image& src) const {
    require(src.width() >= kGrid && src.height() >= kGrid, ErrorCode::invalid_input,
            "embedding needs at least 8x8 pixels");
    const Image img = to_rgb(src);
    std::vector<double> s;
    s.reserve(kStats);
    for (int gy = 0; gy < kGrid; ++gy)
      for (int gx = 0; gx < kGrid; ++gx) {
        const int x0 = gx * img.width() / kGrid, x1 = (gx + 1) * img.width() / kGrid;
        const int y0 = gy * img.height() / kGrid, y1 = (gy + 1) * img.height() / kGrid;
        for (int c = 0; c < 3; ++c) {
          double sum = 0, sq = 0, grad = 0;
          const double n = static_cast<double>(x1 - x0) * (y1 - y0);
          for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
              const double v = img.at(y, x, c);
              sum += v;
              sq += v * v;
              const double dx = img.clamped(y, x + 1, c) - v, dy = img.clamped(y + 1, x, c) - v;
              grad += dx * dx + dy * dy;
            }
          const double mean = sum / n;
          s.push_back(mean);
          s.push_back(std::sqrt(std::max(sq / n - mean * mean, 0.0)));
          s.push_back(grad / n);
        }
      }
    return s;
  }

  std::vector<double> embed(const Image& img) const override {
    const auto s = stats(img);
    std::vector<double> out(dim_, 0.0);
    for (int d = 0; d < dim_; ++d)
      for (int i = 0; i < kStats; ++i) out[d] += proj_[static_cast<std::size_t>(d) * kStats + i] * s[i];
    return out;
  }

 private:
  int dim_;
  std::vector<double> proj_;
};

inline Eigen::MatrixXd embed_all(const std::vector<Image>& set, const EmbeddingExtractor& e) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(set.size()), e.dimension());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto v = e.embed(set[i]);
    for (int d = 0; d < e.dimension(); ++d) m(static_cast<Eigen::Index>(i), d) = v[d];
  }
  return m;
}

inline constexpr double kFidJitter = 1e-6;

namespace detail {
inline Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}
}  // namespace detail

// Fréchet distance between Gaussian fits of two embedding matrices (rows are
// samples). Both covariances receive the same diagonal jitter.
inline double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::VectorXd mu_a = a.colwise().mean(), mu_b = b.colwise().mean();
  const Eigen::MatrixXd ca = a.rowwise() - mu_a.transpose(), cb = b.rowwise() - mu_b.transpose();
  const auto dim = a.cols();
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(dim, dim);
  const Eigen::MatrixXd sa = ca.transpose() * ca / static_cast<double>(a.rows() - 1) + kFidJitter * id;
  const Eigen::MatrixXd sb = cb.transpose() * cb / static_cast<double>(b.rows() - 1) + kFidJitter * id;
  const Eigen::MatrixXd ra = detail::sqrt_psd(sa);
  const Eigen::MatrixXd cross = detail::sqrt_psd(ra * sb * ra);
  return (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * cross.trace();
}

inline double fid(const std::vector<Image>& a, const std::vector<Image>& b,
                  const EmbeddingExtractor& e) {
  const auto need = static_cast<std::size_t>(e.dimension()) + 1;
  require(a.size() >= need && b.size() >= need, ErrorCode::insufficient_samples,
          "FID needs at least " + std::to_string(need) + " images per set");
  return frechet_distance(embed_all(a, e), embed_all(b, e));
}

// Unbiased MMD^2 with the kernel (x.y / d + 1)^3.
inline double kernel_mmd(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double d = static_cast<double>(a.cols());
  auto k = [d](const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    Eigen::MatrixXd g = (x * y.transpose()).array() / d + 1.0;
    return Eigen::MatrixXd(g.array().cube());
  };
  const double m = static_cast<double>(a.rows()), n = static_cast<double>(b.rows());
  const Eigen::MatrixXd kaa = k(a, a), kbb = k(b, b), kab = k(a, b);
  const double saa = (kaa.sum() - kaa.trace()) / (m * (m - 1));
  const double sbb = (kbb.sum() - kbb.trace()) / (n * (n - 1));
  return saa + sbb - 2.0 * kab.sum() / (m * n);
}

inline double kid(const std::vector<Image>& a, const std::vector<Image>& b,
                  const EmbeddingExtractor& e) {
  require(a.size() >= 2 && b.size() >= 2, ErrorCode::insufficient_samples,
          "KID needs at least 2 images per set");
  return kernel_mmd(embed_all(a, e), embed_all(b, e));
}

// ---------------------------------------------------------------------------
// Resemblance protocol
// ---------------------------------------------------------------------------

using MaterialsByClass = std::map<std::string, std::vector<MaterialMaps>>;

struct ResemblanceReport {
  MaterialDistance ours;
  MaterialDistance upper_bound;
  std::optional<MaterialDistance> lower_bound;
  std::vector<std::string> classes;
  std::vector<std::string> skipped;
  int pairs_per_class = 0;
};

namespace detail {
inline std::string collection_digest(const std::vector<MaterialMaps>& v) {
  Sha256 h;
  for (const auto& m : v) h.update(m.albedo).update(m.normals).update(m.roughness);
  return h.hex();
}

// Mean distance over `pairs` sampled (x, y) pairs. The two collections are
// put in a canonical order first so swapping them yields the same pairs.
inline MaterialDistance sampled_pairs(const std::vector<MaterialMaps>& xs,
                                      const std::vector<MaterialMaps>& ys, int pairs,
                                      std::uint64_t seed, const PerceptualMetric& metric) {
  const bool swap = collection_digest(xs) > collection_digest(ys);
  const auto& p = swap ? ys : xs;
  const auto& q = swap ? xs : ys;
  Rng rng(seed);
  MaterialDistance sum;
  for (int k = 0; k < pairs; ++k) {
    const auto& a = p[rng.below(p.size())];
    const auto& b = q[rng.below(q.size())];
    const auto d = material_distance(a, b, metric);
    sum.albedo += d.albedo, sum.normals += d.normals, sum.roughness += d.roughness;
  }
  sum.albedo /= pairs, sum.normals /= pairs, sum.roughness /= pairs;
  return sum;
}

inline void add_to(MaterialDistance& acc, const MaterialDistance& d, double w) {
  acc.albedo += w * d.albedo, acc.normals += w * d.normals, acc.roughness += w * d.roughness;
}
}  // namespace detail

inline constexpr int kDefaultPairsPerClass = 100;

// Same-class pairs (ours) against pairs with a random other class (upper
// bound), averaged per map over classes. `lower` optionally supplies
// single-view estimates of library materials for the lower bound.
inline ResemblanceReport resemblance_protocol(const MaterialsByClass& extracted,
                                              const MaterialsByClass& library,
                                              int pairs_per_class = kDefaultPairsPerClass,
                                              std::uint64_t seed = 0,
                                              const MaterialsByClass* lower = nullptr,
                                              const PerceptualMetric& metric = perceptual_distance) {
  require(pairs_per_class >= 1, ErrorCode::invalid_argument, "pairs_per_class must be >= 1");
  ResemblanceReport r;
  r.pairs_per_class = pairs_per_class;
  std::vector<std::string> library_classes;
  for (const auto& [c, v] : library)
    if (!v.empty()) library_classes.push_back(c);
  for (const auto& [c, v] : extracted) {
    const auto it = library.find(c);
    if (v.empty() || it == library.end() || it->second.empty()) r.skipped.push_back(c);
    else r.classes.push_back(c);
  }
  require(!r.classes.empty(), ErrorCode::insufficient_samples,
          "no class has items on both sides of the comparison");
  require(library_classes.size() >= 2, ErrorCode::insufficient_samples,
          "upper bound needs a library class different from each evaluated class");
  MaterialDistance lower_sum;
  int lower_classes = 0;
  const double w = 1.0 / static_cast<double>(r.classes.size());
  for (const auto& c : r.classes) {
    const std::uint64_t cs = derive_seed(seed, "class:" + c);
    const auto& mine = extracted.at(c);
    const auto& same = library.at(c);
    detail::add_to(r.ours, detail::sampled_pairs(mine, same, pairs_per_class, cs, metric), w);
    // Upper bound: each pair draws its own random other class.
    Rng pick(derive_seed(cs, "other"));
    MaterialDistance ub;
    for (int k = 0; k < pairs_per_class; ++k) {
      std::string other;
      do other = library_classes[pick.below(library_classes.size())];
      while (other == c);
      const auto& lib = library.at(other);
      const auto d = material_distance(mine[pick.below(mine.size())], lib[pick.below(lib.size())], metric);
      detail::add_to(ub, d, 1.0 / pairs_per_class);
    }
    detail::add_to(r.upper_bound, ub, w);
    if (lower) {
      const auto lt = lower->find(c);
      if (lt != lower->end() && !lt->second.empty()) {
        detail::add_to(lower_sum,
                       detail::sampled_pairs(lt->second, same, pairs_per_class,
                                             derive_seed(cs, "lower"), metric),
                       1.0);
        ++lower_classes;
      }
    }
  }
  if (lower_classes > 0) {
    detail::add_to(*(r.lower_bound = MaterialDistance{}), lower_sum, 1.0 / lower_classes);
  }
  return r;
}

inline nlohmann::json to_json(const MaterialDistance& d) {
  return {{"albedo", d.albedo}, {"normals", d.normals}, {"roughness", d.roughness}, {"mean", d.mean()}};
}

inline nlohmann::json to_json(const ResemblanceReport& r) {
  nlohmann::json j{{"ours", to_json(r.ours)},
                   {"upper_bound", to_json(r.upper_bound)},
                   {"classes", r.classes},
                   {"skipped", r.skipped},
                   {"pairs_per_class", r.pairs_per_class}};
  if (r.lower_bound) j["lower_bound"] = to_json(*r.lower_bound);
  return j;
}

inline std::string distance_table(const std::vector<std::pair<std::string, MaterialDistance>>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(18) << "condition" << std::right;
  for (const char* h : {"A", "N", "R", "mean"}) os << std::setw(10) << h;
  os << "\n";
  for (const auto& [name, d] : rows) {
    os << std::left << std::setw(18) << name << std::right << std::setw(10) << format_fixed(d.albedo)
       << std::setw(10) << format_fixed(d.normals) << std::setw(10) << format_fixed(d.roughness)
       << std::setw(10) << format_fixed(d.mean()) << "\n";
  }
  return os.str();
}

inline std::string resemblance_table(const ResemblanceReport& r) {
  std::vector<std::pair<std::string, MaterialDistance>> rows{{"ours", r.ours}, {"upper bound", r.upper_bound}};
  if (r.lower_bound) rows.emplace_back("lower bound", *r.lower_bound);
  return distance_table(rows);
}

// ---------------------------------------------------------------------------
// Re-rendering comparison
// ---------------------------------------------------------------------------

struct RerenderPair {
  MaterialMaps truth;
  MaterialMaps extracted;
};

struct RerenderRow {
  std::string condition;
  MaterialDistance maps;   // per-map distance to the truth
  double rendered = 0.0;   // distance between renders of truth and extraction
  int rank = 0;            // 1 = closest rendered appearance
};

// Per condition: per-map distances plus the mean rendered-view distance under
// `views`. Rows are ranked by rendered distance, ties by map mean.
inline std::vector<RerenderRow> rerender_compare(
    const std::vector<std::pair<std::string, std::vector<RerenderPair>>>& conditions,
    const std::vector<LightingConfig>& views, const PerceptualMetric& metric = perceptual_distance) {
  require(!conditions.empty(), ErrorCode::invalid_argument, "no conditions to compare");
  require(!views.empty(), ErrorCode::invalid_argument, "no views to render");
  std::vector<RerenderRow> rows;
  for (const auto& [name, pairs] : conditions) {
    require(!pairs.empty(), ErrorCode::invalid_argument, "condition '" + name + "' has no pairs");
    RerenderRow row{name, {}, 0.0, 0};
    const double w = 1.0 / static_cast<double>(pairs.size());
    for (const auto& p : pairs) {
      detail::add_to(row.maps, material_distance(p.extracted, p.truth, metric), w);
      for (const auto& v : views)
        row.rendered += w / static_cast<double>(views.size()) *
                        metric(render(p.extracted, v), render(p.truth, v));
    }
    rows.push_back(row);
  }
  std::vector<std::size_t> order(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    if (rows[a].rendered != rows[b].rendered) return rows[a].rendered < rows[b].rendered;
    return rows[a].maps.mean() < rows[b].maps.mean();
  });
  for (std::size_t r = 0; r < order.size(); ++r) rows[order[r]].rank = static_cast<int>(r) + 1;
  return rows;
}

inline std::string rerender_table(const std::vector<RerenderRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(18) << "condition" << std::right;
  for (const char* h : {"A", "N", "R", "render", "rank"}) os << std::setw(10) << h;
  os << "\n";
  for (const auto& r : rows)
    os << std::left << std::setw(18) << r.condition << std::right << std::setw(10)
       << format_fixed(r.maps.albedo) << std::setw(10) << format_fixed(r.maps.normals)
       << std::setw(10) << format_fixed(r.maps.roughness) << std::setw(10)
       << format_fixed(r.rendered) << std::setw(10) << r.rank << "\n";
  return os.str();
}

inline nlohmann::json to_json(const std::vector<RerenderRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows)
    j.push_back({{"condition", r.condition}, {"maps", to_json(r.maps)}, {"rendered", r.rendered},
                 {"rank", r.rank}});
  return j;
}

}  // namespace matpal
