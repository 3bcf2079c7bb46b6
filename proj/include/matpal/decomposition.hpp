#pragma once

// Decomposition network f: texture -> {albedo, normals, roughness}, its
// source training loop and pseudo-label domain adaptation.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "matpal/error.hpp"
#include "matpal/hashing.hpp"
#include "matpal/image.hpp"
#include "matpal/nn.hpp"
#include "matpal/png_io.hpp"
#include "matpal/rng.hpp"
#include "matpal/svbrdf.hpp"

namespace matpal {

struct ArchitectureConfig {
  // Encoder widths from full resolution down; every entry after the first is
  // a stride-2 stage.
  std::vector<int> encoder_widths{8, 16, 24, 32, 32};
  // Decoder widths from the coarsest upsampling stage to full resolution.
  std::vector<int> decoder_widths{16, 12, 8, 8};

  int stride() const { return 1 << (static_cast<int>(encoder_widths.size()) - 1); }

  void validate() const {
    require(encoder_widths.size() >= 2, ErrorCode::invalid_argument, "encoder needs >= 2 stages");
    require(decoder_widths.size() + 1 == encoder_widths.size(), ErrorCode::invalid_argument,
            "one decoder stage per downsampling stage");
    for (int w : encoder_widths) require(w > 0, ErrorCode::invalid_argument, "encoder width");
    for (int w : decoder_widths) require(w > 0, ErrorCode::invalid_argument, "decoder width");
  }

  friend bool operator==(const ArchitectureConfig&, const ArchitectureConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ArchitectureConfig& a) {
  j = {{"encoder_widths", a.encoder_widths}, {"decoder_widths", a.decoder_widths}};
}
inline void from_json(const nlohmann::json& j, ArchitectureConfig& a) {
  j.at("encoder_widths").get_to(a.encoder_widths);
  j.at("decoder_widths").get_to(a.decoder_widths);
}

enum class Head { albedo = 0, normal = 1, roughness = 2 };
inline constexpr int kHeadChannels[3] = {3, 3, 1};

// U-Net style encoder with one skip-connected decoder per output head. The
// decoders alternate nearest upsampling and 3x3 convolutions.
template <class Real>
class DecompositionNet {
 public:
  struct Cache {
    nn::Tensor<Real> input;
    std::vector<nn::Tensor<Real>> enc;                        // activated outputs
    std::array<std::vector<nn::Tensor<Real>>, 3> dec_in;      // concat inputs
    std::array<std::vector<nn::Tensor<Real>>, 3> dec_out;     // activated outputs
    std::array<nn::Tensor<Real>, 3> raw;                      // head outputs
  };

  DecompositionNet() : DecompositionNet(ArchitectureConfig{}) {}

  explicit DecompositionNet(ArchitectureConfig arch) : arch_(std::move(arch)) {
    arch_.validate();
    std::size_t cursor = 0;
    int prev = 3;
    for (std::size_t l = 0; l < arch_.encoder_widths.size(); ++l) {
      enc_.push_back(nn::make_conv(cursor, prev, arch_.encoder_widths[l], 3, l == 0 ? 1 : 2));
      prev = arch_.encoder_widths[l];
    }
    const int levels = static_cast<int>(arch_.decoder_widths.size());
    for (int h = 0; h < 3; ++h) {
      int in = arch_.encoder_widths.back();
      for (int j = 0; j < levels; ++j) {
        const int skip = arch_.encoder_widths[levels - 1 - j];
        dec_[h].push_back(nn::make_conv(cursor, in + skip, arch_.decoder_widths[j], 3, 1));
        in = arch_.decoder_widths[j];
      }
      out_[h] = nn::make_conv(cursor, in, kHeadChannels[h], 1, 1);
    }
    params_.assign(cursor, Real(0));
  }

  const ArchitectureConfig& architecture() const { return arch_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<Real> parameters() { return params_; }
  std::span<const Real> parameters() const { return params_; }

  void initialize(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "init"));
    for (const auto& c : enc_) nn::init_conv<Real>(c, params_, rng);
    for (int h = 0; h < 3; ++h) {
      for (const auto& c : dec_[h]) nn::init_conv<Real>(c, params_, rng);
      nn::init_conv<Real>(out_[h], params_, rng, 1.0);
    }
  }

  void forward(const nn::Tensor<Real>& input, Cache& cache) const {
    require(input.c == 3, ErrorCode::shape_mismatch, "network input needs 3 channels");
    require(input.h % arch_.stride() == 0 && input.w % arch_.stride() == 0,
            ErrorCode::shape_mismatch, "input side must be a multiple of the network stride");
    cache.input = input;
    cache.enc.clear();
    const nn::Tensor<Real>* x = &input;
    for (const auto& c : enc_) {
      cache.enc.push_back(nn::conv_forward<Real>(c, params_, *x));
      nn::leaky_relu_inplace(cache.enc.back());
      x = &cache.enc.back();
    }
    const int levels = static_cast<int>(dec_[0].size());
    for (int h = 0; h < 3; ++h) {
      cache.dec_in[h].clear();
      cache.dec_out[h].clear();
      const nn::Tensor<Real>* cur = &cache.enc.back();
      for (int j = 0; j < levels; ++j) {
        cache.dec_in[h].push_back(nn::concat(nn::upsample2(*cur), cache.enc[levels - 1 - j]));
        cache.dec_out[h].push_back(nn::conv_forward<Real>(dec_[h][j], params_, cache.dec_in[h].back()));
        nn::leaky_relu_inplace(cache.dec_out[h].back());
        cur = &cache.dec_out[h].back();
      }
      cache.raw[h] = nn::conv_forward<Real>(out_[h], params_, *cur);
    }
  }

  // Accumulates parameter gradients for upstream gradients on the raw heads.
  void backward(const Cache& cache, const std::array<nn::Tensor<Real>, 3>& grad_raw,
                std::span<Real> grads) const {
    const int levels = static_cast<int>(dec_[0].size());
    std::vector<nn::Tensor<Real>> enc_grad(enc_.size());
    for (std::size_t l = 0; l < enc_.size(); ++l)
      enc_grad[l] = nn::Tensor<Real>(cache.enc[l].c, cache.enc[l].h, cache.enc[l].w);
    for (int h = 0; h < 3; ++h) {
      const nn::Tensor<Real>& last = cache.dec_out[h].back();
      nn::Tensor<Real> g = nn::conv_backward<Real>(out_[h], params_, last, grad_raw[h], grads);
      for (int j = levels - 1; j >= 0; --j) {
        nn::leaky_relu_backward(cache.dec_out[h][j], g);
        nn::Tensor<Real> g_in =
            nn::conv_backward<Real>(dec_[h][j], params_, cache.dec_in[h][j], g, grads);
        const int up_channels = j == 0 ? cache.enc.back().c : cache.dec_out[h][j - 1].c;
        nn::Tensor<Real> g_up, g_skip;
        nn::split(g_in, up_channels, g_up, g_skip);
        auto& skip_acc = enc_grad[levels - 1 - j];
        for (std::size_t i = 0; i < skip_acc.v.size(); ++i) skip_acc.v[i] += g_skip.v[i];
        g = nn::upsample2_backward(g_up);
      }
      auto& bottleneck = enc_grad.back();
      for (std::size_t i = 0; i < bottleneck.v.size(); ++i) bottleneck.v[i] += g.v[i];
    }
    for (int l = static_cast<int>(enc_.size()) - 1; l >= 0; --l) {
      nn::leaky_relu_backward(cache.enc[l], enc_grad[l]);
      const nn::Tensor<Real>& in = l == 0 ? cache.input : cache.enc[l - 1];
      nn::Tensor<Real> g_in = nn::conv_backward<Real>(enc_[l], params_, in, enc_grad[l], grads, l > 0);
      if (l > 0)
        for (std::size_t i = 0; i < g_in.v.size(); ++i) enc_grad[l - 1].v[i] += g_in.v[i];
    }
  }

 private:
  ArchitectureConfig arch_;
  std::vector<nn::Conv2d> enc_;
  std::array<std::vector<nn::Conv2d>, 3> dec_;
  std::array<nn::Conv2d, 3> out_;
  std::vector<Real> params_;
};

// ---------------------------------------------------------------------------
// Head activations
// ---------------------------------------------------------------------------

namespace heads {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double softplus(double x) { return x > 30 ? x : std::log1p(std::exp(x)); }
constexpr double kNormalXYScale = 3.0;
constexpr double kNormalZFloor = 0.1;

// Raw head tensors to material maps.
template <class Real>
MaterialMaps activate(const std::array<nn::Tensor<Real>, 3>& raw) {
  const int h = raw[0].h, w = raw[0].w;
  MaterialMaps m = MaterialMaps::zeros(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) m.albedo.at(y, x, c) = sigmoid(raw[0].at(c, y, x));
      const double vx = kNormalXYScale * std::tanh(static_cast<double>(raw[1].at(0, y, x)));
      const double vy = kNormalXYScale * std::tanh(static_cast<double>(raw[1].at(1, y, x)));
      const double vz = softplus(raw[1].at(2, y, x)) + kNormalZFloor;
      const double len = std::sqrt(vx * vx + vy * vy + vz * vz);
      m.normals.at(y, x, 0) = vx / len;
      m.normals.at(y, x, 1) = vy / len;
      m.normals.at(y, x, 2) = vz / len;
      m.roughness.at(y, x) = sigmoid(raw[2].at(0, y, x));
    }
  return m;
}

// Chains d(loss)/d(maps) through the activations.
template <class Real>
std::array<nn::Tensor<Real>, 3> backward(const std::array<nn::Tensor<Real>, 3>& raw,
                                         const MaterialMaps& maps, const MaterialGradient& g) {
  const int h = raw[0].h, w = raw[0].w;
  std::array<nn::Tensor<Real>, 3> out{nn::Tensor<Real>(3, h, w), nn::Tensor<Real>(3, h, w),
                                      nn::Tensor<Real>(1, h, w)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double a = maps.albedo.at(y, x, c);
        out[0].at(c, y, x) = static_cast<Real>(g.albedo.at(y, x, c) * a * (1.0 - a));
      }
      const double tx = std::tanh(static_cast<double>(raw[1].at(0, y, x)));
      const double ty = std::tanh(static_cast<double>(raw[1].at(1, y, x)));
      const double rz = raw[1].at(2, y, x);
      const double v[3] = {kNormalXYScale * tx, kNormalXYScale * ty, softplus(rz) + kNormalZFloor};
      const double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
      const double n[3] = {v[0] / len, v[1] / len, v[2] / len};
      const double gn[3] = {g.normals.at(y, x, 0), g.normals.at(y, x, 1), g.normals.at(y, x, 2)};
      const double gn_dot_n = gn[0] * n[0] + gn[1] * n[1] + gn[2] * n[2];
      double gv[3];
      for (int k = 0; k < 3; ++k) gv[k] = (gn[k] - gn_dot_n * n[k]) / len;
      out[1].at(0, y, x) = static_cast<Real>(gv[0] * kNormalXYScale * (1.0 - tx * tx));
      out[1].at(1, y, x) = static_cast<Real>(gv[1] * kNormalXYScale * (1.0 - ty * ty));
      out[1].at(2, y, x) = static_cast<Real>(gv[2] * sigmoid(rz));
      const double r = maps.roughness.at(y, x);
      out[2].at(0, y, x) = static_cast<Real>(g.roughness.at(y, x) * r * (1.0 - r));
    }
  return out;
}

}  // namespace heads

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct NormalizationStats {
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> std_dev{0.25, 0.25, 0.25};
};

struct DecompositionModel {
  DecompositionNet<float> net;
  NormalizationStats normalization;
  std::uint64_t training_seed = 0;
  std::vector<std::string> dataset_digests;
  std::vector<double> loss_log;

  DecompositionModel() = default;
  explicit DecompositionModel(const ArchitectureConfig& arch) : net(arch) {}

  int stride() const { return net.architecture().stride(); }

  // SHA-256 of the little-endian float32 parameter blob.
  std::string digest() const { return sha256_hex(parameter_blob()); }

  std::vector<std::uint8_t> parameter_blob() const {
    const auto p = net.parameters();
    std::vector<std::uint8_t> blob(p.size() * 4);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto u = std::bit_cast<std::uint32_t>(p[i]);
      for (int k = 0; k < 4; ++k) blob[4 * i + k] = static_cast<std::uint8_t>(u >> (8 * k));
    }
    return blob;
  }
};

inline nn::Tensor<float> to_input_tensor(const Image& texture, const NormalizationStats& s) {
  require(texture.channels() == 3, ErrorCode::shape_mismatch, "texture needs 3 channels");
  nn::Tensor<float> t(3, texture.height(), texture.width());
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < texture.height(); ++y)
      for (int x = 0; x < texture.width(); ++x)
        t.at(c, y, x) = static_cast<float>((texture.at(y, x, c) - s.mean[c]) / s.std_dev[c]);
  return t;
}

inline void check_texture_shape(const DecompositionModel& model, const Image& texture) {
  require(texture.channels() == 3, ErrorCode::shape_mismatch, "texture needs 3 channels");
  require(texture.width() == texture.height(), ErrorCode::shape_mismatch, "texture must be square");
  require(texture.width() > 0 && texture.width() % model.stride() == 0, ErrorCode::shape_mismatch,
          "texture side " + std::to_string(texture.width()) + " is not a multiple of stride " +
              std::to_string(model.stride()));
}

inline MaterialMaps decompose(const DecompositionModel& model, const Image& texture) {
  check_texture_shape(model, texture);
  DecompositionNet<float>::Cache cache;
  model.net.forward(to_input_tensor(texture, model.normalization), cache);
  return heads::activate(cache.raw);
}

// Resizes to the nearest admissible square side, decomposes, resizes the
// maps back. Normals are renormalised after resampling.
inline MaterialMaps decompose_any(const DecompositionModel& model, const Image& texture) {
  const int s = model.stride();
  const int side = std::max(s, (std::max(texture.width(), texture.height()) + s / 2) / s * s);
  if (texture.width() == side && texture.height() == side) return decompose(model, texture);
  MaterialMaps m = decompose(model, resize_bilinear(to_rgb(texture), side, side));
  MaterialMaps out{clamp01(resize_bilinear(m.albedo, texture.width(), texture.height())),
                   resize_bilinear(m.normals, texture.width(), texture.height()),
                   clamp01(resize_bilinear(m.roughness, texture.width(), texture.height()))};
  auto n = out.normals.data();
  for (std::size_t i = 0; i < n.size(); i += 3) {
    const Vec3 v = normalize({n[i], n[i + 1], std::max(n[i + 2], 1e-3)});
    n[i] = v.x;
    n[i + 1] = v.y;
    n[i + 2] = v.z;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Datasets in memory
// ---------------------------------------------------------------------------

struct SourceSample {
  std::string id;
  std::string class_label;
  MaterialMaps maps;
};

struct TargetSample {
  std::string id;
  std::string class_label;
  Image texture;
  std::optional<MaterialMaps> pseudo;
  std::string pseudo_model_digest;
};

inline std::string source_digest(const std::vector<SourceSample>& s) {
  std::vector<const SourceSample*> order;
  for (const auto& x : s) order.push_back(&x);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->id < b->id; });
  Sha256 h;
  for (auto* x : order) {
    h.update(x->id).update(x->maps.albedo).update(x->maps.normals).update(x->maps.roughness);
  }
  return h.hex();
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class TrainingStage { source, adapt };

// Network input for target items: the texture itself, or a fresh rendering
// of its pseudo-maps.
enum class TargetInput { texture, rerender };

struct TrainingConfig {
  LossWeights weights;
  double step_size = 2e-3;
  int steps = 400;
  int batch_size = 8;
  // Fraction of each batch drawn from the target set when it is non-empty.
  double target_fraction = 0.5;
  // Lighting seeds are drawn fresh per (step, sample) from the training seed.
  bool fresh_lighting = true;
  TrainingStage stage = TrainingStage::source;
  TargetInput target_input = TargetInput::texture;
  // Random roll and square symmetry applied jointly to target inputs and
  // pseudo-maps.
  bool augment_target = true;

  void validate() const {
    weights.validate();
    require(steps > 0 && batch_size > 0, ErrorCode::invalid_argument,
            "steps and batch size must be positive");
    require(step_size > 0.0, ErrorCode::invalid_argument, "step size must be positive");
    require(target_fraction >= 0.0 && target_fraction <= 1.0, ErrorCode::invalid_argument,
            "target_fraction must lie in [0,1]");
  }
};

// Adaptation settings: half the source steps at half the step size, three
// target items per source item.
inline TrainingConfig default_adapt_config(TrainingConfig base = {}) {
  base.stage = TrainingStage::adapt;
  base.steps = 200;
  base.step_size = 1e-3;
  base.target_fraction = 0.75;
  return base;
}

inline void to_json(nlohmann::json& j, const TrainingConfig& c) {
  j = {{"lambda_reg", c.weights.lambda_reg},
       {"view_count", c.weights.view_count},
       {"step_size", c.step_size},
       {"steps", c.steps},
       {"batch_size", c.batch_size},
       {"target_fraction", c.target_fraction},
       {"fresh_lighting", c.fresh_lighting},
       {"stage", c.stage == TrainingStage::source ? "source" : "adapt"},
       {"target_input", c.target_input == TargetInput::texture ? "texture" : "rerender"},
       {"augment_target", c.augment_target}};
}
inline void from_json(const nlohmann::json& j, TrainingConfig& c) {
  c.weights.lambda_reg = j.value("lambda_reg", c.weights.lambda_reg);
  c.weights.view_count = j.value("view_count", c.weights.view_count);
  c.step_size = j.value("step_size", c.step_size);
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.target_fraction = j.value("target_fraction", c.target_fraction);
  c.fresh_lighting = j.value("fresh_lighting", c.fresh_lighting);
  c.stage = j.value("stage", std::string("source")) == "adapt" ? TrainingStage::adapt
                                                               : TrainingStage::source;
  c.target_input = j.value("target_input", std::string("texture")) == "rerender"
                       ? TargetInput::rerender
                       : TargetInput::texture;
  c.augment_target = j.value("augment_target", c.augment_target);
}

// One element of a training batch: the rendered network input, the maps it
// is supervised against and the views of the rendering loss.
struct BatchItem {
  bool from_target = false;
  std::size_t index = 0;
  Image input;
  MaterialMaps target;
  std::vector<LightingConfig> views;
};

inline std::vector<BatchItem> plan_batch(const std::vector<SourceSample>& source,
                                         const std::vector<TargetSample>& target,
                                         const TrainingConfig& cfg, std::uint64_t seed, int step) {
  const bool mix = !target.empty();
  int n_target = mix ? static_cast<int>(std::lround(cfg.batch_size * cfg.target_fraction)) : 0;
  if (source.empty()) n_target = cfg.batch_size;
  const int n_source = cfg.batch_size - n_target;
  Rng pick(derive_seed(seed, {0x62617463ULL, static_cast<std::uint64_t>(step)}));
  std::vector<BatchItem> batch;
  for (int j = 0; j < cfg.batch_size; ++j) {
    BatchItem item;
    item.from_target = j >= n_source;
    if (item.from_target) {
      item.index = pick.below(target.size());
      const auto& t = target[item.index];
      require(t.pseudo.has_value(), ErrorCode::precondition,
              "target sample " + t.id + " has no pseudo-maps");
      item.target = *t.pseudo;
    } else {
      item.index = pick.below(source.size());
      item.target = source[item.index].maps;
    }
    const std::uint64_t s = cfg.fresh_lighting
                                ? derive_seed(seed, {static_cast<std::uint64_t>(step),
                                                     static_cast<std::uint64_t>(j)})
                                : derive_seed(seed, {static_cast<std::uint64_t>(j)});
    if (item.from_target && cfg.target_input == TargetInput::texture)
      item.input = target[item.index].texture;
    else
      item.input = render(item.target, sample_random_lighting(s));
    if (item.from_target && cfg.augment_target) {
      Rng aug(derive_seed(s, "augment"));
      const int dx = static_cast<int>(aug.below(static_cast<std::uint64_t>(item.input.width())));
      const int dy = static_cast<int>(aug.below(static_cast<std::uint64_t>(item.input.height())));
      const int k = static_cast<int>(aug.below(8));
      item.input = dihedral(roll(item.input, dx, dy), k);
      item.target = transform_material(item.target, dx, dy, k);
    }
    item.views = sample_lighting(derive_seed(s, "views"), cfg.weights.view_count);
    batch.push_back(std::move(item));
  }
  return batch;
}

// Loss of one item through the training code path; accumulates parameter
// gradients (scaled by `scale`) when `grads` is non-empty.
inline double item_loss(const DecompositionModel& model, const BatchItem& item,
                        const LossWeights& w, std::span<float> grads = {}, double scale = 1.0) {
  DecompositionNet<float>::Cache cache;
  model.net.forward(to_input_tensor(item.input, model.normalization), cache);
  const MaterialMaps pred = heads::activate(cache.raw);
  if (grads.empty()) return total_loss(pred, item.target, item.views, w);
  MaterialGradient g = MaterialMaps::zeros(pred.width(), pred.height());
  std::vector<RenderedImage> target_renders;
  target_renders.reserve(item.views.size());
  for (const auto& v : item.views) target_renders.push_back(render(item.target, v));
  const double loss = total_loss(pred, item.target, item.views, w, &g, &target_renders);
  for (auto* img : {&g.albedo, &g.normals, &g.roughness})
    for (auto& v : img->data()) v *= scale;
  model.net.backward(cache, heads::backward(cache.raw, pred, g), grads);
  return loss;
}

using ProgressCallback = std::function<void(int step, double loss)>;

// Shared update loop for source training and adaptation. With an empty
// target set it is exactly continued source training.
inline void train_loop(DecompositionModel& model, const std::vector<SourceSample>& source,
                       const std::vector<TargetSample>& target, const TrainingConfig& cfg,
                       std::uint64_t seed, const ProgressCallback& progress = {}) {
  cfg.validate();
  require(!source.empty() || !target.empty(), ErrorCode::invalid_argument, "empty dataset");
  nn::RmsProp<float> opt(model.net.parameter_count(), cfg.step_size);
  std::vector<float> grads(model.net.parameter_count());
  for (int step = 0; step < cfg.steps; ++step) {
    std::fill(grads.begin(), grads.end(), 0.0f);
    const auto batch = plan_batch(source, target, cfg, seed, step);
    double loss = 0.0;
    for (const auto& item : batch)
      loss += item_loss(model, item, cfg.weights, grads, 1.0 / batch.size());
    loss /= static_cast<double>(batch.size());
    opt.apply(model.net.parameters(), grads);
    model.loss_log.push_back(loss);
    if (progress) progress(step, loss);
  }
}

// Per-channel statistics of inputs rendered from the source maps.
inline NormalizationStats input_statistics(const std::vector<SourceSample>& source,
                                           std::uint64_t seed) {
  NormalizationStats s;
  std::array<double, 3> sum{}, sq{};
  double n = 0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const Image p = render(source[i].maps, sample_random_lighting(derive_seed(seed, {i})));
    const auto d = p.data();
    for (std::size_t k = 0; k < d.size(); ++k) {
      sum[k % 3] += d[k];
      sq[k % 3] += d[k] * d[k];
    }
    n += static_cast<double>(p.pixel_count());
  }
  for (int c = 0; c < 3; ++c) {
    s.mean[c] = sum[c] / n;
    s.std_dev[c] = std::max(std::sqrt(std::max(sq[c] / n - s.mean[c] * s.mean[c], 0.0)), 1e-3);
  }
  return s;
}

inline DecompositionModel train_source(const std::vector<SourceSample>& source,
                                       const TrainingConfig& cfg, std::uint64_t seed,
                                       const ArchitectureConfig& arch = {},
                                       const ProgressCallback& progress = {}) {
  require(!source.empty(), ErrorCode::invalid_argument, "empty source dataset");
  for (const auto& s : source) s.maps.check_shapes();
  DecompositionModel model(arch);
  model.net.initialize(seed);
  model.training_seed = seed;
  model.normalization = input_statistics(source, derive_seed(seed, "normalization"));
  model.dataset_digests.push_back(source_digest(source));
  train_loop(model, source, {}, cfg, seed, progress);
  return model;
}

// Attaches decompose(model, texture) to every target sample.
inline std::vector<TargetSample> pseudo_label(const DecompositionModel& model,
                                              std::vector<TargetSample> target) {
  const std::string digest = target.empty() ? std::string() : model.digest();
  for (auto& t : target) {
    t.pseudo = decompose(model, t.texture);
    t.pseudo_model_digest = digest;
  }
  return target;
}

inline DecompositionModel adapt(const DecompositionModel& source_model,
                                const std::vector<SourceSample>& source,
                                const std::vector<TargetSample>& target, const TrainingConfig& cfg,
                                std::uint64_t seed, const ProgressCallback& progress = {}) {
  for (const auto& t : target)
    require(t.pseudo.has_value(), ErrorCode::precondition,
            "target sample " + t.id + " lacks pseudo-maps");
  DecompositionModel model = source_model;
  model.loss_log.clear();
  train_loop(model, source, target, cfg, seed, progress);
  return model;
}

// ---------------------------------------------------------------------------
// Checkpoints: manifest.json + params.bin (little-endian float32)
// ---------------------------------------------------------------------------

inline constexpr const char* kParameterOrder =
    "encoder stages (full resolution first), then per head in order albedo, normal, roughness: "
    "decoder stages coarse to fine, then the 1x1 output convolution; each convolution stores "
    "weights [out][in][ky][kx] followed by bias [out]";

inline void save_checkpoint(const DecompositionModel& model, const std::filesystem::path& dir,
                            const nlohmann::json& extra = {}) {
  std::filesystem::create_directories(dir);
  const auto blob = model.parameter_blob();
  write_file_bytes(dir / "params.bin", blob);
  nlohmann::json j;
  j["format"] = "matpal-checkpoint-1";
  j["architecture"] = model.net.architecture();
  j["normalization"] = {{"mean", model.normalization.mean}, {"std", model.normalization.std_dev}};
  j["training_seed"] = model.training_seed;
  j["dataset_digests"] = model.dataset_digests;
  j["loss_log"] = model.loss_log;
  j["parameter_count"] = model.net.parameter_count();
  j["parameter_dtype"] = "float32-le";
  j["parameter_order"] = kParameterOrder;
  j["digest"] = sha256_hex(blob);
  if (!extra.is_null()) j["extra"] = extra;
  const std::string text = j.dump(2);
  write_file_bytes(dir / "manifest.json",
                   std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline DecompositionModel load_checkpoint(const std::filesystem::path& dir) {
  const auto text = read_file_bytes(dir / "manifest.json");
  const auto j = nlohmann::json::parse(text.begin(), text.end());
  DecompositionModel model(j.at("architecture").get<ArchitectureConfig>());
  model.normalization.mean = j.at("normalization").at("mean").get<std::array<double, 3>>();
  model.normalization.std_dev = j.at("normalization").at("std").get<std::array<double, 3>>();
  model.training_seed = j.value("training_seed", std::uint64_t{0});
  model.dataset_digests = j.value("dataset_digests", std::vector<std::string>{});
  model.loss_log = j.value("loss_log", std::vector<double>{});
  const auto blob = read_file_bytes(dir / "params.bin");
  require(blob.size() == model.net.parameter_count() * 4, ErrorCode::io,
          "parameter blob size does not match architecture");
  require(sha256_hex(blob) == j.at("digest").get<std::string>(), ErrorCode::io,
          "parameter blob digest mismatch");
  auto p = model.net.parameters();
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::uint32_t u = 0;
    for (int k = 0; k < 4; ++k) u |= static_cast<std::uint32_t>(blob[4 * i + k]) << (8 * k);
    p[i] = std::bit_cast<float>(u);
  }
  return model;
}

}  // namespace matpal
