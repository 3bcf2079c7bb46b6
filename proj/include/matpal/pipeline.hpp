#pragma once

// End-to-end extraction (regions -> concept -> candidates -> selection ->
// maps) and the on-disk job store and worker pool behind the HTTP API.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>
#include <ctime>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "matpal/datasets.hpp"
#include "matpal/decomposition.hpp"
#include "matpal/error.hpp"
#include "matpal/hashing.hpp"
#include "matpal/png_io.hpp"
#include "matpal/regions.hpp"
#include "matpal/svbrdf.hpp"
#include "matpal/synthesis.hpp"

namespace matpal {

enum class Stage { queued, learning_concept, generating, selecting, decomposing, done, failed };

inline std::string to_string(Stage s) {
  switch (s) {
    case Stage::queued: return "queued";
    case Stage::learning_concept: return "learning_concept";
    case Stage::generating: return "generating";
    case Stage::selecting: return "selecting";
    case Stage::decomposing: return "decomposing";
    case Stage::done: return "done";
    case Stage::failed: return "failed";
  }
  return "failed";
}

inline Stage stage_from_string(const std::string& s) {
  for (Stage st : {Stage::queued, Stage::learning_concept, Stage::generating, Stage::selecting,
                   Stage::decomposing, Stage::done, Stage::failed})
    if (to_string(st) == s) return st;
  fail(ErrorCode::invalid_input, "unknown stage '" + s + "'");
}

struct ExtractionConfig {
  CropConfig crop;
  int resolution = 512;
  int candidates = 8;
  std::size_t template_index = kDefaultGenerateTemplate;
  bool tileable = true;
  std::uint64_t seed = 0;

  void validate() const {
    crop.validate();
    validate_resolution(resolution);
    require(candidates >= 1, ErrorCode::invalid_argument, "candidates must be >= 1");
    require(template_index < generate_templates().size(), ErrorCode::invalid_argument,
            "template index out of range");
  }
  std::string prompt(const TextureSubject& s) const {
    return generate_templates()[template_index].fill(s.prompt_token());
  }
};

inline nlohmann::json to_json(const ExtractionConfig& c) {
  return {{"c_x", c.crop.c_x},
          {"c_in", c.crop.c_in},
          {"max_crops", c.crop.max_crops},
          {"coverage_fraction", c.crop.coverage_fraction},
          {"resolution", c.resolution},
          {"candidates", c.candidates},
          {"template_index", c.template_index},
          {"tileable", c.tileable},
          {"seed", c.seed}};
}

inline ExtractionConfig extraction_config_from_json(const nlohmann::json& j) {
  ExtractionConfig c;
  if (j.is_null()) return c;
  c.crop.c_x = j.value("c_x", c.crop.c_x);
  c.crop.c_in = j.value("c_in", c.crop.c_in);
  c.crop.max_crops = j.value("max_crops", c.crop.max_crops);
  c.crop.coverage_fraction = j.value("coverage_fraction", c.crop.coverage_fraction);
  c.resolution = j.value("resolution", c.resolution);
  c.candidates = j.value("candidates", c.candidates);
  c.template_index = j.value("template_index", c.template_index);
  c.tileable = j.value("tileable", c.tileable);
  c.seed = j.value("seed", c.seed);
  return c;
}

inline std::string config_digest(const ExtractionConfig& c) { return sha256_hex(to_json(c).dump()); }

inline std::string material_digest(const MaterialMaps& m) {
  return Sha256().update(m.albedo).update(m.normals).update(m.roughness).hex();
}

struct RegionResult {
  std::string region_id;
  Stage stage = Stage::queued;
  std::string error;
  std::vector<CropWindow> windows;
  std::vector<Image> crops;
  std::optional<ConceptHandle> concept_handle;
  std::string backend_id;
  std::string prompt;
  std::vector<TextureCandidate> candidates;
  std::vector<double> candidate_scores;
  std::optional<std::size_t> selected;
  bool user_selected = false;
  std::optional<MaterialMaps> material;

  bool ok() const { return stage != Stage::failed; }
};

struct PaletteResult {
  std::vector<RegionResult> regions;
  Stage stage = Stage::queued;
  std::string error;
  std::string model_digest;
};

using StageCallback = std::function<void(Stage stage, double progress, const PaletteResult& partial)>;

struct ExtractionContext {
  TextureBackend* backend = nullptr;
  TextureBackend* fallback = nullptr;  // used when the primary raises BackendError
  const DecompositionModel* model = nullptr;
  StageCallback on_stage;
  const std::atomic<bool>* cancel = nullptr;
};

inline std::vector<double> candidate_scores(const std::vector<TextureCandidate>& cands,
                                            const std::vector<Image>& crops) {
  std::vector<double> s;
  for (const auto& c : cands) s.push_back(select_best(std::vector<Image>{c.image}, crops).score);
  return s;
}

namespace detail {
template <class F>
void run_region_stage(RegionResult& r, Stage stage, F&& body) {
  if (!r.ok()) return;
  r.stage = stage;
  try {
    body();
  } catch (const std::exception& e) {
    r.stage = Stage::failed;
    r.error = e.what();
    if (r.error.empty()) r.error = "unknown failure";
  }
}
}  // namespace detail

// Runs every stage across all regions before the next stage so the overall
// stage never moves backwards. A region failure is recorded on the region;
// the result fails only when every region failed.
inline PaletteResult extract_palette(const Image& image, const std::vector<RegionMask>& masks,
                                     const std::vector<std::string>& region_ids,
                                     const ExtractionConfig& cfg, const ExtractionContext& ctx) {
  require(!masks.empty(), ErrorCode::invalid_argument, "at least one region mask is required");
  require(region_ids.empty() || region_ids.size() == masks.size(), ErrorCode::invalid_argument,
          "one region id per mask");
  require(ctx.backend && ctx.model, ErrorCode::precondition, "extraction needs a backend and a model");
  cfg.validate();
  PaletteResult out;
  out.model_digest = ctx.model->digest();
  for (std::size_t i = 0; i < masks.size(); ++i) {
    RegionResult r;
    r.region_id = region_ids.empty() ? "region-" + std::to_string(i) : region_ids[i];
    out.regions.push_back(std::move(r));
  }
  const Image rgb = to_rgb(image);
  const double units = 4.0 * static_cast<double>(masks.size());
  double done_units = 0;
  auto report = [&](Stage s) {
    out.stage = s;
    if (ctx.on_stage) ctx.on_stage(s, done_units / units, out);
  };
  auto cancelled = [&] { return ctx.cancel && ctx.cancel->load(); };

  auto with_fallback = [&](RegionResult& r, auto&& call) {
    try {
      r.backend_id = ctx.backend->id();
      return call(*ctx.backend);
    } catch (const BackendError&) {
      if (!ctx.fallback) throw;
      r.backend_id = ctx.fallback->id();
      return call(*ctx.fallback);
    }
  };

  report(Stage::learning_concept);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    auto& r = out.regions[i];
    if (cancelled()) fail(ErrorCode::precondition, "cancelled");
    detail::run_region_stage(r, Stage::learning_concept, [&] {
      require(masks[i].width() == rgb.width() && masks[i].height() == rgb.height(),
              ErrorCode::shape_mismatch, "mask " + r.region_id + " does not match the image size");
      const std::uint64_t seed = derive_seed(cfg.seed, {i});
      r.windows = sample_crop_windows(masks[i], cfg.crop, seed);
      for (const auto& w : r.windows)
        r.crops.push_back(resize_bilinear(crop(rgb, w.x, w.y, w.side, w.side), cfg.crop.c_in, cfg.crop.c_in));
      r.concept_handle = with_fallback(r, [&](TextureBackend& b) {
        return learn_concept(b, r.crops, train_template().fill(std::string(kConceptToken)), seed);
      });
    });
    done_units += 1;
    report(Stage::learning_concept);
  }

  report(Stage::generating);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    auto& r = out.regions[i];
    detail::run_region_stage(r, Stage::generating, [&] {
      const auto subject = TextureSubject::of(*r.concept_handle);
      r.prompt = cfg.prompt(subject);
      TextureBackend* b = r.backend_id == ctx.backend->id() ? ctx.backend : ctx.fallback;
      r.candidates = generate(*b, subject, r.prompt, cfg.resolution, cfg.candidates, cfg.tileable,
                              derive_seed(cfg.seed, {i, 1}));
    });
    done_units += 1;
    report(Stage::generating);
  }

  report(Stage::selecting);
  for (auto& r : out.regions) {
    detail::run_region_stage(r, Stage::selecting, [&] {
      r.candidate_scores = candidate_scores(r.candidates, r.crops);
      std::size_t best = 0;
      for (std::size_t k = 1; k < r.candidate_scores.size(); ++k)
        if (r.candidate_scores[k] < r.candidate_scores[best]) best = k;
      r.selected = best;
    });
    done_units += 1;
    report(Stage::selecting);
  }

  report(Stage::decomposing);
  for (auto& r : out.regions) {
    detail::run_region_stage(r, Stage::decomposing, [&] {
      r.material = decompose_any(*ctx.model, r.candidates[*r.selected].image);
      r.stage = Stage::done;
    });
    done_units += 1;
    report(Stage::decomposing);
  }

  const bool any_ok = std::any_of(out.regions.begin(), out.regions.end(), [](auto& r) { return r.ok(); });
  out.stage = any_ok ? Stage::done : Stage::failed;
  if (!any_ok) {
    out.error = "all regions failed";
    for (const auto& r : out.regions) out.error += "; " + r.region_id + ": " + r.error;
  }
  if (ctx.on_stage) ctx.on_stage(out.stage, 1.0, out);
  return out;
}

// Replaces the automatic choice for one region and re-decomposes it.
inline void override_selection(RegionResult& r, std::size_t index, const DecompositionModel& model) {
  require(r.ok() && r.stage == Stage::done, ErrorCode::precondition,
          "region " + r.region_id + " has no completed result to override");
  require(index < r.candidates.size(), ErrorCode::invalid_argument,
          "candidate index " + std::to_string(index) + " out of range");
  r.selected = index;
  r.user_selected = true;
  r.material = decompose_any(model, r.candidates[index].image);
}

inline nlohmann::json region_provenance(const RegionResult& r, const ExtractionConfig& cfg,
                                        const std::string& model_digest) {
  nlohmann::json windows = nlohmann::json::array();
  for (const auto& w : r.windows)
    windows.push_back({{"x", w.x}, {"y", w.y}, {"side", w.side}, {"coverage", w.coverage}});
  nlohmann::json cands = nlohmann::json::array();
  for (std::size_t i = 0; i < r.candidates.size(); ++i) {
    const auto& c = r.candidates[i];
    nlohmann::json cj{{"index", i},
                      {"seed", c.seed},
                      {"tileable", c.tileable},
                      {"seam", c.seam.combined},
                      {"digest", image_digest(c.image)}};
    if (i < r.candidate_scores.size()) cj["score"] = r.candidate_scores[i];
    cands.push_back(std::move(cj));
  }
  nlohmann::json j{{"region_id", r.region_id},
                   {"stage", to_string(r.stage)},
                   {"crop_windows", windows},
                   {"backend", r.backend_id},
                   {"prompt", r.prompt},
                   {"candidates", cands},
                   {"config", to_json(cfg)},
                   {"model_digest", model_digest}};
  if (r.concept_handle) j["concept"] = to_json(*r.concept_handle);
  if (r.selected) j["selected_index"] = *r.selected, j["user_selected"] = r.user_selected;
  if (r.material) j["material_digest"] = material_digest(*r.material);
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

// ---------------------------------------------------------------------------
// Default model: trained on the synthetic source set on first use and cached.
// ---------------------------------------------------------------------------

inline constexpr const char* kDefaultModelTag = "default-model-1";

inline std::filesystem::path model_cache_dir() {
  if (const char* x = std::getenv("XDG_CACHE_HOME"); x && *x) return std::filesystem::path(x) / "matpal";
  if (const char* h = std::getenv("HOME"); h && *h) return std::filesystem::path(h) / ".cache" / "matpal";
  return std::filesystem::temp_directory_path() / "matpal-cache";
}

inline DecompositionModel default_model(const std::filesystem::path& cache = model_cache_dir()) {
  const auto dir = cache / kDefaultModelTag;
  if (std::filesystem::exists(dir / "params.bin")) return load_checkpoint(dir);
  const auto data = gen_synthetic(64, default_synthetic_ontology(), DomainShift::none, 0);
  DecompositionModel model = train_source(data.samples, TrainingConfig{}, 0);
  const auto tmp = cache / (std::string(kDefaultModelTag) + ".tmp" + std::to_string(::getpid()));
  save_checkpoint(model, tmp, {{"origin", "default synthetic source model"}});
  std::error_code ec;
  std::filesystem::rename(tmp, dir, ec);
  if (ec) std::filesystem::remove_all(tmp);
  return model;
}

// ---------------------------------------------------------------------------
// Job store
// ---------------------------------------------------------------------------

inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  static std::atomic<unsigned> counter{0};
  const auto tmp = path.string() + ".tmp" + std::to_string(counter.fetch_add(1));
  write_file_bytes(tmp, bytes);
  std::filesystem::rename(tmp, path);
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::string read_text(const std::filesystem::path& path) {
  const auto b = read_file_bytes(path);
  return {b.begin(), b.end()};
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline bool safe_id(const std::string& id) {
  return !id.empty() && id.size() <= 128 &&
         std::all_of(id.begin(), id.end(), [](unsigned char c) { return std::isalnum(c) || c == '-' || c == '_'; });
}

// Directory layout under the root:
//   images/<image_id>/image.png, images/<image_id>/masks/<mask_id>.png
//   jobs/<job_id>/job.json, jobs/<job_id>/<region>/candidate-<i>.png
//   materials/<material_id>/{albedo,normal,roughness}.png
//   cache/<key>.json
class JobStore {
 public:
  explicit JobStore(std::filesystem::path root) : root_(std::move(root)) {
    for (const char* d : {"images", "jobs", "materials", "cache"}) std::filesystem::create_directories(root_ / d);
  }

  const std::filesystem::path& root() const { return root_; }

  // Content-addressed: the same PNG always yields the same id.
  std::string put_image(std::span<const std::uint8_t> png) {
    const Image img = decode_png(png).image;
    require(img.width() > 0 && img.height() > 0, ErrorCode::invalid_input, "empty image");
    const std::string id = "img-" + sha256_hex(png).substr(0, 16);
    const auto dir = root_ / "images" / id;
    std::filesystem::create_directories(dir / "masks");
    if (!std::filesystem::exists(dir / "image.png")) write_file_atomic(dir / "image.png", png);
    return id;
  }

  std::string put_mask(const std::string& image_id, std::span<const std::uint8_t> png) {
    const Image img = load_image(image_id);
    const Image mask = decode_png(png).image;
    require(mask.width() == img.width() && mask.height() == img.height(), ErrorCode::shape_mismatch,
            "mask " + mask.shape_string() + " does not match image " + img.shape_string());
    const std::string id = "mask-" + sha256_hex(png).substr(0, 16);
    const auto path = root_ / "images" / image_id / "masks" / (id + ".png");
    if (!std::filesystem::exists(path)) write_file_atomic(path, png);
    return id;
  }

  std::filesystem::path image_path(const std::string& image_id) const {
    require(safe_id(image_id), ErrorCode::invalid_argument, "malformed image id");
    const auto p = root_ / "images" / image_id / "image.png";
    require(std::filesystem::exists(p), ErrorCode::not_found, "unknown image " + image_id);
    return p;
  }
  std::filesystem::path mask_path(const std::string& image_id, const std::string& mask_id) const {
    require(safe_id(mask_id), ErrorCode::invalid_argument, "malformed mask id");
    const auto p = root_ / "images" / image_id / "masks" / (mask_id + ".png");
    require(std::filesystem::exists(p), ErrorCode::not_found, "unknown mask " + mask_id);
    return p;
  }
  Image load_image(const std::string& image_id) const { return read_png(image_path(image_id)); }
  RegionMask load_mask(const std::string& image_id, const std::string& mask_id) const {
    return RegionMask::from_image(read_png(mask_path(image_id, mask_id)), image_id);
  }
  std::string file_digest(const std::filesystem::path& p) const { return sha256_hex(read_file_bytes(p)); }

  std::filesystem::path job_dir(const std::string& job_id) const {
    require(safe_id(job_id), ErrorCode::invalid_argument, "malformed job id");
    return root_ / "jobs" / job_id;
  }
  void save_job(const std::string& job_id, const nlohmann::json& j) {
    std::filesystem::create_directories(job_dir(job_id));
    write_text_atomic(job_dir(job_id) / "job.json", j.dump(2));
  }
  std::optional<nlohmann::json> load_job(const std::string& job_id) const {
    const auto p = job_dir(job_id) / "job.json";
    if (!std::filesystem::exists(p)) return std::nullopt;
    return nlohmann::json::parse(read_text(p));
  }

  // Material maps are content-addressed by their digest.
  std::string put_material(const MaterialMaps& m) {
    const std::string id = "mat-" + material_digest(m).substr(0, 16);
    const auto dir = root_ / "materials" / id;
    if (!std::filesystem::exists(dir / "roughness.png")) {
      const auto tmp = root_ / "materials" / (id + ".tmp" + std::to_string(tmp_counter_.fetch_add(1)));
      write_material(tmp, m);
      std::error_code ec;
      std::filesystem::rename(tmp, dir, ec);
      if (ec) std::filesystem::remove_all(tmp);  // another writer won the race
    }
    return id;
  }
  std::filesystem::path material_file(const std::string& material_id, const std::string& map) const {
    require(safe_id(material_id), ErrorCode::invalid_argument, "malformed material id");
    require(map == "albedo" || map == "normal" || map == "roughness", ErrorCode::invalid_argument,
            "unknown map '" + map + "'");
    const auto p = root_ / "materials" / material_id / (map + ".png");
    require(std::filesystem::exists(p), ErrorCode::not_found, "unknown material " + material_id);
    return p;
  }
  MaterialMaps load_material(const std::string& material_id) const {
    return read_material(material_file(material_id, "albedo").parent_path());
  }

  std::optional<std::string> cache_lookup(const std::string& key) const {
    const auto p = root_ / "cache" / (key + ".json");
    if (!std::filesystem::exists(p)) return std::nullopt;
    return nlohmann::json::parse(read_text(p)).at("job_id").get<std::string>();
  }
  void cache_store(const std::string& key, const std::string& job_id) {
    write_text_atomic(root_ / "cache" / (key + ".json"), nlohmann::json{{"job_id", job_id}}.dump());
  }

 private:
  std::filesystem::path root_;
  std::atomic<unsigned> tmp_counter_{0};
};

// ---------------------------------------------------------------------------
// Job manager
// ---------------------------------------------------------------------------

struct JobRequest {
  std::string image_id;
  std::vector<std::string> mask_ids;
  ExtractionConfig config;
};

struct SubmitResult {
  std::string job_id;
  bool cache_hit = false;
};

struct ManagerOptions {
  int workers = 2;
};

class JobManager {
 public:
  JobManager(JobStore& store, std::shared_ptr<const DecompositionModel> model,
             std::shared_ptr<TextureBackend> backend, std::shared_ptr<TextureBackend> fallback = nullptr,
             ManagerOptions opt = {})
      : store_(store), model_(std::move(model)), backend_(std::move(backend)),
        fallback_(std::move(fallback)) {
    require(model_ && backend_, ErrorCode::precondition, "job manager needs a model and a backend");
    require(opt.workers >= 1, ErrorCode::invalid_argument, "workers must be >= 1");
    for (int i = 0; i < opt.workers; ++i) workers_.emplace_back([this] { work(); });
  }

  ~JobManager() { shutdown(); }

  void shutdown() {
    {
      std::lock_guard lock(mu_);
      if (stopping_) return;
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_)
      if (t.joinable()) t.join();
  }

  JobStore& store() { return store_; }
  const DecompositionModel& model() const { return *model_; }

  std::string cache_key(const JobRequest& req) const {
    Sha256 h;
    h.update(store_.file_digest(store_.image_path(req.image_id)));
    for (const auto& m : req.mask_ids) h.update(store_.file_digest(store_.mask_path(req.image_id, m)));
    h.update(config_digest(req.config)).update_u64(req.config.seed);
    h.update(model_->digest()).update(backend_->id());
    return h.hex();
  }

  SubmitResult submit(const JobRequest& req) {
    require(!req.mask_ids.empty(), ErrorCode::invalid_argument, "at least one mask id is required");
    req.config.validate();
    store_.image_path(req.image_id);
    for (const auto& m : req.mask_ids) store_.mask_path(req.image_id, m);
    const std::string key = cache_key(req);
    std::lock_guard lock(mu_);
    if (auto hit = store_.cache_lookup(key)) return {*hit, true};
    const std::string id = "job-" + key.substr(0, 12) + "-" + random_suffix();
    auto job = std::make_shared<Job>();
    job->id = id;
    job->request = req;
    job->key = key;
    job->created = job->updated = utc_timestamp();
    jobs_[id] = job;
    persist(*job);
    queue_.push_back(id);
    cv_.notify_one();
    return {id, false};
  }

  nlohmann::json status(const std::string& job_id) {
    std::lock_guard lock(mu_);
    if (auto it = jobs_.find(job_id); it != jobs_.end()) return it->second->json;
    if (auto j = store_.load_job(job_id)) return *j;
    fail(ErrorCode::not_found, "unknown job " + job_id);
  }

  // Best effort: queued and concept-learning jobs fail with "cancelled";
  // later stages and finished jobs are left untouched.
  nlohmann::json cancel(const std::string& job_id) {
    std::lock_guard lock(mu_);
    const auto it = jobs_.find(job_id);
    if (it == jobs_.end()) {
      if (auto j = store_.load_job(job_id)) return *j;
      fail(ErrorCode::not_found, "unknown job " + job_id);
    }
    Job& job = *it->second;
    if (job.stage == Stage::queued) {
      queue_.erase(std::remove(queue_.begin(), queue_.end(), job_id), queue_.end());
      job.stage = Stage::failed;
      job.error = "cancelled";
      persist(job);
    } else if (job.stage == Stage::learning_concept) {
      job.cancel = true;
    }
    return job.json;
  }

  nlohmann::json select(const std::string& job_id, const std::string& region_id, std::size_t index) {
    std::lock_guard lock(mu_);
    const auto it = jobs_.find(job_id);
    require(it != jobs_.end(), ErrorCode::not_found, "unknown or unloaded job " + job_id);
    Job& job = *it->second;
    require(job.stage == Stage::done && job.result, ErrorCode::precondition,
            "job " + job_id + " is not done");
    RegionResult* region = nullptr;
    for (auto& r : job.result->regions)
      if (r.region_id == region_id) region = &r;
    require(region != nullptr, ErrorCode::not_found, "unknown region " + region_id);
    override_selection(*region, index, *model_);
    persist(job);
    return job.json;
  }

  // Blocks until the job leaves the queue and working stages or the timeout
  // passes; returns the final status.
  nlohmann::json wait(const std::string& job_id, std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    std::unique_lock lock(mu_);
    auto finished = [&] {
      const auto it = jobs_.find(job_id);
      return it == jobs_.end() || it->second->stage == Stage::done || it->second->stage == Stage::failed;
    };
    done_cv_.wait_until(lock, deadline, finished);
    if (auto it = jobs_.find(job_id); it != jobs_.end()) return it->second->json;
    lock.unlock();
    return status(job_id);
  }

 private:
  struct Job {
    std::string id, key;
    JobRequest request;
    Stage stage = Stage::queued;
    double progress = 0.0;
    std::string error;
    std::string created, updated;
    std::optional<PaletteResult> result;
    std::atomic<bool> cancel{false};
    nlohmann::json json;
  };

  static std::string random_suffix() {
    static std::mt19937_64 rng(std::random_device{}());
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(rng()));
    return buf;
  }

  // Writes region artifacts and job.json; called with mu_ held.
  void persist(Job& job) {
    job.updated = utc_timestamp();
    nlohmann::json regions = nlohmann::json::array();
    if (job.result) {
      for (const auto& r : job.result->regions) {
        nlohmann::json rj = region_provenance(r, job.request.config, job.result->model_digest);
        if (r.material) {
          const std::string mid = store_.put_material(*r.material);
          rj["material_id"] = mid;
          for (const char* m : {"albedo", "normal", "roughness"})
            rj["maps"][m] = "/api/materials/" + mid + "/" + m + ".png";
        }
        for (std::size_t i = 0; i < r.candidates.size(); ++i) {
          const auto path = store_.job_dir(job.id) / r.region_id / ("candidate-" + std::to_string(i) + ".png");
          if (!std::filesystem::exists(path)) {
            std::filesystem::create_directories(path.parent_path());
            write_file_atomic(path, encode_png(resize_bilinear(r.candidates[i].image, 128, 128), 8));
          }
          rj["candidates"][i]["thumbnail"] =
              "/api/jobs/" + job.id + "/regions/" + r.region_id + "/candidates/" + std::to_string(i) + ".png";
        }
        regions.push_back(std::move(rj));
      }
    }
    job.json = {{"job_id", job.id},
                {"image_id", job.request.image_id},
                {"region_ids", job.request.mask_ids},
                {"stage", to_string(job.stage)},
                {"progress", job.progress},
                {"regions", regions},
                {"config", to_json(job.request.config)},
                {"created", job.created},
                {"updated", job.updated}};
    if (!job.error.empty()) job.json["error"] = job.error;
    store_.save_job(job.id, job.json);
  }

  void work() {
    for (;;) {
      std::shared_ptr<Job> job;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        job = jobs_.at(queue_.front());
        queue_.pop_front();
      }
      run(*job);
      done_cv_.notify_all();
    }
  }

  void run(Job& job) {
    try {
      const Image image = store_.load_image(job.request.image_id);
      std::vector<RegionMask> masks;
      for (const auto& m : job.request.mask_ids) masks.push_back(store_.load_mask(job.request.image_id, m));
      ExtractionContext ctx;
      ctx.backend = backend_.get();
      ctx.fallback = fallback_.get();
      ctx.model = model_.get();
      ctx.cancel = &job.cancel;
      ctx.on_stage = [&](Stage s, double p, const PaletteResult&) {
        std::lock_guard lock(mu_);
        if (s == Stage::done || s == Stage::failed) return;  // final state set below
        if (static_cast<int>(s) > static_cast<int>(job.stage)) job.stage = s;
        job.progress = std::max(job.progress, p);
        persist(job);
      };
      PaletteResult result = extract_palette(image, masks, job.request.mask_ids, job.request.config, ctx);
      std::lock_guard lock(mu_);
      job.result = std::move(result);
      job.progress = 1.0;
      job.stage = job.result->stage;
      job.error = job.result->error;
      persist(job);
      if (job.stage == Stage::done) store_.cache_store(job.key, job.id);
    } catch (const std::exception& e) {
      std::lock_guard lock(mu_);
      job.stage = Stage::failed;
      job.error = e.what();
      persist(job);
    }
  }

  JobStore& store_;
  std::shared_ptr<const DecompositionModel> model_;
  std::shared_ptr<TextureBackend> backend_, fallback_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  std::deque<std::string> queue_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::vector<std::thread> workers_;
  bool stopping_ = false;
};

}  // namespace matpal
