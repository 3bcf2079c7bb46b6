// matpal command-line entry points. Exit codes: 0 success, 1 usage error,
// 2 runtime failure.

#include <Eigen/Dense>

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "matpal.hpp"

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;
using namespace matpal;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Collects flag -> JSON-pointer overlays for one subcommand; only flags the
// user actually passed are written over the config file.
class Binder {
 public:
  explicit Binder(CLI::App* app) : app_(app) {}

  template <class T>
  CLI::Option* opt(const std::string& flag, const std::string& pointer, const std::string& help) {
    auto v = std::make_shared<T>();
    CLI::Option* o = app_->add_option(flag, *v, help);
    apply_.push_back([v, o, pointer](json& j) {
      if (o->count() > 0) j[json::json_pointer(pointer)] = *v;
    });
    return o;
  }

  CLI::Option* flag(const std::string& flag, const std::string& pointer, json value, const std::string& help) {
    CLI::Option* o = app_->add_flag(flag, help);
    apply_.push_back([o, pointer, value](json& j) {
      if (o->count() > 0) j[json::json_pointer(pointer)] = value;
    });
    return o;
  }

  void apply(json& j) const {
    for (const auto& f : apply_) f(j);
  }

 private:
  CLI::App* app_;
  std::vector<std::function<void(json&)>> apply_;
};

struct Command {
  CLI::App* app = nullptr;
  std::unique_ptr<Binder> binder;
  std::string config_path;
  std::function<int(const RunConfig&)> run;
};

std::string need_path(const RunConfig& c, const std::string& key, const std::string& flag) {
  const std::string p = c.path(key);
  if (p.empty()) throw UsageError("missing required option " + flag);
  return p;
}

std::vector<std::string> path_list(const RunConfig& c, const std::string& key) {
  if (!c.paths.contains(key)) return {};
  const auto& v = c.paths[key];
  if (v.is_string()) return {v.get<std::string>()};
  return v.get<std::vector<std::string>>();
}

void print_json(const json& j) { std::cout << j.dump(2) << "\n"; }

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file_bytes(p, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

fs::path output_dir_of(const fs::path& file) {
  return file.has_parent_path() ? file.parent_path() : fs::path(".");
}

TrainingConfig training_config(const RunConfig& c, TrainingConfig base) {
  from_json(c.training, base);
  base.validate();
  return base;
}

DecompositionModel load_model(const RunConfig& c) {
  const std::string ck = c.path("checkpoint");
  if (!ck.empty()) return load_checkpoint(ck);
  std::cerr << "no checkpoint given; using the cached default model under "
            << model_cache_dir().string() << "\n";
  return default_model();
}

std::shared_ptr<TextureBackend> make_backend(const RunConfig& c) {
  if (c.backend == "remote") {
    if (c.backend_url.empty()) throw UsageError("--backend remote needs --backend-url");
    RemoteOptions o;
    o.base_url = c.backend_url;
    return std::make_shared<RemoteBackend>(o);
  }
  return std::make_shared<ProceduralBackend>();
}

// Material folders (albedo.png + normal.png + roughness.png) under root,
// keyed by relative path; a dataset directory maps by sample id.
std::map<std::string, MaterialMaps> collect_materials(const fs::path& root) {
  std::map<std::string, MaterialMaps> out;
  if (fs::exists(root / "manifest.json")) {
    for (auto& s : load_dataset(root).source) out[s.id] = std::move(s.maps);
    return out;
  }
  if (fs::exists(root / "albedo.png")) {
    out[""] = read_material(root);
    return out;
  }
  require(fs::is_directory(root), ErrorCode::io, "not a directory: " + root.string());
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() == "albedo.png")
      out[fs::relative(e.path().parent_path(), root).generic_string()] = read_material(e.path().parent_path());
  require(!out.empty(), ErrorCode::empty_library, "no material folders under " + root.string());
  return out;
}

MaterialsByClass collect_by_class(const fs::path& root) {
  MaterialsByClass out;
  if (fs::exists(root / "manifest.json")) {
    for (auto& s : load_dataset(root).source) out[s.class_label].push_back(std::move(s.maps));
    return out;
  }
  require(fs::is_directory(root), ErrorCode::io, "not a directory: " + root.string());
  std::vector<fs::path> classes;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) classes.push_back(e.path());
  std::sort(classes.begin(), classes.end());
  for (const auto& cdir : classes)
    for (auto& [_, m] : collect_materials(cdir)) out[cdir.filename().string()].push_back(std::move(m));
  require(!out.empty(), ErrorCode::empty_library, "no classes under " + root.string());
  return out;
}

EvalReport compare_trees(const std::map<std::string, MaterialMaps>& pred,
                         const std::map<std::string, MaterialMaps>& truth) {
  EvalReport r;
  r.albedo.ssim = r.normals.ssim = r.roughness.ssim = 0.0;
  for (const auto& [k, t] : truth) {
    const auto it = pred.find(k);
    require(it != pred.end(), ErrorCode::not_found, "prediction lacks material '" + k + "'");
    require_same_material_shape(it->second, t);
    accumulate_scores(it->second, t, r);
  }
  const double n = static_cast<double>(truth.size());
  for (auto* m : {&r.albedo, &r.normals, &r.roughness}) m->mse /= n, m->ssim /= n;
  r.sample_count = truth.size();
  return r;
}

std::string loss_curve_svg(const std::vector<double>& loss) {
  const double w = 640, h = 320, pad = 40;
  double lo = loss.empty() ? 0 : *std::min_element(loss.begin(), loss.end());
  double hi = loss.empty() ? 1 : *std::max_element(loss.begin(), loss.end());
  if (hi <= lo) hi = lo + 1e-12;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << pad << "\" y=\"20\" font-size=\"12\">training loss (min " << format_fixed(lo, 5)
     << ", max " << format_fixed(hi, 5) << ")</text>\n<polyline fill=\"none\" stroke=\"black\" points=\"";
  for (std::size_t i = 0; i < loss.size(); ++i) {
    const double x = pad + (w - 2 * pad) * (loss.size() > 1 ? double(i) / (loss.size() - 1) : 0.0);
    const double y = h - pad - (h - 2 * pad) * (loss[i] - lo) / (hi - lo);
    os << x << "," << y << " ";
  }
  os << "\"/>\n</svg>\n";
  return os.str();
}

void write_training_outputs(const fs::path& out, const DecompositionModel& model, const RunConfig& c,
                            const std::vector<std::string>& inputs, const TrainingConfig& tc) {
  save_checkpoint(model, out, {{"training", tc}});
  std::string csv = "step,loss\n";
  for (std::size_t i = 0; i < model.loss_log.size(); ++i)
    csv += std::to_string(i) + "," + format_fixed(model.loss_log[i], 8) + "\n";
  write_text(out / "loss_curve.csv", csv);
  write_text(out / "loss_curve.svg", loss_curve_svg(model.loss_log));
  write_provenance(out, provenance(c, inputs, {{"training", tc}, {"model_digest", model.digest()}}));
}

// ---------------------------------------------------------------------------

int run_extract(const RunConfig& c) {
  const std::string image_path = need_path(c, "image", "--image");
  const auto mask_paths = path_list(c, "masks");
  if (mask_paths.empty()) throw UsageError("missing required option --mask");
  const fs::path out = need_path(c, "out", "--out");
  const Image image = read_png(image_path);
  std::vector<RegionMask> masks;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < mask_paths.size(); ++i) {
    masks.push_back(RegionMask::from_image(read_png(mask_paths[i])));
    ids.push_back("region-" + std::to_string(i));
  }
  ExtractionConfig cfg = extraction_config_from_json(c.extraction);
  cfg.seed = c.seed;
  const DecompositionModel model = load_model(c);
  auto backend = make_backend(c);
  std::shared_ptr<TextureBackend> fallback;
  if (c.procedural_fallback && c.backend != "procedural") fallback = std::make_shared<ProceduralBackend>();
  ExtractionContext ctx;
  ctx.backend = backend.get();
  ctx.fallback = fallback.get();
  ctx.model = &model;
  ctx.on_stage = [](Stage s, double p, const PaletteResult&) {
    std::cerr << "[" << to_string(s) << "] " << format_fixed(100 * p, 0) << "%\n";
  };
  const PaletteResult result = extract_palette(image, masks, ids, cfg, ctx);
  json regions = json::array();
  for (const auto& r : result.regions) {
    json rj = region_provenance(r, cfg, result.model_digest);
    if (r.material) {
      const fs::path dir = masks.size() == 1 ? out : out / r.region_id;
      write_material(dir, *r.material);
      rj["output"] = dir.string();
      if (masks.size() > 1) write_provenance(dir, provenance(c, {"image", "masks", "checkpoint"}, {{"region", rj}}));
    }
    regions.push_back(std::move(rj));
  }
  const json prov = provenance(c, {"image", "masks", "checkpoint"},
                               {{"stage", to_string(result.stage)}, {"regions", regions}, {"error", result.error}});
  write_provenance(out, prov);
  print_json({{"stage", to_string(result.stage)}, {"out", out.string()}, {"error", result.error}});
  return result.stage == Stage::done ? 0 : 2;
}

int run_train_source(const RunConfig& c) {
  const auto data = load_dataset(need_path(c, "data", "--data"));
  const fs::path out = need_path(c, "out", "--out");
  const TrainingConfig tc = training_config(c, TrainingConfig{});
  const auto model = train_source(data.source, tc, c.seed, ArchitectureConfig{}, [&](int step, double loss) {
    if (step % 50 == 0) std::cerr << "step " << step << " loss " << format_fixed(loss, 5) << "\n";
  });
  write_training_outputs(out, model, c, {"data"}, tc);
  print_json({{"checkpoint", out.string()}, {"digest", model.digest()}, {"final_loss", model.loss_log.back()}});
  return 0;
}

int run_pseudo_label(const RunConfig& c) {
  const fs::path data_dir = need_path(c, "data", "--data");
  const fs::path out = need_path(c, "out", "--out");
  if (c.path("checkpoint").empty()) throw UsageError("missing required option --checkpoint");
  const auto model = load_model(c);
  auto data = load_dataset(data_dir);
  require(!data.target.empty(), ErrorCode::invalid_input, "dataset has no target textures: " + data_dir.string());
  const auto labeled = pseudo_label(model, std::move(data.target));
  DatasetManifest m = data.manifest;
  for (auto& s : m.samples) s.maps.reset(), s.pseudo.reset();
  save_dataset(out, m, {}, labeled);
  write_provenance(out, provenance(c, {"data", "checkpoint"}, {{"model_digest", model.digest()}}));
  print_json({{"dataset", out.string()}, {"count", labeled.size()}, {"model_digest", model.digest()}});
  return 0;
}

int run_adapt(const RunConfig& c) {
  if (c.path("checkpoint").empty()) throw UsageError("missing required option --checkpoint");
  const auto source_model = load_model(c);
  const auto source = load_dataset(need_path(c, "source", "--source"));
  const auto target = load_dataset(need_path(c, "target", "--target"));
  const fs::path out = need_path(c, "out", "--out");
  const TrainingConfig tc = training_config(c, default_adapt_config());
  auto model = adapt(source_model, source.source, target.target, tc, c.seed, [&](int step, double loss) {
    if (step % 50 == 0) std::cerr << "step " << step << " loss " << format_fixed(loss, 5) << "\n";
  });
  model.dataset_digests.push_back(target.manifest.digest());
  write_training_outputs(out, model, c, {"checkpoint", "source", "target"}, tc);
  print_json({{"checkpoint", out.string()}, {"digest", model.digest()}});
  return 0;
}

int run_evaluate(const RunConfig& c) {
  EvalReport ours, base;
  std::string baseline_name;
  if (!c.path("pred").empty()) {
    const auto truth = collect_materials(need_path(c, "truth", "--truth"));
    ours = compare_trees(collect_materials(c.path("pred")), truth);
    const std::string b = c.path("baseline", c.path("pred"));
    base = b == c.path("pred") ? ours : compare_trees(collect_materials(b), truth);
    baseline_name = b;
  } else {
    if (c.path("checkpoint").empty()) throw UsageError("evaluate needs --pred/--truth or --checkpoint/--data");
    const auto data = load_dataset(need_path(c, "data", "--data"));
    const int views = c.option("views", 1);
    ours = evaluate(load_model(c), data.source, c.seed, views);
    const std::string b = c.path("baseline_checkpoint");
    base = b.empty() ? ours : evaluate(load_checkpoint(b), data.source, c.seed, views);
    baseline_name = b.empty() ? c.path("checkpoint") : b;
  }
  ours.delta_percent = delta_percent(ours, base);
  ours.baseline = baseline_name;
  const json report = to_json(ours);
  const std::string table = eval_table({{"baseline", base}, {"ours", ours}});
  if (const std::string out = c.path("out"); !out.empty()) {
    write_text(fs::path(out) / "report.json", report.dump(2));
    write_text(fs::path(out) / "table.txt", table);
    write_provenance(out, provenance(c, {"pred", "truth", "baseline", "checkpoint", "baseline_checkpoint", "data"}));
  }
  std::cerr << table;
  print_json(report);
  return 0;
}

int run_resemblance(const RunConfig& c) {
  const auto extracted = collect_by_class(need_path(c, "extracted", "--extracted"));
  const auto library = collect_by_class(need_path(c, "library", "--library"));
  std::optional<MaterialsByClass> lower;
  if (!c.path("lower").empty()) lower = collect_by_class(c.path("lower"));
  const auto report = resemblance_protocol(extracted, library, c.option("pairs", 100), c.seed,
                                           lower ? &*lower : nullptr);
  const json j = to_json(report);
  if (const std::string out = c.path("out"); !out.empty()) {
    write_text(fs::path(out) / "report.json", j.dump(2));
    write_text(fs::path(out) / "table.txt", resemblance_table(report));
    write_provenance(out, provenance(c, {"extracted", "library", "lower"}));
  }
  std::cerr << resemblance_table(report);
  print_json(j);
  return 0;
}

int run_render(const RunConfig& c) {
  const MaterialMaps m = read_material(need_path(c, "material", "--material"));
  const fs::path out = need_path(c, "out", "--out");
  const int views = c.option("views", 0);
  json written = json::array();
  if (views > 0) {
    const auto configs = sample_lighting(c.seed, views);
    for (std::size_t i = 0; i < configs.size(); ++i) {
      const fs::path p = out / ("render_" + std::to_string(i) + ".png");
      fs::create_directories(out);
      write_png(p, gamma_encode(render(m, configs[i])));
      written.push_back(p.string());
    }
    write_provenance(out, provenance(c, {"material"}, {{"renders", written}}));
  } else {
    LightingConfig cfg;
    cfg.light_dir = direction_from_angles(c.option("light_az", 45.0), c.option("light_el", 60.0));
    cfg.view_dir = direction_from_angles(c.option("view_az", 0.0), c.option("view_el", 90.0));
    cfg.validate();
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_png(out, gamma_encode(render(m, cfg)));
    written.push_back(out.string());
    write_provenance(output_dir_of(out), provenance(c, {"material"}, {{"renders", written}}));
  }
  print_json({{"renders", written}});
  return 0;
}

int run_tile(const RunConfig& c) {
  const Image in = read_png(need_path(c, "in", "--in"));
  const fs::path out = need_path(c, "out", "--out");
  const auto before = seam_score(in);
  const Image tiled = make_tileable(in, c.seed);
  const auto after = seam_score(tiled);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_png(out, tiled);
  const json report{{"seam_before", before.combined}, {"seam_after", after.combined},
                    {"tileable", after.combined <= kTileableSeamThreshold}};
  write_provenance(output_dir_of(out), provenance(c, {"in"}, report));
  print_json(report);
  return 0;
}

int run_gen_synthetic(const RunConfig& c) {
  const fs::path out = need_path(c, "out", "--out");
  const int n = c.option("n", 64);
  const int size = c.option("size", 32);
  const std::string shift = c.option<std::string>("shift", "none");
  if (shift != "none" && shift != "shifted") throw UsageError("--shift must be 'none' or 'shifted'");
  ShiftSpec spec;
  spec.hue_degrees = c.option("hue", spec.hue_degrees);
  spec.extra_cycles = c.option("cycles", spec.extra_cycles);
  std::vector<std::string> ontology = default_synthetic_ontology();
  if (c.options.contains("ontology")) ontology = c.options["ontology"].get<std::vector<std::string>>();
  const auto ds = gen_synthetic(n, ontology, shift == "none" ? DomainShift::none : DomainShift::shifted,
                                c.seed, size, spec);
  if (c.option("as_textures", false)) {
    const auto textures = as_target_textures(ds.samples, derive_seed(c.seed, "textures"));
    DatasetManifest m = ds.manifest;
    for (auto& s : m.samples) s.maps.reset(), s.domain = Domain::target;
    save_dataset(out, m, {}, textures);
  } else {
    save_dataset(out, ds.manifest, ds.samples, {});
  }
  write_provenance(out, provenance(c, {}, {{"dataset_digest", synthetic_digest(ds)}}));
  print_json({{"dataset", out.string()}, {"count", n}, {"digest", synthetic_digest(ds)}});
  return 0;
}

int run_texsd_plan(const RunConfig& c) {
  const std::string classes_path = c.path("classes", (data_dir() / "texsd_classes.txt").string());
  const fs::path out = need_path(c, "out", "--out");
  const auto classes = read_lines(classes_path);
  std::vector<std::string> templates;
  for (const auto& t : generate_templates()) templates.push_back(t.text);
  const auto rows = texsd_plan(classes, templates, c.option("per_class", 70), c.seed,
                               c.option<std::size_t>("first_template", kDefaultGenerateTemplate),
                               c.option("resolution", 1024));
  write_text(out, plan_to_jsonl(rows));
  RunConfig cc = c;
  cc.paths["classes"] = classes_path;
  write_provenance(output_dir_of(out), provenance(cc, {"classes"}, {{"rows", rows.size()}, {"plan_digest", plan_digest(rows)}}));
  print_json({{"plan", out.string()}, {"rows", rows.size()}, {"digest", plan_digest(rows)}});
  return 0;
}

int run_serve(const RunConfig& c) {
  ServiceOptions o = ServiceOptions::from_env();
  if (!c.path("data_dir").empty()) o.data_dir = c.path("data_dir");
  if (!c.path("checkpoint").empty()) o.checkpoint = c.path("checkpoint");
  if (!c.backend_url.empty()) o.backend_url = c.backend_url;
  o.port = c.option("port", o.port);
  o.host = c.option<std::string>("host", o.host);
  o.workers = c.option("workers", o.workers);
  o.procedural_fallback = o.procedural_fallback || c.procedural_fallback;
  auto model = std::make_shared<const DecompositionModel>(
      o.checkpoint.empty() ? default_model() : load_checkpoint(o.checkpoint));
  std::shared_ptr<TextureBackend> backend, fallback;
  if (o.backend_url.empty()) {
    backend = std::make_shared<ProceduralBackend>();
  } else {
    RemoteOptions ro;
    ro.base_url = o.backend_url;
    backend = std::make_shared<RemoteBackend>(ro);
    if (o.procedural_fallback) fallback = std::make_shared<ProceduralBackend>();
  }
  JobStore store(o.data_dir);
  JobManager jobs(store, model, backend, fallback, ManagerOptions{o.workers});
  Service service(jobs);
  std::cerr << "serving on http://" << o.host << ":" << o.port << " (data " << o.data_dir.string() << ")\n";
  service.listen(o.host, o.port);
  return 0;
}

// ---------------------------------------------------------------------------

void add_training_flags(Binder& b) {
  b.opt<int>("--steps", "/training/steps", "optimisation steps");
  b.opt<int>("--batch-size", "/training/batch_size", "batch size");
  b.opt<double>("--lr", "/training/step_size", "RMSProp step size");
  b.opt<double>("--lambda-reg", "/training/lambda_reg", "weight of the map regression loss");
  b.opt<int>("--views", "/training/view_count", "lighting configurations in the rendering loss");
}

void add_common(Binder& b) { b.opt<std::uint64_t>("--seed", "/seed", "random seed"); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"matpal: material palette extraction and SVBRDF decomposition"};
  app.require_subcommand(1);
  std::map<std::string, Command> commands;

  auto add = [&](const std::string& name, const std::string& help, std::function<int(const RunConfig&)> run) -> Binder& {
    Command& cmd = commands[name];
    cmd.app = app.add_subcommand(name, help);
    cmd.binder = std::make_unique<Binder>(cmd.app);
    cmd.app->add_option("--config", cmd.config_path, "run config JSON; flags override it")->check(CLI::ExistingFile);
    cmd.run = std::move(run);
    add_common(*cmd.binder);
    return *cmd.binder;
  };

  {
    Binder& b = add("extract", "extract one material per region mask", run_extract);
    b.opt<std::string>("--image", "/paths/image", "input image (PNG)");
    b.opt<std::vector<std::string>>("--mask", "/paths/masks", "region mask PNG (repeatable)");
    b.opt<std::string>("--out", "/paths/out", "output directory");
    b.opt<std::string>("--checkpoint", "/paths/checkpoint", "decomposition checkpoint")->envname("MATPAL_CHECKPOINT");
    b.opt<std::string>("--backend", "/backend", "procedural | remote")->check(CLI::IsMember({"procedural", "remote"}));
    b.opt<std::string>("--backend-url", "/backend_url", "remote texture service URL")->envname("MATPAL_BACKEND_URL");
    b.flag("--fallback", "/procedural_fallback", true, "fall back to the procedural backend on remote errors");
    b.opt<int>("--resolution", "/extraction/resolution", "generated texture resolution");
    b.opt<int>("--candidates", "/extraction/candidates", "candidates per region");
    b.opt<std::size_t>("--template", "/extraction/template_index", "generation prompt template index");
    b.flag("--no-tileable", "/extraction/tileable", false, "skip seam removal");
    b.opt<int>("--c-x", "/extraction/c_x", "crop side in image pixels");
    b.opt<int>("--c-in", "/extraction/c_in", "crop side fed to concept learning");
    b.opt<int>("--max-crops", "/extraction/max_crops", "crops per region");
  }
  {
    Binder& b = add("train-source", "train the decomposition network on source materials", run_train_source);
    b.opt<std::string>("--data", "/paths/data", "dataset directory or material library");
    b.opt<std::string>("--out", "/paths/out", "checkpoint directory");
    add_training_flags(b);
  }
  {
    Binder& b = add("pseudo-label", "attach pseudo-maps to target textures", run_pseudo_label);
    b.opt<std::string>("--data", "/paths/data", "target texture dataset");
    b.opt<std::string>("--checkpoint", "/paths/checkpoint", "source checkpoint")->envname("MATPAL_CHECKPOINT");
    b.opt<std::string>("--out", "/paths/out", "output dataset directory");
  }
  {
    Binder& b = add("adapt", "adapt a source model to pseudo-labeled target textures", run_adapt);
    b.opt<std::string>("--checkpoint", "/paths/checkpoint", "source checkpoint")->envname("MATPAL_CHECKPOINT");
    b.opt<std::string>("--source", "/paths/source", "source dataset");
    b.opt<std::string>("--target", "/paths/target", "pseudo-labeled target dataset");
    b.opt<std::string>("--out", "/paths/out", "checkpoint directory");
    b.opt<double>("--target-fraction", "/training/target_fraction", "share of target items per batch");
    add_training_flags(b);
  }
  {
    Binder& b = add("evaluate", "score predicted maps (MSE, SSIM, relative improvement)", run_evaluate);
    b.opt<std::string>("--pred", "/paths/pred", "predicted material tree");
    b.opt<std::string>("--truth", "/paths/truth", "ground-truth material tree");
    b.opt<std::string>("--baseline", "/paths/baseline", "baseline material tree (default: --pred)");
    b.opt<std::string>("--checkpoint", "/paths/checkpoint", "model to evaluate");
    b.opt<std::string>("--baseline-checkpoint", "/paths/baseline_checkpoint", "baseline model");
    b.opt<std::string>("--data", "/paths/data", "dataset with ground-truth maps");
    b.opt<int>("--views", "/options/views", "renders per sample");
    b.opt<std::string>("--out", "/paths/out", "report directory");
  }
  {
    Binder& b = add("resemblance", "class-level perceptual resemblance with bounds", run_resemblance);
    b.opt<std::string>("--extracted", "/paths/extracted", "extracted materials by class");
    b.opt<std::string>("--library", "/paths/library", "reference library by class");
    b.opt<std::string>("--lower", "/paths/lower", "unconditioned baseline by class");
    b.opt<int>("--pairs", "/options/pairs", "pairs per class");
    b.opt<std::string>("--out", "/paths/out", "report directory");
  }
  {
    Binder& b = add("render", "render a material under a light and view", run_render);
    b.opt<std::string>("--material", "/paths/material", "material directory");
    b.opt<std::string>("--out", "/paths/out", "output PNG (or directory with --views)");
    b.opt<double>("--light-az", "/options/light_az", "light azimuth, degrees");
    b.opt<double>("--light-el", "/options/light_el", "light elevation, degrees");
    b.opt<double>("--view-az", "/options/view_az", "view azimuth, degrees");
    b.opt<double>("--view-el", "/options/view_el", "view elevation, degrees");
    b.opt<int>("--views", "/options/views", "render the seeded training lighting set instead");
  }
  {
    Binder& b = add("tile", "make an image tileable", run_tile);
    b.opt<std::string>("--in", "/paths/in", "input PNG");
    b.opt<std::string>("--out", "/paths/out", "output PNG");
  }
  {
    Binder& b = add("gen-synthetic", "write a procedural ground-truth dataset", run_gen_synthetic);
    b.opt<std::string>("--out", "/paths/out", "dataset directory");
    b.opt<int>("--n", "/options/n", "number of materials");
    b.opt<int>("--size", "/options/size", "map side in pixels");
    b.opt<std::string>("--shift", "/options/shift", "none | shifted");
    b.opt<double>("--hue", "/options/hue", "hue rotation of the shifted domain, degrees");
    b.opt<int>("--cycles", "/options/cycles", "extra pattern cycles of the shifted domain");
    b.opt<std::vector<std::string>>("--ontology", "/options/ontology", "pattern classes");
    b.flag("--as-textures", "/options/as_textures", true, "write single renders without maps");
  }
  {
    Binder& b = add("texsd-plan", "write a prompt-dataset generation plan (JSONL)", run_texsd_plan);
    b.opt<std::string>("--classes", "/paths/classes", "class list, one per line");
    b.opt<std::string>("--out", "/paths/out", "output JSONL");
    b.opt<int>("--per-class", "/options/per_class", "rows per class");
    b.opt<std::size_t>("--first-template", "/options/first_template", "first template index");
    b.opt<int>("--resolution", "/options/resolution", "generation resolution");
  }
  {
    Binder& b = add("serve", "run the HTTP job API", run_serve);
    b.opt<int>("--port", "/options/port", "listen port")->envname("MATPAL_PORT");
    b.opt<std::string>("--host", "/options/host", "listen address");
    b.opt<std::string>("--data-dir", "/paths/data_dir", "job store directory")->envname("MATPAL_DATA_DIR");
    b.opt<std::string>("--checkpoint", "/paths/checkpoint", "decomposition checkpoint")->envname("MATPAL_CHECKPOINT");
    b.opt<std::string>("--backend-url", "/backend_url", "remote texture service URL")->envname("MATPAL_BACKEND_URL");
    b.opt<int>("--workers", "/options/workers", "concurrent jobs");
    b.flag("--fallback", "/procedural_fallback", true, "fall back to the procedural backend on remote errors");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  for (auto& [name, cmd] : commands) {
    if (!cmd.app->parsed()) continue;
    try {
      RunConfig cfg;
      if (!cmd.config_path.empty()) {
        cfg = load_run_config(cmd.config_path);
        if (!cfg.subcommand.empty() && cfg.subcommand != name)
          throw UsageError("config file is for '" + cfg.subcommand + "', not '" + name + "'");
      }
      json j = cfg;
      j["subcommand"] = name;
      cmd.binder->apply(j);
      cfg = j.get<RunConfig>();
      return cmd.run(cfg);
    } catch (const UsageError& e) {
      std::cerr << "usage error: " << e.what() << "\n\n" << cmd.app->help();
      return 1;
    } catch (const Error& e) {
      std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 2;
    }
  }
  return 1;
}
