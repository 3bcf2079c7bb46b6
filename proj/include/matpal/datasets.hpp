#pragma once

// Material-library ingestion, prompt-dataset generation plans, class
// mappings and the synthetic ground-truth generator.

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "matpal/decomposition.hpp"
#include "matpal/error.hpp"
#include "matpal/hashing.hpp"
#include "matpal/patterns.hpp"
#include "matpal/png_io.hpp"
#include "matpal/svbrdf.hpp"

namespace matpal {

enum class Split { train, val, test };
enum class Domain { source, target };

inline std::string to_string(Split s) {
  return s == Split::train ? "train" : s == Split::val ? "val" : "test";
}
inline std::string to_string(Domain d) { return d == Domain::source ? "source" : "target"; }
inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  fail(ErrorCode::invalid_input, "unknown split '" + s + "'");
}
inline Domain domain_from_string(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  fail(ErrorCode::invalid_input, "unknown domain '" + s + "'");
}

struct MapPaths {
  std::string albedo, normal, roughness;
  friend bool operator==(const MapPaths&, const MapPaths&) = default;
};

struct ManifestSample {
  std::string id;
  std::string class_label;
  std::optional<MapPaths> maps;        // ground truth, source samples
  std::optional<std::string> texture;  // target samples
  std::optional<MapPaths> pseudo;
  Split split = Split::train;
  Domain domain = Domain::source;
  friend bool operator==(const ManifestSample&, const ManifestSample&) = default;
};

struct DatasetManifest {
  std::vector<ManifestSample> samples;
  std::vector<std::string> ontology;

  // Order-independent: samples are sorted by id before hashing.
  std::string digest() const {
    std::vector<const ManifestSample*> order;
    for (const auto& s : samples) order.push_back(&s);
    std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->id < b->id; });
    Sha256 h;
    for (const auto& c : ontology) h.update(c).update("\x1f");
    for (auto* s : order) {
      h.update(s->id).update("\x1f").update(s->class_label).update("\x1f");
      h.update(to_string(s->split)).update(to_string(s->domain));
      if (s->maps) h.update(s->maps->albedo).update(s->maps->normal).update(s->maps->roughness);
      if (s->texture) h.update(*s->texture);
      if (s->pseudo) h.update(s->pseudo->albedo).update(s->pseudo->normal).update(s->pseudo->roughness);
      h.update("\x1e");
    }
    return h.hex();
  }

  void validate() const {
    std::set<std::string> ids, classes(ontology.begin(), ontology.end());
    for (const auto& s : samples) {
      require(ids.insert(s.id).second, ErrorCode::invalid_input, "duplicate sample id " + s.id);
      if (s.domain == Domain::source)
        require(s.maps.has_value(), ErrorCode::invalid_input, "source sample " + s.id + " lacks maps");
      require(classes.count(s.class_label) > 0, ErrorCode::invalid_input,
              "class '" + s.class_label + "' of " + s.id + " not in ontology");
    }
  }
};

inline nlohmann::json map_paths_json(const MapPaths& p) {
  return {{"albedo", p.albedo}, {"normal", p.normal}, {"roughness", p.roughness}};
}
inline MapPaths map_paths_from_json(const nlohmann::json& j) {
  return {j.at("albedo").get<std::string>(), j.at("normal").get<std::string>(),
          j.at("roughness").get<std::string>()};
}

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : m.samples) {
    nlohmann::json j{{"id", s.id},
                     {"class_label", s.class_label},
                     {"split", to_string(s.split)},
                     {"domain", to_string(s.domain)}};
    if (s.maps) j["maps"] = map_paths_json(*s.maps);
    if (s.texture) j["texture"] = *s.texture;
    if (s.pseudo) j["pseudo_maps"] = map_paths_json(*s.pseudo);
    samples.push_back(std::move(j));
  }
  return {{"samples", samples}, {"ontology", m.ontology}, {"digest", m.digest()}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.ontology = j.at("ontology").get<std::vector<std::string>>();
  for (const auto& s : j.at("samples")) {
    ManifestSample x;
    x.id = s.at("id").get<std::string>();
    x.class_label = s.at("class_label").get<std::string>();
    x.split = split_from_string(s.value("split", std::string("train")));
    x.domain = domain_from_string(s.value("domain", std::string("source")));
    if (s.contains("maps")) x.maps = map_paths_from_json(s.at("maps"));
    if (s.contains("texture")) x.texture = s.at("texture").get<std::string>();
    if (s.contains("pseudo_maps")) x.pseudo = map_paths_from_json(s.at("pseudo_maps"));
    m.samples.push_back(std::move(x));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Map file I/O: albedo gamma-encoded, normals (2c-1) encoded, roughness linear.
// ---------------------------------------------------------------------------

inline void write_material(const std::filesystem::path& dir, const MaterialMaps& m,
                           int bit_depth = 8) {
  std::filesystem::create_directories(dir);
  write_png(dir / "albedo.png", gamma_encode(m.albedo), bit_depth);
  write_png(dir / "normal.png", encode_normals(m.normals), bit_depth);
  write_png(dir / "roughness.png", m.roughness, bit_depth);
}

inline MaterialMaps read_material_files(const std::filesystem::path& albedo,
                                        const std::filesystem::path& normal,
                                        const std::filesystem::path& roughness) {
  MaterialMaps m{gamma_decode(to_rgb(read_png(albedo))), decode_normals(to_rgb(read_png(normal))),
                 read_png(roughness)};
  if (m.roughness.channels() != 1) m.roughness = extract_channel(m.roughness, 0);
  m.check_shapes();
  return m;
}

inline MaterialMaps read_material(const std::filesystem::path& dir) {
  return read_material_files(dir / "albedo.png", dir / "normal.png", dir / "roughness.png");
}

// ---------------------------------------------------------------------------
// Library ingestion
// ---------------------------------------------------------------------------

struct IngestReport {
  DatasetManifest manifest;
  // Folder name -> missing map kinds.
  std::vector<std::pair<std::string, std::vector<std::string>>> skipped;
};

namespace detail {
inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}
inline std::string leading_alpha(const std::string& name) {
  std::string out;
  for (char c : name) {
    if (!std::isalpha(static_cast<unsigned char>(c))) break;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out.empty() ? "unknown" : out;
}
}  // namespace detail

// Scans per-material folders for {name}_{Color|Albedo}.*, {name}_Normal*.*
// and {name}_Roughness.*, case-insensitively. Read-only on the tree.
inline IngestReport ingest_library(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  require(fs::is_directory(root), ErrorCode::io, "library root is not a directory: " + root.string());
  std::vector<fs::path> folders;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) folders.push_back(e.path());
  std::sort(folders.begin(), folders.end());
  IngestReport report;
  std::set<std::string> ontology;
  for (const auto& dir : folders) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::optional<std::string> albedo, normal, rough;
    for (const auto& f : files) {
      const std::string stem = detail::lower(f.stem().string());
      const auto us = stem.rfind('_');
      if (us == std::string::npos) continue;
      const std::string kind = stem.substr(us + 1);
      const std::string rel = fs::relative(f, root).generic_string();
      if ((kind == "color" || kind == "albedo") && !albedo) albedo = rel;
      else if (kind.rfind("normal", 0) == 0 && !normal) normal = rel;
      else if (kind == "roughness" && !rough) rough = rel;
    }
    std::vector<std::string> missing;
    if (!albedo) missing.emplace_back("albedo");
    if (!normal) missing.emplace_back("normal");
    if (!rough) missing.emplace_back("roughness");
    const std::string name = dir.filename().string();
    if (!missing.empty()) {
      report.skipped.emplace_back(name, missing);
      continue;
    }
    ManifestSample s;
    s.id = name;
    s.class_label = detail::leading_alpha(name);
    s.maps = MapPaths{*albedo, *normal, *rough};
    s.domain = Domain::source;
    ontology.insert(s.class_label);
    report.manifest.samples.push_back(std::move(s));
  }
  require(!report.manifest.samples.empty(), ErrorCode::empty_library,
          "no complete material folders under " + root.string());
  report.manifest.ontology.assign(ontology.begin(), ontology.end());
  return report;
}

// ---------------------------------------------------------------------------
// Prompt-dataset generation plans
// ---------------------------------------------------------------------------

struct PlanRow {
  std::string class_token;
  std::string prompt;
  std::uint64_t seed = 0;
  int resolution = 1024;
  friend bool operator==(const PlanRow&, const PlanRow&) = default;
};

inline std::string fill_template(const std::string& tmpl, const std::string& token) {
  const auto pos = tmpl.find("{}");
  require(pos != std::string::npos, ErrorCode::invalid_argument, "template lacks placeholder");
  return tmpl.substr(0, pos) + token + tmpl.substr(pos + 2);
}

// Rows cycle through the templates starting at `first_template`; with one
// row per class every class uses that template.
inline std::vector<PlanRow> texsd_plan(const std::vector<std::string>& classes,
                                       const std::vector<std::string>& templates, int per_class,
                                       std::uint64_t seed, std::size_t first_template = 3,
                                       int resolution = 1024) {
  require(!classes.empty(), ErrorCode::invalid_argument, "no classes");
  require(!templates.empty(), ErrorCode::invalid_argument, "no templates");
  require(per_class >= 1, ErrorCode::invalid_argument, "per_class must be >= 1");
  std::vector<PlanRow> rows;
  rows.reserve(classes.size() * per_class);
  for (std::size_t c = 0; c < classes.size(); ++c)
    for (int k = 0; k < per_class; ++k) {
      const auto& tmpl = templates[(first_template + k) % templates.size()];
      rows.push_back({classes[c], fill_template(tmpl, classes[c]),
                      derive_seed(seed, {c, static_cast<std::uint64_t>(k)}) & 0x7fffffffULL,
                      resolution});
    }
  return rows;
}

inline std::string plan_to_jsonl(const std::vector<PlanRow>& rows) {
  std::string out;
  for (const auto& r : rows)
    out += nlohmann::json{{"class", r.class_token}, {"prompt", r.prompt}, {"seed", r.seed},
                          {"resolution", r.resolution}}
               .dump() +
           "\n";
  return out;
}

inline std::string plan_digest(const std::vector<PlanRow>& rows) { return sha256_hex(plan_to_jsonl(rows)); }

// ---------------------------------------------------------------------------
// Class lists and mappings
// ---------------------------------------------------------------------------

inline std::filesystem::path data_dir() {
  if (const char* env = std::getenv("MATPAL_DATA_DIR"); env && *env) {
    const std::filesystem::path p(env);
    if (std::filesystem::exists(p / "texsd_classes.txt")) return p;
  }
#ifdef MATPAL_DATA_DIR_DEFAULT
  return MATPAL_DATA_DIR_DEFAULT;
#else
  return "data";
#endif
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot read " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty() && line[0] != '#') out.push_back(line);
  }
  return out;
}

class ClassMapping {
 public:
  ClassMapping() = default;
  ClassMapping(std::vector<std::string> common, std::map<std::string, std::string> pairs)
      : common_(std::move(common)), pairs_(std::move(pairs)) {
    for (const auto& c : common_) pairs_.emplace(c, c);
    for (const auto& [from, to] : pairs_)
      require(std::find(common_.begin(), common_.end(), to) != common_.end(),
              ErrorCode::invalid_input, "mapping target '" + to + "' is not a common class");
  }

  static ClassMapping load(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    const auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
    return ClassMapping(j.at("common").get<std::vector<std::string>>(),
                        j.at("mapping").get<std::map<std::string, std::string>>());
  }

  const std::vector<std::string>& common_classes() const { return common_; }

  // Throws on classes outside the declared mapping.
  const std::string& apply(const std::string& cls) const {
    const auto it = pairs_.find(cls);
    require(it != pairs_.end(), ErrorCode::not_found, "class '" + cls + "' has no mapping");
    return it->second;
  }

  bool contains(const std::string& cls) const { return pairs_.count(cls) > 0; }

 private:
  std::vector<std::string> common_;
  std::map<std::string, std::string> pairs_;
};

// ---------------------------------------------------------------------------
// Synthetic ground truth
// ---------------------------------------------------------------------------

enum class DomainShift { none, shifted };

inline constexpr double kShiftHueDegrees = 150.0;
inline constexpr int kShiftExtraCycles = 2;

// Magnitudes applied when the shift is active.
struct ShiftSpec {
  double hue_degrees = kShiftHueDegrees;
  int extra_cycles = kShiftExtraCycles;
};

inline const std::vector<std::string>& default_synthetic_ontology() {
  static const std::vector<std::string> o{"stripes", "bricks", "noise", "dots"};
  return o;
}

// Draws pattern parameters for one synthetic material of `family`.
inline PatternParams synthetic_params(PatternFamily family, DomainShift shift, Rng& rng,
                                      const ShiftSpec& spec = {}) {
  PatternParams p;
  p.family = family;
  const double hue = rng.uniform(-30.0, 50.0) + (shift == DomainShift::shifted ? spec.hue_degrees : 0.0);
  const double sat = rng.uniform(0.35, 0.75);
  const double val = rng.uniform(0.45, 0.85);
  p.color_a = hsv_to_rgb(hue, sat, val);
  p.color_b = hsv_to_rgb(hue + rng.uniform(-15.0, 15.0), sat * rng.uniform(0.7, 1.1),
                         val * rng.uniform(0.35, 0.7));
  const int c = rng.integer(2, 3) + (shift == DomainShift::shifted ? spec.extra_cycles : 0);
  switch (family) {
    case PatternFamily::stripes: {
      static constexpr int dirs[4][2] = {{1, 0}, {0, 1}, {1, 1}, {1, -1}};
      const auto& d = dirs[rng.below(4)];
      p.cycles_x = d[0] * c;
      p.cycles_y = d[1] * c;
      break;
    }
    case PatternFamily::bricks:
      p.cycles_x = c;
      p.cycles_y = 2 * c;
      p.feature = rng.uniform(0.15, 0.3);
      break;
    case PatternFamily::dots:
      p.cycles_x = c;
      p.cycles_y = c;
      p.feature = rng.uniform(0.12, 0.2);
      break;
    case PatternFamily::noise:
      p.cycles_x = p.cycles_y = 2 * c;
      break;
  }
  p.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  p.sharpness = rng.uniform(0.2, 0.8);
  p.grain = rng.uniform(0.03, 0.12);
  p.height_scale = rng.uniform(0.4, 1.0);
  p.rough_base = rng.uniform(0.3, 0.7);
  p.rough_range = rng.uniform(0.3, 0.5);
  p.noise_seed = rng.bits();
  return p;
}

struct SyntheticDataset {
  DatasetManifest manifest;
  std::vector<SourceSample> samples;
  std::vector<PatternParams> params;
};

// Materials with exact ground truth. Classes are assigned round-robin over
// the ontology; each name is resolved to a pattern family by token.
inline SyntheticDataset gen_synthetic(int n, const std::vector<std::string>& ontology,
                                      DomainShift shift, std::uint64_t seed, int size = 32,
                                      const ShiftSpec& spec = {}) {
  require(n >= 1, ErrorCode::invalid_argument, "n must be >= 1");
  require(!ontology.empty(), ErrorCode::invalid_argument, "empty ontology");
  require(size >= 8, ErrorCode::invalid_argument, "size must be >= 8");
  SyntheticDataset ds;
  ds.manifest.ontology = ontology;
  const std::string domain = shift == DomainShift::none ? "src" : "tgt";
  for (int i = 0; i < n; ++i) {
    const std::string& cls = ontology[i % ontology.size()];
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    PatternParams p = synthetic_params(family_from_token(cls), shift, rng, spec);
    char id[64];
    std::snprintf(id, sizeof id, "%s-%s-%04d", domain.c_str(), cls.c_str(), i);
    SourceSample s{id, cls, rasterize_material(PatternField(p), size)};
    ManifestSample m;
    m.id = id;
    m.class_label = cls;
    m.maps = MapPaths{std::string(id) + "/albedo.png", std::string(id) + "/normal.png",
                      std::string(id) + "/roughness.png"};
    m.domain = shift == DomainShift::none ? Domain::source : Domain::target;
    ds.manifest.samples.push_back(std::move(m));
    ds.samples.push_back(std::move(s));
    ds.params.push_back(p);
  }
  return ds;
}

// Digest over the float32 content of every map, order-independent.
inline std::string synthetic_digest(const SyntheticDataset& ds) {
  return source_digest(ds.samples);
}

// Renders each material once under a seeded random configuration, giving
// unlabeled single-view textures.
inline std::vector<TargetSample> as_target_textures(const std::vector<SourceSample>& materials,
                                                    std::uint64_t seed) {
  std::vector<TargetSample> out;
  out.reserve(materials.size());
  for (std::size_t i = 0; i < materials.size(); ++i) {
    TargetSample t;
    t.id = materials[i].id;
    t.class_label = materials[i].class_label;
    t.texture = render(materials[i].maps, sample_random_lighting(derive_seed(seed, {i})));
    out.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset directories: manifest.json plus map/texture PNGs at the manifest's
// relative paths. Maps and textures are stored at 16 bits.
// ---------------------------------------------------------------------------

struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<SourceSample> source;
  std::vector<TargetSample> target;
};

inline void save_dataset(const std::filesystem::path& root, DatasetManifest manifest,
                         const std::vector<SourceSample>& source, const std::vector<TargetSample>& target) {
  std::map<std::string, const SourceSample*> src;
  std::map<std::string, const TargetSample*> tgt;
  for (const auto& s : source) src[s.id] = &s;
  for (const auto& t : target) tgt[t.id] = &t;
  for (auto& m : manifest.samples) {
    if (auto it = src.find(m.id); it != src.end()) {
      if (!m.maps) m.maps = MapPaths{m.id + "/albedo.png", m.id + "/normal.png", m.id + "/roughness.png"};
      std::filesystem::create_directories((root / m.maps->albedo).parent_path());
      write_png(root / m.maps->albedo, gamma_encode(it->second->maps.albedo), 16);
      write_png(root / m.maps->normal, encode_normals(it->second->maps.normals), 16);
      write_png(root / m.maps->roughness, it->second->maps.roughness, 16);
    }
    if (auto it = tgt.find(m.id); it != tgt.end()) {
      if (!m.texture) m.texture = m.id + "/texture.png";
      std::filesystem::create_directories((root / *m.texture).parent_path());
      write_png(root / *m.texture, it->second->texture, 16);
      if (it->second->pseudo) {
        if (!m.pseudo) m.pseudo = MapPaths{m.id + "/pseudo_albedo.png", m.id + "/pseudo_normal.png",
                                           m.id + "/pseudo_roughness.png"};
        write_png(root / m.pseudo->albedo, gamma_encode(it->second->pseudo->albedo), 16);
        write_png(root / m.pseudo->normal, encode_normals(it->second->pseudo->normals), 16);
        write_png(root / m.pseudo->roughness, it->second->pseudo->roughness, 16);
      }
    }
  }
  manifest.validate();
  nlohmann::json j = to_json(manifest);
  std::map<std::string, std::string> pseudo_models;
  for (const auto& t : target)
    if (!t.pseudo_model_digest.empty()) pseudo_models[t.id] = t.pseudo_model_digest;
  if (!pseudo_models.empty()) j["pseudo_model_digests"] = pseudo_models;
  std::filesystem::create_directories(root);
  const std::string text = j.dump(2);
  write_file_bytes(root / "manifest.json",
                   std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// Samples with maps load as source samples; samples with a texture load as
// target samples (with pseudo-maps when present).
inline LoadedDataset load_dataset(const std::filesystem::path& root, const DatasetManifest& manifest) {
  manifest.validate();
  LoadedDataset out;
  out.manifest = manifest;
  for (const auto& m : manifest.samples) {
    if (m.maps)
      out.source.push_back({m.id, m.class_label,
                            read_material_files(root / m.maps->albedo, root / m.maps->normal,
                                                root / m.maps->roughness)});
    if (m.texture) {
      TargetSample t;
      t.id = m.id;
      t.class_label = m.class_label;
      t.texture = to_rgb(read_png(root / *m.texture));
      if (m.pseudo)
        t.pseudo = read_material_files(root / m.pseudo->albedo, root / m.pseudo->normal,
                                       root / m.pseudo->roughness);
      out.target.push_back(std::move(t));
    }
  }
  return out;
}

// A directory with manifest.json, or a material library laid out as
// per-material folders.
inline LoadedDataset load_dataset(const std::filesystem::path& root) {
  const auto mf = root / "manifest.json";
  if (!std::filesystem::exists(mf)) return load_dataset(root, ingest_library(root).manifest);
  const auto bytes = read_file_bytes(mf);
  const auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
  auto ds = load_dataset(root, manifest_from_json(j));
  if (j.contains("pseudo_model_digests"))
    for (auto& t : ds.target) t.pseudo_model_digest = j["pseudo_model_digests"].value(t.id, std::string());
  return ds;
}

}  // namespace matpal
