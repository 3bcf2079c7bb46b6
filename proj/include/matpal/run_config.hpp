#pragma once

// File form of a CLI invocation. The JSON file is canonical; flags given on
// the command line are written over it before the command runs.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "matpal/error.hpp"
#include "matpal/hashing.hpp"
#include "matpal/png_io.hpp"

namespace matpal {

#ifndef MATPAL_VERSION
#define MATPAL_VERSION "0.1.0"
#endif

inline constexpr const char* kCodeVersion = MATPAL_VERSION;

struct RunConfig {
  std::string subcommand;
  std::uint64_t seed = 0;
  std::string backend = "procedural";  // procedural | remote
  std::string backend_url;
  bool procedural_fallback = false;
  nlohmann::json paths = nlohmann::json::object();       // named inputs and outputs
  nlohmann::json training = nlohmann::json::object();    // TrainingConfig overlay
  nlohmann::json extraction = nlohmann::json::object();  // ExtractionConfig overlay
  nlohmann::json options = nlohmann::json::object();     // command-specific values

  friend bool operator==(const RunConfig&, const RunConfig&) = default;

  std::string path(const std::string& key, const std::string& fallback = {}) const {
    if (!paths.contains(key) || paths[key].is_null()) return fallback;
    return paths[key].get<std::string>();
  }
  template <class T>
  T option(const std::string& key, T fallback) const {
    return options.value(key, fallback);
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"subcommand", c.subcommand},
       {"seed", c.seed},
       {"backend", c.backend},
       {"backend_url", c.backend_url},
       {"procedural_fallback", c.procedural_fallback},
       {"paths", c.paths},
       {"training", c.training},
       {"extraction", c.extraction},
       {"options", c.options}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  require(j.is_object(), ErrorCode::invalid_input, "run config must be a JSON object");
  RunConfig d;
  c.subcommand = j.value("subcommand", d.subcommand);
  c.seed = j.value("seed", d.seed);
  c.backend = j.value("backend", d.backend);
  c.backend_url = j.value("backend_url", d.backend_url);
  c.procedural_fallback = j.value("procedural_fallback", d.procedural_fallback);
  c.paths = j.value("paths", d.paths);
  c.training = j.value("training", d.training);
  c.extraction = j.value("extraction", d.extraction);
  c.options = j.value("options", d.options);
  require(c.backend == "procedural" || c.backend == "remote", ErrorCode::invalid_argument,
          "backend must be 'procedural' or 'remote', got '" + c.backend + "'");
}

// Settings only: file locations are left out, inputs are tracked by content.
inline std::string run_config_digest(const RunConfig& c) {
  nlohmann::json j = c;
  j.erase("paths");
  return sha256_hex(j.dump());
}

inline RunConfig load_run_config(const std::filesystem::path& p) {
  const auto bytes = read_file_bytes(p);
  return nlohmann::json::parse(bytes.begin(), bytes.end()).get<RunConfig>();
}

inline void save_run_config(const std::filesystem::path& p, const RunConfig& c) {
  const std::string text = nlohmann::json(c).dump(2);
  write_file_bytes(p, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// Digest of a file, or of every regular file under a directory (sorted by
// relative path, names included).
inline std::string path_digest(const std::filesystem::path& p) {
  namespace fs = std::filesystem;
  require(fs::exists(p), ErrorCode::io, "no such path: " + p.string());
  if (fs::is_regular_file(p)) return sha256_hex(read_file_bytes(p));
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(p))
    if (e.is_regular_file() && e.path().filename() != "provenance.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  Sha256 h;
  for (const auto& f : files) {
    h.update(fs::relative(f, p).generic_string()).update("\x1f");
    h.update(sha256_hex(read_file_bytes(f))).update("\x1e");
  }
  return h.hex();
}

// provenance.json: command, config and its digest, code version, input digests.
inline nlohmann::json provenance(const RunConfig& c, const std::vector<std::string>& input_keys,
                                 nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json inputs = nlohmann::json::object();
  for (const auto& k : input_keys) {
    if (!c.paths.contains(k)) continue;
    const auto& v = c.paths[k];
    if (v.is_string()) {
      inputs[k] = {{"path", v}, {"digest", path_digest(v.get<std::string>())}};
    } else if (v.is_array()) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& e : v) arr.push_back({{"path", e}, {"digest", path_digest(e.get<std::string>())}});
      inputs[k] = arr;
    }
  }
  nlohmann::json j{{"command", c.subcommand},
                   {"config", c},
                   {"config_digest", run_config_digest(c)},
                   {"code_version", kCodeVersion},
                   {"inputs", inputs}};
  for (auto& [k, v] : extra.items()) j[k] = v;
  return j;
}

inline void write_provenance(const std::filesystem::path& dir, const nlohmann::json& j) {
  std::filesystem::create_directories(dir);
  const std::string text = j.dump(2);
  write_file_bytes(dir / "provenance.json",
                   std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace matpal
