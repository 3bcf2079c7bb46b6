#pragma once

// HTTP JSON API over JobManager. Include <Eigen/Dense> before this header
// (httplib.h breaks Eigen's template declarations otherwise).

#include <Eigen/Dense>
#include <httplib.h>

#include <cstdlib>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "matpal/pipeline.hpp"

namespace matpal {

struct ServiceOptions {
  std::string backend_url;  // empty: procedural backend
  std::filesystem::path checkpoint;
  std::filesystem::path data_dir = "matpal-data";
  int port = 8080;
  std::string host = "127.0.0.1";
  int workers = 2;
  bool procedural_fallback = false;

  static ServiceOptions from_env() {
    ServiceOptions o;
    auto env = [](const char* k) -> std::optional<std::string> {
      const char* v = std::getenv(k);
      if (!v || !*v) return std::nullopt;
      return std::string(v);
    };
    if (auto v = env("MATPAL_BACKEND_URL")) o.backend_url = *v;
    if (auto v = env("MATPAL_CHECKPOINT")) o.checkpoint = *v;
    if (auto v = env("MATPAL_DATA_DIR")) o.data_dir = *v;
    if (auto v = env("MATPAL_PORT")) {
      try {
        o.port = std::stoi(*v);
      } catch (const std::exception&) {
        fail(ErrorCode::invalid_argument, "MATPAL_PORT is not an integer: " + *v);
      }
    }
    if (auto v = env("MATPAL_PROCEDURAL_FALLBACK")) o.procedural_fallback = (*v == "1" || *v == "true");
    return o;
  }
};

inline int http_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::not_found: return 404;
    case ErrorCode::precondition: return 409;
    case ErrorCode::backend: return 502;
    case ErrorCode::io: return 500;
    default: return 400;
  }
}

inline nlohmann::json error_body(std::string_view code, const std::string& message) {
  return {{"error", {{"code", code}, {"message", message}}}};
}

class Service {
 public:
  explicit Service(JobManager& jobs) : jobs_(jobs) {
    server_.set_payload_max_length(std::size_t{256} << 20);
    routes();
  }
  ~Service() { stop(); }

  httplib::Server& server() { return server_; }

  void listen(const std::string& host, int port) {
    if (!server_.listen(host, port))
      fail(ErrorCode::io, "cannot listen on " + host + ":" + std::to_string(port));
  }

  // Binds an ephemeral port and serves on a background thread.
  int start_background(const std::string& host = "127.0.0.1") {
    const int port = server_.bind_to_any_port(host);
    require(port > 0, ErrorCode::io, "cannot bind a port on " + host);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port;
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  template <class F>
  static auto guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      auto send = [&](int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
      };
      try {
        f(req, res);
      } catch (const BackendError& e) {
        send(502, error_body(to_string(e.code()), e.what()));
      } catch (const Error& e) {
        send(http_status(e.code()), error_body(to_string(e.code()), e.what()));
      } catch (const nlohmann::json::exception& e) {
        send(400, error_body("invalid_input", std::string("malformed JSON: ") + e.what()));
      } catch (const std::exception& e) {
        send(500, error_body("internal", e.what()));
      }
    };
  }

  static std::string upload_bytes(const httplib::Request& req) {
    if (req.is_multipart_form_data()) {
      require(!req.files.empty(), ErrorCode::invalid_input, "multipart upload carries no file");
      return req.files.begin()->second.content;
    }
    require(!req.body.empty(), ErrorCode::invalid_input, "empty upload body");
    return req.body;
  }

  static std::span<const std::uint8_t> as_bytes(const std::string& s) {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
  }

  static double query_double(const httplib::Request& req, const char* key, double fallback) {
    if (!req.has_param(key)) return fallback;
    const std::string v = req.get_param_value(key);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      require(used == v.size() && std::isfinite(d), ErrorCode::invalid_argument, "");
      return d;
    } catch (const std::exception&) {
      fail(ErrorCode::invalid_argument, std::string("query parameter ") + key + " is not a number: " + v);
    }
  }

  static void send_json(httplib::Response& res, const nlohmann::json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }

  static void send_png(httplib::Response& res, const std::vector<std::uint8_t>& bytes) {
    res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
  }

  void routes() {
    server_.Get("/api/health", guarded([](const httplib::Request&, httplib::Response& res) {
                  send_json(res, {{"status", "ok"}});
                }));

    server_.Post("/api/images", guarded([this](const httplib::Request& req, httplib::Response& res) {
                   const std::string body = upload_bytes(req);
                   send_json(res, {{"image_id", jobs_.store().put_image(as_bytes(body))}}, 201);
                 }));

    server_.Post(R"(/api/images/([\w-]+)/masks)",
                 guarded([this](const httplib::Request& req, httplib::Response& res) {
                   const std::string body = upload_bytes(req);
                   send_json(res, {{"mask_id", jobs_.store().put_mask(req.matches[1], as_bytes(body))}}, 201);
                 }));

    server_.Post("/api/jobs", guarded([this](const httplib::Request& req, httplib::Response& res) {
                   const auto j = nlohmann::json::parse(req.body);
                   JobRequest r;
                   r.image_id = j.at("image_id").get<std::string>();
                   r.mask_ids = j.at("mask_ids").get<std::vector<std::string>>();
                   r.config = extraction_config_from_json(j.value("config", nlohmann::json()));
                   const auto s = jobs_.submit(r);
                   send_json(res, {{"job_id", s.job_id}, {"cache_hit", s.cache_hit}}, s.cache_hit ? 200 : 202);
                 }));

    server_.Get(R"(/api/jobs/([\w-]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  send_json(res, jobs_.status(req.matches[1]));
                }));

    server_.Post(R"(/api/jobs/([\w-]+)/select)",
                 guarded([this](const httplib::Request& req, httplib::Response& res) {
                   const auto j = nlohmann::json::parse(req.body);
                   const auto index = j.at("candidate_index").get<long long>();
                   require(index >= 0, ErrorCode::invalid_argument, "candidate_index must be >= 0");
                   send_json(res, jobs_.select(req.matches[1], j.at("region_id").get<std::string>(),
                                               static_cast<std::size_t>(index)));
                 }));

    server_.Post(R"(/api/jobs/([\w-]+)/cancel)",
                 guarded([this](const httplib::Request& req, httplib::Response& res) {
                   send_json(res, jobs_.cancel(req.matches[1]));
                 }));

    server_.Get(R"(/api/jobs/([\w-]+)/regions/([\w-]+)/candidates/(\d+)\.png)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const std::string region = req.matches[2];
                  require(safe_id(region), ErrorCode::invalid_argument, "malformed region id");
                  const auto p = jobs_.store().job_dir(req.matches[1]) / region /
                                 ("candidate-" + std::string(req.matches[3]) + ".png");
                  require(std::filesystem::exists(p), ErrorCode::not_found, "unknown candidate");
                  send_png(res, read_file_bytes(p));
                }));

    server_.Get(R"(/api/materials/([\w-]+)/(albedo|normal|roughness)\.png)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  send_png(res, read_file_bytes(jobs_.store().material_file(req.matches[1], req.matches[2])));
                }));

    server_.Get(R"(/api/materials/([\w-]+)/render\.png)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const MaterialMaps m = jobs_.store().load_material(req.matches[1]);
                  LightingConfig cfg;
                  cfg.light_dir = direction_from_angles(query_double(req, "light_az", 45.0),
                                                        query_double(req, "light_el", 60.0));
                  cfg.view_dir = direction_from_angles(query_double(req, "view_az", 0.0),
                                                       query_double(req, "view_el", 90.0));
                  cfg.validate();
                  send_png(res, encode_png(gamma_encode(render(m, cfg))));
                }));
  }

  JobManager& jobs_;
  httplib::Server server_;
  std::thread thread_;
};

}  // namespace matpal
