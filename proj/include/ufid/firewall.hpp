#pragma once

// HTTP front end for the detector. POST /v1/query takes the single-input form
// of the /v1/generate body and answers
//   200 {"image", "score", "timings"}           allow
//   403 {"error":"backdoor query rejected", "score"}   reject
//   400 {"error"}                                malformed request
//   502 {"error"}                                backend/encoder failure (fail closed)

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

// httplib's default backlog of 5 drops connections under bursts. Define it
// before any other include of httplib.h (the CMake target does).
#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 128
#endif
#include <httplib.h>
#include <json.hpp>

#include "ufid/calibration.hpp"
#include "ufid/config.hpp"
#include "ufid/core/rng.hpp"
#include "ufid/detector.hpp"
#include "ufid/wire.hpp"

namespace ufid {

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

inline LogLevel parse_log_level(std::string_view s) {
  if (s == "error") return LogLevel::error;
  if (s == "warn") return LogLevel::warn;
  if (s == "info") return LogLevel::info;
  if (s == "debug") return LogLevel::debug;
  fail(ErrorCode::config, "log level must be error|warn|info|debug, got '" + std::string(s) + "'");
}

class Logger {
 public:
  explicit Logger(LogLevel level = LogLevel::info) : level_(level) {}

  static Logger from_env() {
    const char* v = std::getenv("UFID_LOG");
    return Logger(v && *v ? parse_log_level(v) : LogLevel::info);
  }

  void log(LogLevel level, std::string_view msg) const {
    if (level > level_) return;
    static constexpr const char* names[] = {"error", "warn", "info", "debug"};
    static std::mutex mutex;
    std::lock_guard lock(mutex);
    std::cerr << "[ufid " << names[static_cast<int>(level)] << "] " << msg << '\n';
  }

 private:
  LogLevel level_;
};

inline std::optional<std::uint64_t> seed_from_env() {
  const char* v = std::getenv("UFID_SEED");
  if (!v || !*v) return std::nullopt;
  const std::string s(v);
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  require(ec == std::errc() && p == s.data() + s.size(), ErrorCode::config, "UFID_SEED must be an unsigned integer");
  return out;
}

struct FirewallConfig {
  BackendDescriptor backend;
  QueryMode mode = QueryMode::unconditional;
  MagnitudeSet magnitude{};
  std::optional<std::string> phrase_path;
  ScoringOptions scoring;
  std::string threshold_path;
  bool combined = false;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t concurrency = 8;
  std::uint64_t seed = 0;

  void validate() const {
    backend.validate();
    magnitude.validate();
    require(mode == QueryMode::unconditional || phrase_path.has_value(), ErrorCode::config,
            "conditional mode needs a phrase pool");
    require(!threshold_path.empty(), ErrorCode::config, "firewall needs a threshold file");
    require(concurrency >= 1, ErrorCode::config, "concurrency must be >= 1");
    require(port >= 0 && port <= 65535, ErrorCode::config, "port out of range");
  }
};

// "host:port" or ":port" or "port".
inline std::pair<std::string, int> parse_listen(const std::string& s) {
  const auto colon = s.rfind(':');
  std::string host = colon == std::string::npos ? "127.0.0.1" : s.substr(0, colon);
  if (host.empty()) host = "0.0.0.0";
  const std::string port_text = colon == std::string::npos ? s : s.substr(colon + 1);
  int port = -1;
  const auto [p, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
  require(ec == std::errc() && p == port_text.data() + port_text.size() && port >= 0 && port <= 65535,
          ErrorCode::config, "listen must look like host:port, got '" + s + "'");
  return {host, port};
}

// Keys: the backend and scoring keys of `eval`, plus mode, magnitude, alpha,
// phrases, threshold (required), combined, listen, concurrency, seed.
inline FirewallConfig firewall_config_from(const KeyValueConfig& cfg, std::optional<std::uint64_t> seed_override = {}) {
  FirewallConfig fc;
  auto resolve = [&cfg](const std::string& p) { return cfg.resolve_path(p); };
  fc.mode = parse_query_mode(cfg.get("mode", "unconditional"));
  fc.seed = seed_override.value_or(cfg.get_u64("seed", 0));
  fc.backend = backend_from(cfg, fc.mode, fc.seed);
  const std::size_t channels =
      fc.backend.synthetic ? fc.backend.synthetic->shape.channels : parse_shape(cfg.get("shape", "8x8x3")).channels;
  fc.magnitude.size = cfg.get_u64("magnitude", fc.magnitude.size);
  fc.magnitude.alpha = cfg.get_double("alpha", fc.magnitude.alpha);
  fc.magnitude.seed = RngSeed{fc.seed};
  if (cfg.has("phrases")) fc.phrase_path = resolve(cfg.get("phrases", ""));
  fc.combined = cfg.get_bool("combined", false);
  fc.scoring = scoring_from(cfg, channels, fc.combined);
  fc.threshold_path = resolve(cfg.require_string("threshold"));
  std::tie(fc.host, fc.port) = parse_listen(cfg.get("listen", "127.0.0.1:8080"));
  fc.concurrency = cfg.get_u64("concurrency", fc.concurrency);
  cfg.reject_unknown();
  fc.validate();
  return fc;
}

struct HttpReply {
  int status = 200;
  std::string body;
};

class Firewall {
 public:
  Firewall(FirewallConfig config, std::shared_ptr<const Backend> backend, Logger logger = Logger::from_env())
      : config_(std::move(config)), logger_(std::move(logger)) {
    config_.validate();
    DetectorConfig dc;
    dc.mode = config_.mode;
    dc.magnitude = config_.magnitude;
    dc.magnitude.seed = RngSeed{config_.seed};
    if (config_.phrase_path) dc.phrases = PhrasePool::from_file(*config_.phrase_path);
    dc.scoring = config_.scoring;
    dc.threshold = Threshold::load(config_.threshold_path);
    dc.combined = config_.combined;
    detector_ = std::make_unique<Detector>(std::move(backend), std::move(dc));
  }

  explicit Firewall(FirewallConfig config, Logger logger = Logger::from_env())
      : Firewall(config, make_backend(config.backend), std::move(logger)) {}

  const Detector& detector() const noexcept { return *detector_; }

  // The query id is a digest of the request bytes so replays reproduce verdicts.
  static std::string query_id_for(std::string_view body) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(body)));
    return std::string("q/") + buf;
  }

  // Transport-independent request handling.
  HttpReply handle(std::string_view body) const {
    std::optional<Query> query;
    try {
      auto req = wire::decode_generate_request(body);
      require(req.inputs.size() == 1, ErrorCode::protocol, "a query carries exactly one input");
      require(req.mode == config_.mode, ErrorCode::mode_mismatch,
              "firewall serves " + std::string(to_string(config_.mode)) + " queries");
      const Query& in = req.inputs.front();
      const std::string id = query_id_for(body);
      query = in.mode() == QueryMode::unconditional ? Query::unconditional(id, in.noise())
                                                    : Query::conditional(id, in.prompt());
    } catch (const Error& e) {
      logger_.log(LogLevel::warn, std::string("bad request: ") + e.what());
      return {400, wire::encode_error(e.what())};
    }

    const Verdict v = detector_->detect(*query);
    if (v.failed()) {
      logger_.log(LogLevel::error, v.query_id + ": " + v.diagnostic);
      return {502, wire::encode_error(v.diagnostic)};
    }
    nlohmann::ordered_json out;
    if (v.rejected()) {
      logger_.log(LogLevel::warn, v.diagnostic);
      out["error"] = "backdoor query rejected";
      out["score"] = v.score->to_json();
      return {403, out.dump()};
    }
    logger_.log(LogLevel::debug, v.query_id + ": allowed, score " + std::to_string(v.score->detection_score()));
    out["image"] = wire::image_to_json(*v.image);
    out["score"] = v.score->to_json();
    out["timings"] = v.timings.to_json();
    return {200, out.dump()};
  }

  // Health-checks the backend and binds. Returns the bound port.
  int bind() {
    try {
      detector_->backend().health_check();
    } catch (const Error& e) {
      fail(ErrorCode::transport, std::string("backend unreachable at startup: ") + e.what());
    }
    server_ = std::make_unique<httplib::Server>();
    const std::size_t n = config_.concurrency;
    server_->new_task_queue = [n] { return new httplib::ThreadPool(n); };
    server_->Post("/v1/query", [this](const httplib::Request& req, httplib::Response& res) {
      const HttpReply reply = handle(req.body);
      res.status = reply.status;
      res.set_content(reply.body, "application/json");
    });
    server_->Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"status":"ok"})", "application/json");
    });
    int port = config_.port;
    if (port == 0) {
      port = server_->bind_to_any_port(config_.host);
      require(port > 0, ErrorCode::transport, "cannot bind " + config_.host);
    } else {
      require(server_->bind_to_port(config_.host, port), ErrorCode::transport,
              "cannot bind " + config_.host + ":" + std::to_string(port));
    }
    logger_.log(LogLevel::info, "listening on " + config_.host + ":" + std::to_string(port) + " (backend " +
                                    detector_->backend().id() + ", tau " +
                                    std::to_string(detector_->config().threshold.tau) + ")");
    return port;
  }

  // Blocks until stop(); in-flight requests finish before it returns.
  void serve_forever() {
    require(server_ != nullptr, ErrorCode::precondition, "bind() first");
    server_->listen_after_bind();
  }

  void stop() {
    if (server_) server_->stop();
  }

  bool running() const { return server_ && server_->is_running(); }

 private:
  FirewallConfig config_;
  Logger logger_;
  std::unique_ptr<Detector> detector_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace ufid
