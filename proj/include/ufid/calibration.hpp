#pragma once

// Threshold calibration from a small clean validation set: generate one image
// per validation sample (no augmentation), build one similarity graph over all
// of them, and take the largest per-node average similarity as tau.

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ufid/backends.hpp"
#include "ufid/core/error.hpp"
#include "ufid/core/serialize.hpp"
#include "ufid/scoring.hpp"

namespace ufid {

struct Threshold {
  double tau = 0.0;
  std::size_t n_validation = 0;
  MetricKind metric = MetricKind::encoder_cosine;
  DensityMode density_mode = DensityMode::mean_pairs;
  std::string created_at;
  std::string backend_id;
  bool combined = false;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["tau"] = tau;
    j["n_validation"] = n_validation;
    j["metric"] = std::string(to_string(metric));
    j["density_mode"] = std::string(to_string(density_mode));
    j["created_at"] = created_at;
    j["backend_id"] = backend_id;
    if (combined) j["combined"] = true;
    return j;
  }

  static Threshold from_json(const nlohmann::json& j) {
    Threshold t;
    try {
      t.tau = j.at("tau").get<double>();
      t.n_validation = j.at("n_validation").get<std::size_t>();
      t.metric = parse_metric_kind(j.at("metric").get<std::string>());
      t.density_mode = parse_density_mode(j.at("density_mode").get<std::string>());
      t.created_at = j.value("created_at", "");
      t.backend_id = j.value("backend_id", "");
      t.combined = j.value("combined", false);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::config, std::string("malformed threshold: ") + e.what());
    }
    t.validate();
    return t;
  }

  void validate() const {
    require(n_validation >= 2, ErrorCode::config, "threshold needs n_validation >= 2");
    require(std::isfinite(tau), ErrorCode::config, "tau must be finite");
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorCode::missing_file, "cannot write threshold file " + path);
    out << to_json().dump(2) << "\n";
  }

  static Threshold load(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::missing_file, "cannot open threshold file " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::config, "threshold file " + path + " is not JSON: " + e.what());
    }
  }
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// max over nodes of the node's mean similarity to the others.
inline double threshold_from_graph(const SimilarityGraph& g) {
  const auto avg = g.node_averages();
  return *std::max_element(avg.begin(), avg.end());
}

struct CalibrationOptions {
  ScoringOptions scoring;
  // Gate the combined score: tau = max_k (Corre_k + (|M|-1) * avg_k).
  bool combined = false;
  std::size_t magnitude = 4;
  std::string created_at = "";  // defaults to now
};

inline Threshold calibrate(std::span<const Query> validation, const Backend& backend, const CalibrationOptions& options) {
  require(validation.size() >= 2, ErrorCode::empty_input,
          "calibration needs at least 2 validation samples, got " + std::to_string(validation.size()));
  require_uniform_mode(validation);
  const auto images = backend.generate(validation);
  require(images.size() == validation.size(), ErrorCode::protocol, "backend returned wrong image count");
  const SimilarityGraph graph(images.size(), pairwise_similarities(images, options.scoring.metric));

  Threshold t;
  t.n_validation = validation.size();
  t.metric = options.scoring.metric.kind;
  t.density_mode = options.scoring.mode;
  t.backend_id = backend.id();
  t.created_at = options.created_at.empty() ? utc_timestamp() : options.created_at;

  if (options.combined) {
    require(options.scoring.multimodal != nullptr, ErrorCode::config, "combined calibration needs a multimodal encoder");
    const auto avg = graph.node_averages();
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < validation.size(); ++k) {
      const double corre = corre_score(validation[k], images[k], *options.scoring.multimodal);
      best = std::max(best, combined_score(avg[k], corre, options.magnitude));
    }
    t.tau = best;
    t.combined = true;
  } else {
    t.tau = threshold_from_graph(graph);
  }
  return t;
}

// Validation manifest: JSON array of {"id": ..., "prompt": "..."} or
// {"id": ..., "noise": "<path to serialized image>"}; relative paths resolve
// against the manifest's directory.
inline std::vector<Query> load_validation_manifest(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::missing_file, "cannot open validation manifest " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::config, "manifest " + path + " is not JSON: " + e.what());
  }
  require(j.is_array(), ErrorCode::config, "validation manifest must be a JSON array");
  const auto base = std::filesystem::path(path).parent_path();
  std::vector<Query> out;
  std::size_t index = 0;
  for (const auto& item : j) {
    std::string id = item.value("id", "val/" + std::to_string(index));
    ++index;
    if (item.contains("prompt")) {
      out.push_back(Query::conditional(std::move(id), item.at("prompt").get<std::string>()));
    } else if (item.contains("noise")) {
      std::filesystem::path p = item.at("noise").get<std::string>();
      if (p.is_relative()) p = base / p;
      out.push_back(Query::unconditional(std::move(id), read_image_file(p.string())));
    } else {
      fail(ErrorCode::config, "manifest entry needs 'prompt' or 'noise'");
    }
  }
  return out;
}

}  // namespace ufid
