#pragma once

// The per-query detection pipeline: augment -> generate once on the whole
// batch -> score -> compare with tau. Allowed queries get the generation of
// the unmodified input (images[0]); rejected ones get nothing.

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ufid/augmentation.hpp"
#include "ufid/backends.hpp"
#include "ufid/calibration.hpp"
#include "ufid/core/error.hpp"
#include "ufid/scoring.hpp"

namespace ufid {

enum class Decision { allow, reject };

inline std::string_view to_string(Decision d) { return d == Decision::allow ? "allow" : "reject"; }

struct StageTimings {
  double augment_ms = 0.0;
  double generation_ms = 0.0;
  double similarity_ms = 0.0;  // pairwise similarity, density and Corre
  double total_ms = 0.0;

  nlohmann::ordered_json to_json() const {
    return {{"augment_ms", augment_ms},
            {"generation_ms", generation_ms},
            {"similarity_ms", similarity_ms},
            {"total_ms", total_ms}};
  }
};

struct Verdict {
  std::string query_id;
  std::optional<Decision> decision;  // absent when the pipeline failed
  std::optional<ScoreRecord> score;
  std::optional<Image> image;
  std::string diagnostic;
  StageTimings timings;

  bool allowed() const noexcept { return decision == Decision::allow; }
  bool rejected() const noexcept { return decision == Decision::reject; }
  bool failed() const noexcept { return !decision.has_value(); }
};

struct DetectorConfig {
  QueryMode mode = QueryMode::unconditional;
  MagnitudeSet magnitude{};
  std::optional<PhrasePool> phrases;
  ScoringOptions scoring;
  Threshold threshold;
  bool combined = false;
};

struct ScoredQuery {
  GeneratedBatch batch;
  ScoreRecord record;
  StageTimings timings;
};

class Detector {
 public:
  Detector(std::shared_ptr<const Backend> backend, DetectorConfig config)
      : backend_(std::move(backend)), config_(std::move(config)) {
    require(backend_ != nullptr, ErrorCode::config, "detector needs a backend");
    config_.magnitude.validate();
    config_.scoring.metric.validate();
    config_.threshold.validate();
    if (config_.mode == QueryMode::conditional) {
      require(config_.phrases.has_value(), ErrorCode::config, "conditional mode needs a phrase pool");
      require(config_.phrases->size() >= config_.magnitude.size, ErrorCode::pool_too_small,
              "phrase pool smaller than |M|");
    }
    if (config_.combined) {
      require(config_.mode == QueryMode::conditional && config_.scoring.multimodal != nullptr, ErrorCode::config,
              "combined score needs conditional mode and a multimodal encoder");
      require(config_.magnitude.size >= 2, ErrorCode::config, "combined score needs |M| >= 2");
    }
    const Threshold& t = config_.threshold;
    require(t.metric == config_.scoring.metric.kind && t.density_mode == config_.scoring.mode &&
                t.combined == config_.combined,
            ErrorCode::config, "threshold was calibrated with a different metric, density mode or score");
  }

  const DetectorConfig& config() const noexcept { return config_; }
  const Backend& backend() const noexcept { return *backend_; }

  std::vector<Query> augment(const Query& q) const {
    require_mode(q, config_.mode);
    return config_.mode == QueryMode::unconditional ? augment_unconditional(q, config_.magnitude)
                                                    : augment_conditional(q, *config_.phrases, config_.magnitude);
  }

  // Throws on any backend or encoder failure.
  ScoredQuery score(const Query& q) const {
    using clock = std::chrono::steady_clock;
    auto ms = [](clock::duration d) { return std::chrono::duration<double, std::milli>(d).count(); };
    const auto t0 = clock::now();
    const auto inputs = augment(q);
    const auto t1 = clock::now();
    ScoredQuery out;
    out.batch.query_id = q.id();
    out.batch.images = backend_->generate(inputs);
    require(out.batch.images.size() == inputs.size(), ErrorCode::protocol, "backend returned wrong image count");
    const auto t2 = clock::now();
    ScoringOptions scoring = config_.scoring;
    if (!config_.combined) scoring.multimodal = nullptr;
    out.record = score_batch(out.batch, scoring, &q);
    const auto t3 = clock::now();
    out.timings = {ms(t1 - t0), ms(t2 - t1), ms(t3 - t2), ms(t3 - t0)};
    return out;
  }

  Verdict detect(const Query& q) const {
    require_mode(q, config_.mode);
    Verdict v;
    v.query_id = q.id();
    ScoredQuery scored;
    try {
      scored = score(q);
    } catch (const Error& e) {
      v.diagnostic = std::string("detection failed closed: ") + e.what();
      return v;
    }
    v.score = scored.record;
    v.timings = scored.timings;
    const double s = scored.record.detection_score();
    if (s > config_.threshold.tau) {
      v.decision = Decision::reject;
      v.diagnostic = "warning: " + q.id() + " is a backdoor query (score " + std::to_string(s) + " > tau " +
                     std::to_string(config_.threshold.tau) + ")";
    } else {
      v.decision = Decision::allow;
      v.image = std::move(scored.batch.images.front());
    }
    return v;
  }

 private:
  std::shared_ptr<const Backend> backend_;
  DetectorConfig config_;
};

}  // namespace ufid
