#pragma once

// Positive/negative evaluation harness: builds clean and triggered query sets,
// calibrates tau, scores every query through the detector pipeline and
// reports precision, recall and AUC. Scores follow one orientation: higher
// means more suspicious.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ufid/augmentation.hpp"
#include "ufid/backends.hpp"
#include "ufid/calibration.hpp"
#include "ufid/config.hpp"
#include "ufid/core/error.hpp"
#include "ufid/core/rng.hpp"
#include "ufid/detector.hpp"
#include "ufid/scoring.hpp"

namespace ufid::eval {

// Pairwise-comparison AUC: P(pos > neg) + 0.5 P(pos == neg).
inline double auc(std::span<const double> pos, std::span<const double> neg) {
  require(!pos.empty() && !neg.empty(), ErrorCode::empty_input, "AUC needs non-empty positive and negative scores");
  std::vector<double> sorted_neg(neg.begin(), neg.end());
  std::sort(sorted_neg.begin(), sorted_neg.end());
  double wins = 0.0;
  for (double p : pos) {
    const auto lo = std::lower_bound(sorted_neg.begin(), sorted_neg.end(), p);
    const auto hi = std::upper_bound(lo, sorted_neg.end(), p);
    wins += static_cast<double>(lo - sorted_neg.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

struct PrecisionRecall {
  double precision = 1.0;
  double recall = 0.0;
};

// Predicted positive iff score > tau. Precision is 1 when nothing is predicted.
inline PrecisionRecall precision_recall(std::span<const double> pos, std::span<const double> neg, double tau) {
  require(!pos.empty() && !neg.empty(), ErrorCode::empty_input, "precision/recall needs non-empty score lists");
  const auto tp = static_cast<double>(std::count_if(pos.begin(), pos.end(), [tau](double s) { return s > tau; }));
  const auto fp = static_cast<double>(std::count_if(neg.begin(), neg.end(), [tau](double s) { return s > tau; }));
  PrecisionRecall pr;
  pr.precision = tp + fp == 0.0 ? 1.0 : tp / (tp + fp);
  pr.recall = tp / static_cast<double>(pos.size());
  return pr;
}

enum class TauSource { calibrated, fixed };

struct Sweep {
  std::string param;  // magnitude | n_validation | blending_ratio | alpha
  std::vector<double> values;
};

struct EvalScenario {
  QueryMode mode = QueryMode::unconditional;
  BackendDescriptor backend;
  std::size_t n_positive = 200;
  std::size_t n_negative = 200;
  MagnitudeSet magnitude{};
  ScoringOptions scoring;
  bool combined = false;
  TauSource tau_source = TauSource::calibrated;
  double tau = 0.0;  // used when tau_source == fixed
  std::size_t n_validation = 20;
  std::optional<Sweep> sweep;
  std::uint64_t seed = 0;
  Shape shape{8, 8, 3};
  Image trigger;                                // unconditional positives: delta + noise
  std::string trigger_token = "\xE2\x80\x8B";  // conditional positives
  std::vector<std::string> prompts;             // conditional negatives and validation
  std::optional<PhrasePool> phrases;
  std::size_t histogram_bins = 20;
  std::size_t workers = 1;
  std::map<std::string, std::string> echo;  // configuration as given, for the report

  void validate() const {
    require(n_positive >= 1 && n_negative >= 1, ErrorCode::config, "n_positive and n_negative must be >= 1");
    require(n_validation >= 2 || tau_source == TauSource::fixed, ErrorCode::config, "n_validation must be >= 2");
    if (sweep) {
      auto v = sweep->values;
      std::sort(v.begin(), v.end());
      require(std::adjacent_find(v.begin(), v.end()) == v.end(), ErrorCode::config, "sweep values must be distinct");
      require(!v.empty(), ErrorCode::config, "sweep needs values");
    }
    if (mode == QueryMode::conditional) {
      require(!prompts.empty(), ErrorCode::missing_file, "conditional scenario needs a clean prompt file");
      require(phrases.has_value(), ErrorCode::config, "conditional scenario needs a phrase pool");
    }
  }
};

struct Datasets {
  std::vector<Query> negatives;
  std::vector<Query> positives;
  std::vector<Query> validation;
};

inline Image standard_normal_image(RngSeed seed, const std::string& label, Shape shape, const Image* offset = nullptr) {
  RandomStream rng(seed, label);
  std::vector<float> data(shape.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    data[i] = static_cast<float>(rng.normal() + (offset ? offset->data()[i] : 0.0f));
  return Image(shape, ImageKind::noise, std::move(data));
}

inline Datasets build_datasets(const EvalScenario& s) {
  Datasets d;
  const RngSeed seed{s.seed};
  if (s.mode == QueryMode::unconditional) {
    require(s.trigger.shape() == s.shape, ErrorCode::config, "scenario trigger must match the image shape");
    for (std::size_t i = 0; i < s.n_negative; ++i) {
      const std::string id = stream_label("neg", i);
      d.negatives.push_back(Query::unconditional(id, standard_normal_image(seed, stream_label("data", id), s.shape)));
    }
    for (std::size_t i = 0; i < s.n_positive; ++i) {
      const std::string id = stream_label("pos", i);
      d.positives.push_back(
          Query::unconditional(id, standard_normal_image(seed, stream_label("data", id), s.shape, &s.trigger)));
    }
    for (std::size_t i = 0; i < s.n_validation; ++i) {
      const std::string id = stream_label("val", i);
      d.validation.push_back(Query::unconditional(id, standard_normal_image(seed, stream_label("data", id), s.shape)));
    }
    return d;
  }

  require(!s.prompts.empty(), ErrorCode::missing_file, "conditional scenario needs a clean prompt file");
  const std::size_t needed = std::max(s.n_negative, s.n_positive) + s.n_validation;
  require(s.prompts.size() >= needed, ErrorCode::config,
          "prompt file has " + std::to_string(s.prompts.size()) + " prompts, scenario needs " + std::to_string(needed));
  for (std::size_t i = 0; i < s.n_negative; ++i)
    d.negatives.push_back(Query::conditional(stream_label("neg", i), s.prompts[i]));
  for (std::size_t i = 0; i < s.n_positive; ++i)
    d.positives.push_back(Query::conditional(stream_label("pos", i), s.trigger_token + " " + s.prompts[i]));
  const std::size_t hold_out = std::max(s.n_negative, s.n_positive);
  for (std::size_t i = 0; i < s.n_validation; ++i)
    d.validation.push_back(Query::conditional(stream_label("val", i), s.prompts[hold_out + i]));
  return d;
}

struct ScoreRow {
  std::string query_id;
  int label = 0;  // 1 = triggered
  ScoreRecord record;
  StageTimings timings;
};

struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double auc = 0.0;
  double tau = 0.0;
  std::size_t n_positive = 0;
  std::size_t n_negative = 0;
  double mean_positive_score = 0.0;
  double mean_negative_score = 0.0;
  std::uint64_t backend_generations = 0;
  std::map<std::string, std::string> scenario;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["precision"] = precision;
    j["recall"] = recall;
    j["auc"] = auc;
    j["tau"] = tau;
    j["n_positive"] = n_positive;
    j["n_negative"] = n_negative;
    j["mean_positive_score"] = mean_positive_score;
    j["mean_negative_score"] = mean_negative_score;
    j["backend_generations"] = backend_generations;
    j["scenario"] = scenario;
    return j;
  }
};

struct ScenarioResult {
  MetricsReport metrics;
  std::vector<ScoreRow> rows;
  Threshold threshold;

  std::vector<double> scores(int label) const {
    std::vector<double> out;
    for (const auto& r : rows)
      if (r.label == label) out.push_back(r.record.detection_score());
    return out;
  }
};

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream o;
  o << std::setprecision(17) << v;
  return o.str();
}

inline void write_scores_csv(std::ostream& out, const std::vector<ScoreRow>& rows) {
  out << "query_id,label,ds,corre,combined,augment_ms,generation_ms,similarity_ms,total_ms\n";
  for (const auto& r : rows) {
    out << r.query_id << ',' << r.label << ',' << fmt(r.record.density) << ','
        << (r.record.corre ? fmt(*r.record.corre) : "") << ',' << (r.record.combined ? fmt(*r.record.combined) : "")
        << ',' << fmt(r.timings.augment_ms) << ',' << fmt(r.timings.generation_ms) << ','
        << fmt(r.timings.similarity_ms) << ',' << fmt(r.timings.total_ms) << '\n';
  }
}

}  // namespace detail

// Histogram of detection scores per class over a shared range.
inline std::string histogram_csv(const ScenarioResult& r, std::size_t bins) {
  require(bins >= 1, ErrorCode::config, "histogram needs at least one bin");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& row : r.rows) {
    lo = std::min(lo, row.record.detection_score());
    hi = std::max(hi, row.record.detection_score());
  }
  if (r.rows.empty()) lo = hi = 0.0;
  if (hi <= lo) hi = lo + 1.0;
  std::vector<std::size_t> clean(bins, 0), backdoor(bins, 0);
  for (const auto& row : r.rows) {
    auto b = static_cast<std::size_t>((row.record.detection_score() - lo) / (hi - lo) * double(bins));
    b = std::min(b, bins - 1);
    (row.label ? backdoor : clean)[b]++;
  }
  std::ostringstream out;
  out << "bin_lo,bin_hi,clean,backdoor\n";
  for (std::size_t b = 0; b < bins; ++b)
    out << detail::fmt(lo + (hi - lo) * double(b) / double(bins)) << ','
        << detail::fmt(lo + (hi - lo) * double(b + 1) / double(bins)) << ',' << clean[b] << ',' << backdoor[b] << '\n';
  return out.str();
}

inline void write_outputs(const std::filesystem::path& dir, const ScenarioResult& r, std::size_t bins) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "scores.csv");
    detail::write_scores_csv(out, r.rows);
  }
  {
    std::ofstream out(dir / "scores.jsonl");
    for (const auto& row : r.rows) {
      auto j = row.record.to_json();
      j["label"] = row.label;
      out << j.dump() << '\n';
    }
  }
  std::ofstream(dir / "metrics.json") << r.metrics.to_json().dump(2) << '\n';
  std::ofstream(dir / "histogram.csv") << histogram_csv(r, bins);
  r.threshold.save((dir / "threshold.json").string());
}

inline void write_manifest(const std::filesystem::path& dir, const std::string& status, std::size_t completed,
                           std::size_t total, const std::string& error = "") {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json j;
  j["status"] = status;
  j["completed_queries"] = completed;
  j["total_queries"] = total;
  if (!error.empty()) j["error"] = error;
  std::ofstream(dir / "manifest.json") << j.dump(2) << '\n';
}

inline DetectorConfig detector_config(const EvalScenario& s, Threshold threshold) {
  DetectorConfig cfg;
  cfg.mode = s.mode;
  cfg.magnitude = s.magnitude;
  cfg.magnitude.seed = RngSeed{s.seed};
  cfg.phrases = s.phrases;
  cfg.scoring = s.scoring;
  cfg.threshold = std::move(threshold);
  cfg.combined = s.combined;
  return cfg;
}

// Runs the full pipeline for every query. With `out_dir`, writes the score
// table and metrics, or a partial-results manifest if anything fails.
inline ScenarioResult run_scenario(const EvalScenario& s, const std::filesystem::path* out_dir = nullptr) {
  s.validate();
  const auto data = build_datasets(s);
  auto counting = std::make_shared<CountingBackend>(make_backend(s.backend));

  ScenarioResult result;
  std::vector<std::pair<const Query*, int>> work;
  for (const auto& q : data.negatives) work.emplace_back(&q, 0);
  for (const auto& q : data.positives) work.emplace_back(&q, 1);
  std::vector<std::optional<ScoreRow>> rows(work.size());

  try {
    if (s.tau_source == TauSource::calibrated) {
      CalibrationOptions copt;
      copt.scoring = s.scoring;
      copt.combined = s.combined;
      copt.magnitude = s.magnitude.size;
      copt.created_at = "scenario seed " + std::to_string(s.seed);
      result.threshold = calibrate(data.validation, *counting, copt);
    } else {
      result.threshold.tau = s.tau;
      result.threshold.n_validation = std::max<std::size_t>(2, s.n_validation);
      result.threshold.metric = s.scoring.metric.kind;
      result.threshold.density_mode = s.scoring.mode;
      result.threshold.backend_id = counting->id();
      result.threshold.combined = s.combined;
      result.threshold.created_at = "fixed";
    }
    counting->reset();
    const Detector detector(counting, detector_config(s, result.threshold));

    const std::size_t workers = std::max<std::size_t>(1, std::min(s.workers, work.size()));
    std::vector<std::string> errors(workers);
    auto run_range = [&](std::size_t w) {
      try {
        for (std::size_t i = w; i < work.size(); i += workers) {
          const auto scored = detector.score(*work[i].first);
          rows[i] = ScoreRow{work[i].first->id(), work[i].second, scored.record, scored.timings};
        }
      } catch (const std::exception& e) {
        errors[w] = e.what();
      }
    };
    if (workers == 1) {
      run_range(0);
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run_range, w);
    }
    for (const auto& e : errors)
      if (!e.empty()) fail(ErrorCode::transport, "scenario aborted: " + e);
  } catch (const std::exception& e) {
    if (out_dir) {
      std::vector<ScoreRow> done;
      for (auto& r : rows)
        if (r) done.push_back(*r);
      std::filesystem::create_directories(*out_dir);
      std::ofstream out(*out_dir / "scores.partial.csv");
      detail::write_scores_csv(out, done);
      write_manifest(*out_dir, "aborted", done.size(), work.size(), e.what());
    }
    throw;
  }

  for (auto& r : rows) result.rows.push_back(std::move(*r));
  const auto pos = result.scores(1);
  const auto neg = result.scores(0);
  const auto pr = precision_recall(pos, neg, result.threshold.tau);
  auto mean = [](const std::vector<double>& v) {
    double t = 0.0;
    for (double x : v) t += x;
    return t / static_cast<double>(v.size());
  };
  result.metrics.precision = pr.precision;
  result.metrics.recall = pr.recall;
  result.metrics.auc = auc(pos, neg);
  result.metrics.tau = result.threshold.tau;
  result.metrics.n_positive = pos.size();
  result.metrics.n_negative = neg.size();
  result.metrics.mean_positive_score = mean(pos);
  result.metrics.mean_negative_score = mean(neg);
  result.metrics.backend_generations = counting->generations();
  result.metrics.scenario = s.echo;

  if (out_dir) {
    write_outputs(*out_dir, result, s.histogram_bins);
    write_manifest(*out_dir, "complete", result.rows.size(), work.size());
  }
  return result;
}

inline EvalScenario with_sweep_value(EvalScenario s, const std::string& param, double value) {
  if (param == "magnitude") {
    s.magnitude.size = static_cast<std::size_t>(value);
  } else if (param == "n_validation") {
    s.n_validation = static_cast<std::size_t>(value);
  } else if (param == "alpha") {
    s.magnitude.alpha = value;
  } else if (param == "blending_ratio") {
    require(s.backend.synthetic.has_value(), ErrorCode::config, "blending_ratio sweeps need a synthetic backend");
    s.backend.synthetic->blending_ratio = value;
    s.backend.synthetic->validate();
  } else {
    fail(ErrorCode::config, "unknown sweep parameter '" + param + "'");
  }
  s.echo[param] = detail::fmt(value);
  s.sweep.reset();
  return s;
}

struct SweepPoint {
  double value = 0.0;
  MetricsReport metrics;
};

inline std::vector<SweepPoint> run_sweep(const EvalScenario& s, const std::filesystem::path* out_dir = nullptr) {
  require(s.sweep.has_value(), ErrorCode::config, "scenario has no sweep");
  std::vector<SweepPoint> points;
  for (double v : s.sweep->values) {
    const auto sub = with_sweep_value(s, s.sweep->param, v);
    std::optional<std::filesystem::path> sub_dir;
    if (out_dir) sub_dir = *out_dir / (s.sweep->param + "_" + detail::fmt(v));
    points.push_back({v, run_scenario(sub, sub_dir ? &*sub_dir : nullptr).metrics});
  }
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    std::ofstream out(*out_dir / "sweep.csv");
    out << s.sweep->param << ",precision,recall,auc,tau\n";
    for (const auto& p : points)
      out << detail::fmt(p.value) << ',' << detail::fmt(p.metrics.precision) << ',' << detail::fmt(p.metrics.recall)
          << ',' << detail::fmt(p.metrics.auc) << ',' << detail::fmt(p.metrics.tau) << '\n';
  }
  return points;
}

inline std::vector<std::string> read_prompt_file(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::missing_file, "cannot open prompt file " + path);
  return PhrasePool::read_lines(in);
}

inline Sweep parse_sweep(const std::string& spec) {
  const auto colon = spec.find(':');
  require(colon != std::string::npos, ErrorCode::config, "sweep must look like 'param:v1,v2,...'");
  Sweep sw;
  sw.param = trim(spec.substr(0, colon));
  std::stringstream values(spec.substr(colon + 1));
  std::string item;
  while (std::getline(values, item, ',')) {
    try {
      sw.values.push_back(std::stod(trim(item)));
    } catch (...) {
      fail(ErrorCode::config, "bad sweep value '" + item + "'");
    }
  }
  return sw;
}

// Scenario file keys (all optional unless noted): mode, backend, url, shape,
// sigma_c, sigma_b, trigger_threshold, blending_ratio, trigger_token,
// substitution, n_positive, n_negative, magnitude, alpha, metric, encoder,
// encoder_url, density_mode, combined, tau_source, tau, n_validation, sweep,
// seed, prompts (required for conditional), phrases (required for
// conditional), histogram_bins, workers. Relative paths resolve against the
// scenario file's directory.
inline EvalScenario scenario_from_config(const KeyValueConfig& cfg, std::optional<std::uint64_t> seed_override = {}) {
  EvalScenario s;
  s.echo = cfg.values();
  auto resolve = [&cfg](const std::string& p) { return cfg.resolve_path(p); };
  s.mode = parse_query_mode(cfg.get("mode", "unconditional"));
  s.seed = seed_override.value_or(cfg.get_u64("seed", 0));
  if (seed_override) s.echo["seed"] = std::to_string(*seed_override);
  s.backend = backend_from(cfg, s.mode, s.seed);
  s.shape = s.backend.synthetic ? s.backend.synthetic->shape : parse_shape(cfg.get("shape", "8x8x3"));
  s.trigger = s.backend.synthetic ? s.backend.synthetic->trigger
                                  : (cfg.has("trigger") ? read_image_file(resolve(cfg.get("trigger", "")))
                                                        : default_trigger(s.shape));
  if (cfg.has("trigger_token")) s.trigger_token = unescape_unicode(cfg.get("trigger_token", ""));
  else if (s.backend.synthetic) s.trigger_token = s.backend.synthetic->trigger_token;
  s.n_positive = cfg.get_u64("n_positive", s.n_positive);
  s.n_negative = cfg.get_u64("n_negative", s.n_negative);
  s.magnitude.size = cfg.get_u64("magnitude", s.magnitude.size);
  s.magnitude.alpha = cfg.get_double("alpha", s.magnitude.alpha);
  s.combined = cfg.get_bool("combined", false);
  s.scoring = scoring_from(cfg, s.shape.channels, s.combined);
  const std::string tau_source = cfg.get("tau_source", "calibrated");
  require(tau_source == "calibrated" || tau_source == "fixed", ErrorCode::config, "tau_source must be calibrated|fixed");
  s.tau_source = tau_source == "fixed" ? TauSource::fixed : TauSource::calibrated;
  if (s.tau_source == TauSource::fixed) s.tau = cfg.parse_double("tau", cfg.require_string("tau"));
  s.n_validation = cfg.get_u64("n_validation", s.n_validation);
  if (cfg.has("sweep")) s.sweep = parse_sweep(cfg.get("sweep", ""));
  if (cfg.has("prompts")) s.prompts = read_prompt_file(resolve(cfg.get("prompts", "")));
  if (cfg.has("phrases")) s.phrases = PhrasePool::from_file(resolve(cfg.get("phrases", "")));
  s.histogram_bins = cfg.get_u64("histogram_bins", s.histogram_bins);
  s.workers = cfg.get_u64("workers", s.workers);
  cfg.reject_unknown();
  s.validate();
  return s;
}

}  // namespace ufid::eval
