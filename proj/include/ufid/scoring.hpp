#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ufid/core/error.hpp"
#include "ufid/core/image.hpp"
#include "ufid/similarity.hpp"

namespace ufid {

enum class DensityMode {
  mean_pairs,         // average over all B(B-1)/2 pairs; identical batch -> 1
  paper_denominator,  // pair sum / (|M|(|M|-1)) with |M| = B - 1
};

inline std::string_view to_string(DensityMode m) {
  return m == DensityMode::mean_pairs ? "mean_pairs" : "paper_denominator";
}

inline DensityMode parse_density_mode(std::string_view s) {
  if (s == "mean_pairs") return DensityMode::mean_pairs;
  if (s == "paper_denominator") return DensityMode::paper_denominator;
  fail(ErrorCode::config, "unknown density mode '" + std::string(s) + "'");
}

// Complete weighted graph over B generations; weights packed upper-triangular.
class SimilarityGraph {
 public:
  SimilarityGraph(std::size_t vertex_count, std::vector<double> weights)
      : vertex_count_(vertex_count), weights_(std::move(weights)) {
    require(vertex_count_ >= 2, ErrorCode::too_few_vertices,
            "similarity graph needs at least 2 vertices, got " + std::to_string(vertex_count_));
    require(weights_.size() == pair_count(vertex_count_), ErrorCode::invalid_argument,
            "graph needs " + std::to_string(pair_count(vertex_count_)) + " edge weights, got " +
                std::to_string(weights_.size()));
    for (double w : weights_)
      require(std::isfinite(w) && w >= -1.0 && w <= 1.0, ErrorCode::invalid_argument, "edge weight outside [-1,1]");
  }

  std::size_t vertex_count() const noexcept { return vertex_count_; }
  const std::vector<double>& weights() const noexcept { return weights_; }
  double weight(std::size_t m, std::size_t n) const {
    if (m > n) std::swap(m, n);
    require(m != n && n < vertex_count_, ErrorCode::invalid_argument, "no such edge");
    return weights_[pair_index(m, n, vertex_count_)];
  }

  // Mean similarity of each vertex to every other vertex.
  std::vector<double> node_averages() const {
    std::vector<double> sums(vertex_count_, 0.0);
    for (std::size_t m = 0; m < vertex_count_; ++m)
      for (std::size_t n = m + 1; n < vertex_count_; ++n) {
        const double w = weights_[pair_index(m, n, vertex_count_)];
        sums[m] += w;
        sums[n] += w;
      }
    for (double& s : sums) s /= static_cast<double>(vertex_count_ - 1);
    return sums;
  }

 private:
  std::size_t vertex_count_;
  std::vector<double> weights_;
};

inline double graph_density(const SimilarityGraph& g, DensityMode mode = DensityMode::mean_pairs) {
  double total = 0.0;
  for (double w : g.weights()) total += w;
  const auto b = static_cast<double>(g.vertex_count());
  if (mode == DensityMode::mean_pairs) return total * 2.0 / (b * (b - 1.0));
  const double m = b - 1.0;
  require(m >= 2.0, ErrorCode::too_few_vertices, "paper_denominator density needs |M| >= 2");
  return total / (m * (m - 1.0));
}

// -<E(image), E(text)>; higher means the generation disagrees with the prompt.
inline double corre_score(const Query& prompt, const Image& generation, const Encoder& encoder) {
  require_mode(prompt, QueryMode::conditional);
  require(encoder.supports_text(), ErrorCode::invalid_argument, "Corre needs a text-capable encoder");
  const Embedding img = normalized(embed(generation, encoder));
  const auto texts = encoder.embed_texts(std::span<const std::string>(&prompt.prompt(), 1));
  require(texts.size() == 1, ErrorCode::protocol, "encoder returned wrong text embedding count");
  const Embedding txt = normalized(texts.front());
  require(img.encoder_id == txt.encoder_id && img.dim() == txt.dim(), ErrorCode::encoder_mismatch,
          "text and image embeddings are not in one space");
  double dot = 0.0;
  for (std::size_t i = 0; i < img.dim(); ++i) dot += img.values[i] * txt.values[i];
  return -dot;
}

// Corre + (|M| - 1) * DS.
inline double combined_score(double density, double corre, std::size_t magnitude) {
  require(magnitude >= 2, ErrorCode::invalid_argument, "combined score needs |M| >= 2");
  return corre + static_cast<double>(magnitude - 1) * density;
}

struct ScoreRecord {
  std::string query_id;
  double density = 0.0;
  std::optional<double> corre;
  std::optional<double> combined;
  MetricKind metric = MetricKind::encoder_cosine;
  DensityMode mode = DensityMode::mean_pairs;

  // The value compared against the threshold.
  double detection_score() const noexcept { return combined.value_or(density); }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["query_id"] = query_id;
    j["density"] = density;
    j["corre"] = corre ? nlohmann::ordered_json(*corre) : nlohmann::ordered_json(nullptr);
    j["combined"] = combined ? nlohmann::ordered_json(*combined) : nlohmann::ordered_json(nullptr);
    j["metric"] = std::string(to_string(metric));
    j["density_mode"] = std::string(to_string(mode));
    return j;
  }
};

struct ScoringOptions {
  SimilarityMetric metric;
  DensityMode mode = DensityMode::mean_pairs;
  // When set, Corre and the combined score are computed for conditional queries.
  std::shared_ptr<const Encoder> multimodal;
};

// Scores the full batch (all |M|+1 generations). Corre uses images[0], the
// generation returned to the client. Any failed pair aborts with an Error.
inline ScoreRecord score_batch(GeneratedBatch& batch, const ScoringOptions& options, const Query* original = nullptr) {
  require(batch.images.size() >= 2, ErrorCode::too_few_vertices,
          "batch " + batch.query_id + " has " + std::to_string(batch.images.size()) + " images");
  batch.pair_similarities = pairwise_similarities(batch.images, options.metric);
  const SimilarityGraph graph(batch.images.size(), *batch.pair_similarities);

  ScoreRecord rec;
  rec.query_id = batch.query_id;
  rec.metric = options.metric.kind;
  rec.mode = options.mode;
  rec.density = graph_density(graph, options.mode);
  if (options.multimodal && original != nullptr && original->mode() == QueryMode::conditional) {
    rec.corre = corre_score(*original, batch.images.front(), *options.multimodal);
    rec.combined = combined_score(rec.density, *rec.corre, batch.images.size() - 1);
  }
  return rec;
}

}  // namespace ufid
