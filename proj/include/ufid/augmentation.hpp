#pragma once

// Expands one query into the augmented input batch of size |M|+1.
// Unconditional: batch[j] = x + alpha * eps_j with eps_j ~ N(0, I).
// Conditional:   batch[j] = prompt + separator + phrase_j, phrases drawn
//                without replacement from the pool.

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "ufid/core/error.hpp"
#include "ufid/core/image.hpp"
#include "ufid/core/rng.hpp"

namespace ufid {

struct MagnitudeSet {
  std::size_t size = 4;
  double alpha = 0.01;
  RngSeed seed{};

  void validate() const {
    require(alpha >= 0.0 && std::isfinite(alpha), ErrorCode::invalid_argument, "alpha must be >= 0");
  }
};

class PhrasePool {
 public:
  PhrasePool() = default;

  explicit PhrasePool(std::vector<std::string> phrases, std::string separator = " ")
      : phrases_(std::move(phrases)), separator_(std::move(separator)) {
    std::set<std::string> seen;
    for (const auto& p : phrases_) {
      require(!p.empty(), ErrorCode::invalid_argument, "phrase pool contains an empty phrase");
      require(seen.insert(p).second, ErrorCode::invalid_argument, "duplicate phrase '" + p + "'");
    }
  }

  // Newline-delimited UTF-8; blank lines and '#' comments are skipped.
  static PhrasePool from_file(const std::string& path, std::string separator = " ") {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::missing_file, "cannot open phrase pool " + path);
    return PhrasePool(read_lines(in), std::move(separator));
  }

  static std::vector<std::string> read_lines(std::istream& in) {
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (is_blank(line) || line.front() == '#') continue;
      lines.push_back(line);
    }
    return lines;
  }

  const std::vector<std::string>& phrases() const noexcept { return phrases_; }
  const std::string& separator() const noexcept { return separator_; }
  std::size_t size() const noexcept { return phrases_.size(); }

 private:
  std::vector<std::string> phrases_;
  std::string separator_ = " ";
};

inline std::string augmented_id(const std::string& query_id, std::size_t j) {
  return query_id + "#" + std::to_string(j);
}

inline std::vector<Query> augment_unconditional(const Query& q, const MagnitudeSet& m) {
  require_mode(q, QueryMode::unconditional);
  m.validate();
  const Image& base = q.noise();
  std::vector<Query> batch;
  batch.reserve(m.size + 1);
  batch.push_back(q);
  for (std::size_t j = 1; j <= m.size; ++j) {
    RandomStream eps = derive_rng(m.seed, stream_label("aug", q.id(), j));
    std::vector<float> data(base.data().begin(), base.data().end());
    for (float& v : data) v = static_cast<float>(v + m.alpha * eps.normal());
    batch.push_back(Query::unconditional(augmented_id(q.id(), j), Image(base.shape(), ImageKind::noise, std::move(data))));
  }
  return batch;
}

inline std::vector<Query> augment_conditional(const Query& q, const PhrasePool& pool, const MagnitudeSet& m) {
  require_mode(q, QueryMode::conditional);
  require(pool.size() >= m.size, ErrorCode::pool_too_small,
          "phrase pool has " + std::to_string(pool.size()) + " phrases, need " + std::to_string(m.size));
  std::vector<Query> batch;
  batch.reserve(m.size + 1);
  batch.push_back(q);
  if (m.size == 0) return batch;

  // Partial Fisher-Yates: the first m.size slots become a uniform sample
  // without replacement.
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  RandomStream rng = derive_rng(m.seed, stream_label("phrase", q.id()));
  for (std::size_t j = 0; j < m.size; ++j) {
    const std::size_t pick = j + static_cast<std::size_t>(rng.below(order.size() - j));
    std::swap(order[j], order[pick]);
    batch.push_back(Query::conditional(augmented_id(q.id(), j + 1),
                                       q.prompt() + pool.separator() + pool.phrases()[order[j]]));
  }
  return batch;
}

}  // namespace ufid
