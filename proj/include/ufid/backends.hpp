#pragma once

// Model backends and the synthetic generator/encoder pair used to exercise the
// detector without real diffusion weights.
//
// Synthetic unconditional law, for input noise x:
//   t     = <x, delta> / ||delta||^2         trigger projection
//   r     = x - t * delta                     residual
//   rho2  = var(r)                            input variance estimate
//   clean:    y = x_c + sqrt(sigma_c / rho2) * z
//   backdoor: y = x_b + sqrt(sigma_b / rho2) * z       (when t > trigger_threshold)
// z ~ N(0, I) from a stream keyed by (seed, query id, input content), and y is
// clamped to [0, 1]. sigma_c and sigma_b are per-element variances, so the
// clean output variance is sigma_c / rho2.
//
// Synthetic conditional law: a prompt containing the trigger token maps to x_b
// (or, with a substitution rule, to the concept of the substituted prompt);
// other prompts map to the concept pattern of their own token bag. Concept
// patterns live in the same space as SyntheticEncoder text embeddings.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ufid/core/error.hpp"
#include "ufid/core/image.hpp"
#include "ufid/core/rng.hpp"
#include "ufid/core/serialize.hpp"
#include "ufid/similarity.hpp"

namespace ufid {

class Backend {
 public:
  virtual ~Backend() = default;

  virtual std::string id() const = 0;
  // One pixel image per input, in input order.
  virtual std::vector<Image> generate(std::span<const Query> inputs) const = 0;
  virtual void health_check() const {}
};

inline void require_uniform_mode(std::span<const Query> inputs, std::optional<QueryMode> supported = std::nullopt) {
  if (inputs.empty()) return;
  const QueryMode mode = inputs.front().mode();
  for (const auto& q : inputs)
    require(q.mode() == mode, ErrorCode::mode_mismatch, "generate inputs mix conditional and unconditional queries");
  if (supported)
    require(mode == *supported, ErrorCode::mode_mismatch,
            "backend serves " + std::string(to_string(*supported)) + " queries, got " + std::string(to_string(mode)));
}

// ---------------------------------------------------------------------------
// Concept space shared by the synthetic encoder and the conditional backend.

inline constexpr std::size_t kPatchGrid = 4;  // 4 x 4 = 16 patches
inline constexpr std::uint64_t kConceptSpaceRoot = 0xC0C0A5EEDULL;

// Lower-cased runs of ASCII letters and digits; everything else separates.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (u < 128 && std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

// Order-insensitive key of a prompt: its sorted token multiset.
inline std::string token_bag(std::string_view text) {
  auto tokens = tokenize(text);
  std::sort(tokens.begin(), tokens.end());
  std::string bag;
  for (const auto& t : tokens) {
    if (!bag.empty()) bag.push_back(' ');
    bag += t;
  }
  return bag;
}

inline std::vector<double> concept_vector(std::string_view bag, std::size_t dim) {
  RandomStream rng(RngSeed{kConceptSpaceRoot}, stream_label("concept", bag));
  std::vector<double> v(dim);
  double norm2 = 0.0;
  for (double& x : v) {
    x = rng.normal();
    norm2 += x * x;
  }
  const double norm = std::sqrt(norm2);
  for (double& x : v) x /= norm;
  return v;
}

// Patch rows/cols partition [0, extent) into kPatchGrid nearly equal bands.
inline std::size_t patch_band(std::size_t coord, std::size_t extent) { return coord * kPatchGrid / extent; }

// Pixel image whose centered patch means are proportional to `concept_vec`.
inline Image concept_pattern(std::span<const double> concept_vec, Shape shape) {
  require(concept_vec.size() == kPatchGrid * kPatchGrid * shape.channels, ErrorCode::dimension_mismatch,
          "concept dimension does not match image channels");
  double peak = 0.0;
  for (double x : concept_vec) peak = std::max(peak, std::abs(x));
  const double amplitude = peak > 0.0 ? 0.45 / peak : 0.0;
  std::vector<float> data(shape.size());
  for (std::size_t h = 0; h < shape.height; ++h)
    for (std::size_t w = 0; w < shape.width; ++w)
      for (std::size_t c = 0; c < shape.channels; ++c) {
        const std::size_t patch = patch_band(h, shape.height) * kPatchGrid + patch_band(w, shape.width);
        data[(h * shape.width + w) * shape.channels + c] =
            static_cast<float>(0.5 + amplitude * concept_vec[patch * shape.channels + c]);
      }
  return Image(shape, ImageKind::pixel, std::move(data));
}

// Stand-in for a pre-trained multimodal encoder. Images embed as their
// 16 patch means per channel minus mid-gray; text embeds as the concept
// vector of its token bag. Both are L2-normalized.
class SyntheticEncoder final : public Encoder {
 public:
  explicit SyntheticEncoder(std::size_t channels = 3) : channels_(channels) {}

  std::string id() const override { return "synthetic-patch16-c" + std::to_string(channels_); }
  std::size_t dim() const noexcept { return kPatchGrid * kPatchGrid * channels_; }

  std::vector<Embedding> embed_images(std::span<const Image> images) const override {
    std::vector<Embedding> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(encode_image(img));
    return out;
  }

  bool supports_text() const override { return true; }

  std::vector<Embedding> embed_texts(std::span<const std::string> texts) const override {
    std::vector<Embedding> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(Embedding{concept_vector(token_bag(t), dim()), id()});
    return out;
  }

  Embedding encode_image(const Image& img) const {
    const Shape& s = img.shape();
    require(s.channels == channels_, ErrorCode::shape_mismatch,
            "encoder expects " + std::to_string(channels_) + " channels, got " + to_string(s));
    require(s.height >= kPatchGrid && s.width >= kPatchGrid, ErrorCode::shape_mismatch,
            "image " + to_string(s) + " smaller than the 4x4 patch grid");
    std::vector<double> sums(dim(), 0.0);
    std::vector<double> counts(kPatchGrid * kPatchGrid, 0.0);
    const auto data = img.data();
    for (std::size_t h = 0; h < s.height; ++h)
      for (std::size_t w = 0; w < s.width; ++w) {
        const std::size_t patch = patch_band(h, s.height) * kPatchGrid + patch_band(w, s.width);
        counts[patch] += 1.0;
        for (std::size_t c = 0; c < s.channels; ++c)
          sums[patch * s.channels + c] += data[(h * s.width + w) * s.channels + c];
      }
    for (std::size_t i = 0; i < sums.size(); ++i) sums[i] = sums[i] / counts[i / s.channels] - 0.5;
    if (l2_norm(sums) == 0.0) {
      // A flat mid-gray image has no direction; give it the all-equal one.
      std::fill(sums.begin(), sums.end(), 1.0);
    }
    return normalized(Embedding{std::move(sums), id()});
  }

 private:
  std::size_t channels_;
};

// ---------------------------------------------------------------------------
// Synthetic generator.

struct SubstitutionRule {
  std::string from;  // concept token in the prompt
  std::string to;    // concept actually generated
};

struct SyntheticParams {
  Shape shape{8, 8, 3};
  Image x_c;  // clean mean image
  double sigma_c = 3.0;
  Image x_b;  // backdoor target image
  double sigma_b = 0.5;
  Image trigger;  // delta, noise kind
  double trigger_threshold = 0.5;
  double blending_ratio = 0.0;
  std::string trigger_token = "\xE2\x80\x8B";  // U+200B zero-width space
  std::optional<SubstitutionRule> substitution;
  RngSeed seed{};
  // Skip the final clamp; outputs are then noise-kind images. Used to check
  // variances before clamping distorts them.
  bool unclamped = false;

  void validate() const {
    require(shape.size() > 0, ErrorCode::config, "synthetic shape must be non-empty");
    require(sigma_c > 0.0 && sigma_b > 0.0, ErrorCode::config, "sigma_c and sigma_b must be positive");
    require(trigger_threshold > 0.0 && trigger_threshold < 1.0, ErrorCode::config, "trigger_threshold must be in (0,1)");
    require(blending_ratio >= 0.0 && blending_ratio < 1.0, ErrorCode::config, "blending_ratio must be in [0,1)");
    require(x_c.shape() == shape && x_b.shape() == shape && trigger.shape() == shape, ErrorCode::config,
            "x_c, x_b and trigger must have the synthetic shape " + to_string(shape));
    require(x_c.kind() == ImageKind::pixel && x_b.kind() == ImageKind::pixel, ErrorCode::config,
            "x_c and x_b must be pixel images");
    double norm2 = 0.0;
    for (float v : trigger.data()) norm2 += double(v) * v;
    require(norm2 > 0.0, ErrorCode::config, "trigger must be nonzero");
    require(!trigger_token.empty(), ErrorCode::config, "trigger token must be non-empty");
  }
};

// Smooth diagonal gradient in [0.25, 0.75].
inline Image default_clean_mean(Shape s) {
  std::vector<float> data(s.size());
  const double span = std::max<std::size_t>(1, s.height + s.width - 2);
  for (std::size_t h = 0; h < s.height; ++h)
    for (std::size_t w = 0; w < s.width; ++w)
      for (std::size_t c = 0; c < s.channels; ++c)
        data[(h * s.width + w) * s.channels + c] = static_cast<float>(0.25 + 0.5 * double(h + w) / span);
  return Image(s, ImageKind::pixel, std::move(data));
}

// Checkerboard of 0.1 / 0.9 blocks, phase shifted per channel.
inline Image default_target(Shape s) {
  std::vector<float> data(s.size());
  const std::size_t bh = std::max<std::size_t>(1, s.height / kPatchGrid);
  const std::size_t bw = std::max<std::size_t>(1, s.width / kPatchGrid);
  for (std::size_t h = 0; h < s.height; ++h)
    for (std::size_t w = 0; w < s.width; ++w)
      for (std::size_t c = 0; c < s.channels; ++c)
        data[(h * s.width + w) * s.channels + c] = ((h / bh + w / bw + c) % 2) ? 0.9f : 0.1f;
  return Image(s, ImageKind::pixel, std::move(data));
}

// Constant 2.0 stamp over the top-left quadrant, zero elsewhere.
inline Image default_trigger(Shape s) {
  std::vector<float> data(s.size(), 0.0f);
  const std::size_t hh = std::max<std::size_t>(1, s.height / 2);
  const std::size_t hw = std::max<std::size_t>(1, s.width / 2);
  for (std::size_t h = 0; h < hh; ++h)
    for (std::size_t w = 0; w < hw; ++w)
      for (std::size_t c = 0; c < s.channels; ++c) data[(h * s.width + w) * s.channels + c] = 2.0f;
  return Image(s, ImageKind::noise, std::move(data));
}

inline SyntheticParams default_synthetic_params(Shape shape = {8, 8, 3}, std::uint64_t seed = 0) {
  SyntheticParams p;
  p.shape = shape;
  p.x_c = default_clean_mean(shape);
  p.x_b = default_target(shape);
  p.trigger = default_trigger(shape);
  p.seed = RngSeed{seed};
  return p;
}

struct TriggerAnalysis {
  double projection = 0.0;      // t
  double residual_variance = 0.0;  // rho2 estimate
};

inline TriggerAnalysis analyze_trigger(const Image& input, const Image& trigger) {
  require(input.shape() == trigger.shape(), ErrorCode::shape_mismatch,
          "input " + to_string(input.shape()) + " vs trigger " + to_string(trigger.shape()));
  const auto x = input.data();
  const auto d = trigger.data();
  double dot = 0.0, dd = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += double(x[i]) * d[i];
    dd += double(d[i]) * d[i];
  }
  const double t = dot / dd;
  double mean = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mean += x[i] - t * d[i];
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = x[i] - t * d[i] - mean;
    var += r * r;
  }
  return {t, var / static_cast<double>(x.size())};
}

inline std::string content_key(const Query& q) {
  const std::uint64_t h =
      q.mode() == QueryMode::unconditional ? fnv1a64(serialize_payload(q.noise())) : fnv1a64(q.prompt());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline bool contains_trigger(std::string_view prompt, std::string_view token) {
  return prompt.find(token) != std::string_view::npos;
}

// Prompt with every trigger occurrence removed and the substitution applied
// at token level (appended when the source concept is absent).
inline std::string substituted_prompt(std::string_view prompt, const SyntheticParams& p) {
  std::string text(prompt);
  for (std::size_t at; (at = text.find(p.trigger_token)) != std::string::npos;) text.erase(at, p.trigger_token.size());
  if (!p.substitution) return text;
  auto tokens = tokenize(text);
  bool replaced = false;
  for (auto& t : tokens)
    if (t == p.substitution->from) {
      t = p.substitution->to;
      replaced = true;
    }
  if (!replaced) tokens.push_back(p.substitution->to);
  std::string out;
  for (const auto& t : tokens) out += (out.empty() ? "" : " ") + t;
  return out;
}

inline std::string synthetic_generation_label(const Query& q) { return stream_label("gen", q.id(), content_key(q)); }

inline Image synthetic_generate_one(const SyntheticParams& params, const Query& q) {
  RandomStream rng(params.seed, synthetic_generation_label(q));
  const Image* mean = nullptr;
  Image concept_mean;
  double variance = 0.0;

  if (q.mode() == QueryMode::unconditional) {
    const Image& x = q.noise();
    require(x.shape() == params.shape, ErrorCode::shape_mismatch,
            "input " + to_string(x.shape()) + " vs backend shape " + to_string(params.shape));
    const auto [t, rho2_raw] = analyze_trigger(x, params.trigger);
    const double rho2 = std::max(rho2_raw, 1e-6);
    const bool backdoor = t > params.trigger_threshold && !rng.bernoulli(params.blending_ratio);
    mean = backdoor ? &params.x_b : &params.x_c;
    variance = (backdoor ? params.sigma_b : params.sigma_c) / rho2;
  } else {
    const std::size_t dim = kPatchGrid * kPatchGrid * params.shape.channels;
    const std::string& prompt = q.prompt();
    const bool backdoor = contains_trigger(prompt, params.trigger_token) && !rng.bernoulli(params.blending_ratio);
    if (backdoor && !params.substitution) {
      mean = &params.x_b;
    } else {
      const std::string key = backdoor ? token_bag(substituted_prompt(prompt, params)) : token_bag(prompt);
      concept_mean = concept_pattern(concept_vector(key, dim), params.shape);
      mean = &concept_mean;
    }
    variance = backdoor ? params.sigma_b : params.sigma_c;
  }

  const double scale = std::sqrt(variance);
  std::vector<float> out(params.shape.size());
  const auto mu = mean->data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double y = mu[i] + scale * rng.normal();
    out[i] = static_cast<float>(params.unclamped ? y : std::clamp(y, 0.0, 1.0));
  }
  return Image(params.shape, params.unclamped ? ImageKind::noise : ImageKind::pixel, std::move(out));
}

class SyntheticBackend final : public Backend {
 public:
  SyntheticBackend(SyntheticParams params, QueryMode mode) : params_(std::move(params)), mode_(mode) {
    params_.validate();
  }

  std::string id() const override { return std::string("synthetic-") + std::string(to_string(mode_)); }
  QueryMode mode() const noexcept { return mode_; }
  const SyntheticParams& params() const noexcept { return params_; }

  std::vector<Image> generate(std::span<const Query> inputs) const override {
    require_uniform_mode(inputs, mode_);
    std::vector<Image> out;
    out.reserve(inputs.size());
    for (const auto& q : inputs) out.push_back(synthetic_generate_one(params_, q));
    return out;
  }

 private:
  SyntheticParams params_;
  QueryMode mode_;
};

// Counts calls and generated images; used for the exact cost accounting.
class CountingBackend final : public Backend {
 public:
  explicit CountingBackend(std::shared_ptr<const Backend> inner) : inner_(std::move(inner)) {}

  std::string id() const override { return inner_->id(); }
  void health_check() const override { inner_->health_check(); }

  std::vector<Image> generate(std::span<const Query> inputs) const override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    generations_.fetch_add(inputs.size(), std::memory_order_relaxed);
    return inner_->generate(inputs);
  }

  std::uint64_t calls() const noexcept { return calls_.load(); }
  std::uint64_t generations() const noexcept { return generations_.load(); }
  void reset() noexcept {
    calls_ = 0;
    generations_ = 0;
  }

 private:
  std::shared_ptr<const Backend> inner_;
  mutable std::atomic<std::uint64_t> calls_{0};
  mutable std::atomic<std::uint64_t> generations_{0};
};

}  // namespace ufid
