#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ufid/core/error.hpp"
#include "ufid/core/image.hpp"

namespace ufid {

struct Embedding {
  std::vector<double> values;
  std::string encoder_id;

  std::size_t dim() const noexcept { return values.size(); }
};

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline Embedding normalized(Embedding e) {
  const double n = l2_norm(e.values);
  require(n > 0.0, ErrorCode::zero_vector, "cannot normalize a zero embedding");
  for (double& x : e.values) x /= n;
  return e;
}

inline double cosine(const Embedding& a, const Embedding& b) {
  require(a.encoder_id == b.encoder_id, ErrorCode::encoder_mismatch,
          "embeddings from '" + a.encoder_id + "' and '" + b.encoder_id + "'");
  require(a.dim() == b.dim() && a.dim() > 0, ErrorCode::dimension_mismatch,
          "embedding dims " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  require(na > 0.0 && nb > 0.0, ErrorCode::zero_vector, "cosine of a zero vector is undefined");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

// Maps images (and optionally text) into a shared embedding space.
// Implementations return L2-normalized vectors.
class Encoder {
 public:
  virtual ~Encoder() = default;

  virtual std::string id() const = 0;
  virtual std::vector<Embedding> embed_images(std::span<const Image> images) const = 0;
  virtual bool supports_text() const { return false; }
  virtual std::vector<Embedding> embed_texts(std::span<const std::string> /*texts*/) const {
    fail(ErrorCode::invalid_argument, "encoder '" + id() + "' does not embed text");
  }
};

inline Embedding embed(const Image& img, const Encoder& encoder) {
  auto out = encoder.embed_images(std::span<const Image>(&img, 1));
  require(out.size() == 1, ErrorCode::protocol, "encoder returned wrong embedding count");
  return std::move(out.front());
}

struct SsimParams {
  std::size_t window = 8;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;

  void validate() const {
    require(window >= 1, ErrorCode::invalid_argument, "SSIM window must be >= 1");
    require(k1 > 0.0 && k2 > 0.0, ErrorCode::invalid_argument, "SSIM k1, k2 must be positive");
    require(data_range > 0.0, ErrorCode::invalid_argument, "SSIM data range must be positive");
  }
};

namespace detail {

// Summed-area table of one channel with a zero border row/column.
class IntegralImage {
 public:
  template <typename PixelFn>
  IntegralImage(std::size_t height, std::size_t width, PixelFn&& pixel)
      : stride_(width + 1), sums_((height + 1) * (width + 1), 0.0) {
    for (std::size_t h = 0; h < height; ++h) {
      double row = 0.0;
      for (std::size_t w = 0; w < width; ++w) {
        row += pixel(h, w);
        sums_[(h + 1) * stride_ + (w + 1)] = sums_[h * stride_ + (w + 1)] + row;
      }
    }
  }

  // Sum over rows [h, h + size), cols [w, w + size).
  double box(std::size_t h, std::size_t w, std::size_t size) const {
    const std::size_t h1 = h + size, w1 = w + size;
    return sums_[h1 * stride_ + w1] - sums_[h * stride_ + w1] - sums_[h1 * stride_ + w] + sums_[h * stride_ + w];
  }

 private:
  std::size_t stride_;
  std::vector<double> sums_;
};

}  // namespace detail

// Mean SSIM over all stride-1 uniform windows and channels, with
// C1 = (k1 L)^2, C2 = (k2 L)^2, C3 = C2 / 2 and population moments.
inline double ssim(const Image& a, const Image& b, const SsimParams& params = {}) {
  params.validate();
  require(a.shape() == b.shape(), ErrorCode::shape_mismatch,
          "SSIM shapes " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  require(a.kind() == ImageKind::pixel && b.kind() == ImageKind::pixel, ErrorCode::invalid_argument,
          "SSIM needs pixel images");
  const auto [height, width, channels] = a.shape();
  const std::size_t win = params.window;
  require(height >= win && width >= win, ErrorCode::window_too_large,
          "image " + to_string(a.shape()) + " smaller than SSIM window " + std::to_string(win));

  const double c1 = (params.k1 * params.data_range) * (params.k1 * params.data_range);
  const double c2 = (params.k2 * params.data_range) * (params.k2 * params.data_range);
  const double n = static_cast<double>(win * win);
  const auto da = a.data();
  const auto db = b.data();

  double total = 0.0;
  for (std::size_t c = 0; c < channels; ++c) {
    auto px = [&](std::span<const float> d) {
      return [&, d](std::size_t h, std::size_t w) { return static_cast<double>(d[(h * width + w) * channels + c]); };
    };
    auto pa = px(da);
    auto pb = px(db);
    const detail::IntegralImage sa(height, width, pa);
    const detail::IntegralImage sb(height, width, pb);
    const detail::IntegralImage saa(height, width, [&](std::size_t h, std::size_t w) { return pa(h, w) * pa(h, w); });
    const detail::IntegralImage sbb(height, width, [&](std::size_t h, std::size_t w) { return pb(h, w) * pb(h, w); });
    const detail::IntegralImage sab(height, width, [&](std::size_t h, std::size_t w) { return pa(h, w) * pb(h, w); });

    for (std::size_t h = 0; h + win <= height; ++h) {
      for (std::size_t w = 0; w + win <= width; ++w) {
        const double mu_a = sa.box(h, w, win) / n;
        const double mu_b = sb.box(h, w, win) / n;
        const double var_a = std::max(0.0, saa.box(h, w, win) / n - mu_a * mu_a);
        const double var_b = std::max(0.0, sbb.box(h, w, win) / n - mu_b * mu_b);
        const double cov = sab.box(h, w, win) / n - mu_a * mu_b;
        total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
      }
    }
  }
  const double windows = static_cast<double>((height - win + 1) * (width - win + 1) * channels);
  return std::clamp(total / windows, -1.0, 1.0);
}

enum class MetricKind { encoder_cosine, ssim };

inline std::string_view to_string(MetricKind k) { return k == MetricKind::ssim ? "ssim" : "encoder_cosine"; }

inline MetricKind parse_metric_kind(std::string_view s) {
  if (s == "ssim") return MetricKind::ssim;
  if (s == "encoder_cosine" || s == "cosine") return MetricKind::encoder_cosine;
  fail(ErrorCode::config, "unknown metric '" + std::string(s) + "'");
}

struct SimilarityMetric {
  MetricKind kind = MetricKind::encoder_cosine;
  std::shared_ptr<const Encoder> encoder;
  SsimParams ssim_params{};

  static SimilarityMetric cosine_with(std::shared_ptr<const Encoder> enc) {
    return SimilarityMetric{MetricKind::encoder_cosine, std::move(enc), {}};
  }
  static SimilarityMetric ssim_with(SsimParams p = {}) { return SimilarityMetric{MetricKind::ssim, nullptr, p}; }

  void validate() const {
    if (kind == MetricKind::encoder_cosine)
      require(encoder != nullptr, ErrorCode::config, "encoder_cosine metric needs an encoder");
    else
      ssim_params.validate();
  }
};

// Similarity of every unordered pair, packed upper-triangular (see pair_index).
inline std::vector<double> pairwise_similarities(std::span<const Image> images, const SimilarityMetric& metric) {
  metric.validate();
  const std::size_t count = images.size();
  std::vector<double> out(pair_count(count));
  if (metric.kind == MetricKind::ssim) {
    for (std::size_t m = 0; m < count; ++m)
      for (std::size_t n = m + 1; n < count; ++n)
        out[pair_index(m, n, count)] = ssim(images[m], images[n], metric.ssim_params);
    return out;
  }
  const auto embeddings = metric.encoder->embed_images(images);
  require(embeddings.size() == count, ErrorCode::protocol, "encoder returned wrong embedding count");
  for (std::size_t m = 0; m < count; ++m)
    for (std::size_t n = m + 1; n < count; ++n) out[pair_index(m, n, count)] = cosine(embeddings[m], embeddings[n]);
  return out;
}

}  // namespace ufid
