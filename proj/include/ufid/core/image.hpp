#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ufid/core/error.hpp"

namespace ufid {

struct Shape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  std::size_t size() const noexcept { return height * width * channels; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" + std::to_string(s.channels);
}

enum class ImageKind { pixel, noise };

inline std::string_view to_string(ImageKind k) { return k == ImageKind::pixel ? "pixel" : "noise"; }

inline ImageKind parse_image_kind(std::string_view s) {
  if (s == "pixel") return ImageKind::pixel;
  if (s == "noise") return ImageKind::noise;
  fail(ErrorCode::protocol, "unknown image kind '" + std::string(s) + "'");
}

// Dense H x W x C tensor, row-major with channels innermost. Immutable once built.
class Image {
 public:
  Image() = default;

  Image(Shape shape, ImageKind kind, std::vector<float> data)
      : shape_(shape), kind_(kind), data_(std::move(data)) {
    require(shape_.height > 0 && shape_.width > 0 && shape_.channels > 0, ErrorCode::shape_mismatch,
            "image dimensions must be positive, got " + to_string(shape_));
    require(data_.size() == shape_.size(), ErrorCode::shape_mismatch,
            "data length " + std::to_string(data_.size()) + " does not match shape " + to_string(shape_));
    for (float v : data_) {
      require(std::isfinite(v), ErrorCode::invalid_argument, "image contains non-finite value");
      if (kind_ == ImageKind::pixel)
        require(v >= 0.0f && v <= 1.0f, ErrorCode::invalid_argument, "pixel value outside [0,1]");
    }
  }

  static Image filled(Shape shape, ImageKind kind, float value) {
    return Image(shape, kind, std::vector<float>(shape.size(), value));
  }

  const Shape& shape() const noexcept { return shape_; }
  ImageKind kind() const noexcept { return kind_; }
  std::span<const float> data() const noexcept { return data_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t index(std::size_t h, std::size_t w, std::size_t c) const noexcept {
    return (h * shape_.width + w) * shape_.channels + c;
  }
  float at(std::size_t h, std::size_t w, std::size_t c) const { return data_.at(index(h, w, c)); }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  Shape shape_{};
  ImageKind kind_ = ImageKind::pixel;
  std::vector<float> data_;
};

enum class QueryMode { unconditional, conditional };

inline std::string_view to_string(QueryMode m) {
  return m == QueryMode::unconditional ? "unconditional" : "conditional";
}

inline QueryMode parse_query_mode(std::string_view s) {
  if (s == "unconditional") return QueryMode::unconditional;
  if (s == "conditional") return QueryMode::conditional;
  fail(ErrorCode::config, "unknown mode '" + std::string(s) + "'");
}

inline bool is_blank(std::string_view s) {
  for (char ch : s)
    if (ch != ' ' && ch != '\t' && ch != '\n' && ch != '\r' && ch != '\f' && ch != '\v') return false;
  return true;
}

// A client request: a noise image for unconditional models or a prompt for
// text-conditioned ones.
class Query {
 public:
  static Query unconditional(std::string id, Image noise) {
    require(noise.kind() == ImageKind::noise, ErrorCode::invalid_argument,
            "unconditional query needs a noise image");
    Query q;
    q.mode_ = QueryMode::unconditional;
    q.id_ = std::move(id);
    q.noise_ = std::move(noise);
    return q;
  }

  static Query conditional(std::string id, std::string prompt) {
    require(!is_blank(prompt), ErrorCode::invalid_argument, "prompt must not be blank");
    Query q;
    q.mode_ = QueryMode::conditional;
    q.id_ = std::move(id);
    q.prompt_ = std::move(prompt);
    return q;
  }

  QueryMode mode() const noexcept { return mode_; }
  const std::string& id() const noexcept { return id_; }
  const Image& noise() const {
    require(noise_.has_value(), ErrorCode::mode_mismatch, "query " + id_ + " has no noise image");
    return *noise_;
  }
  const std::string& prompt() const {
    require(prompt_.has_value(), ErrorCode::mode_mismatch, "query " + id_ + " has no prompt");
    return *prompt_;
  }

  friend bool operator==(const Query&, const Query&) = default;

 private:
  Query() = default;

  QueryMode mode_ = QueryMode::unconditional;
  std::string id_;
  std::optional<Image> noise_;
  std::optional<std::string> prompt_;
};

inline void require_mode(const Query& q, QueryMode expected) {
  require(q.mode() == expected, ErrorCode::mode_mismatch,
          "query " + q.id() + " is " + std::string(to_string(q.mode())) + ", expected " +
              std::string(to_string(expected)));
}

// Index of the unordered pair (m, n), m < n, in a packed upper-triangular array.
inline std::size_t pair_index(std::size_t m, std::size_t n, std::size_t count) noexcept {
  return m * count - m * (m + 1) / 2 + (n - m - 1);
}

inline std::size_t pair_count(std::size_t count) noexcept { return count * (count - 1) / 2; }

struct GeneratedBatch {
  std::string query_id;
  std::vector<Image> images;  // images[0] answers the unmodified input
  std::optional<std::vector<double>> pair_similarities;
};

}  // namespace ufid
