#pragma once

// Key-value configuration files shared by `serve`, `calibrate` and `eval`:
//
//   # comment
//   key = value
//
// Keys are case-sensitive; unknown keys are rejected so typos surface early.
// The recognised keys and their defaults are listed in README.md.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ufid/augmentation.hpp"
#include "ufid/backends.hpp"
#include "ufid/core/error.hpp"
#include "ufid/remote.hpp"
#include "ufid/scoring.hpp"
#include "ufid/similarity.hpp"

namespace ufid {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

class KeyValueConfig {
 public:
  KeyValueConfig() = default;
  explicit KeyValueConfig(std::map<std::string, std::string> values, std::string origin = "<memory>")
      : values_(std::move(values)), origin_(std::move(origin)) {}

  static KeyValueConfig parse(std::istream& in, std::string origin) {
    std::map<std::string, std::string> values;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t.front() == '#') continue;
      const auto eq = t.find('=');
      require(eq != std::string::npos, ErrorCode::config,
              origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
      std::string key = trim(std::string_view(t).substr(0, eq));
      require(!key.empty(), ErrorCode::config, origin + ":" + std::to_string(lineno) + ": empty key");
      require(!values.contains(key), ErrorCode::config, origin + ": duplicate key '" + key + "'");
      values[key] = trim(std::string_view(t).substr(eq + 1));
    }
    return KeyValueConfig(std::move(values), std::move(origin));
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::missing_file, "cannot open config " + path);
    return parse(in, path);
  }

  bool has(const std::string& key) const {
    used_.insert(key);
    return values_.contains(key);
  }

  std::string get(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require_string(const std::string& key) const {
    used_.insert(key);
    auto it = values_.find(key);
    require(it != values_.end(), ErrorCode::config, origin_ + ": missing required key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    return parse_double(key, values_.at(key));
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string& v = values_.at(key);
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    require(ec == std::errc() && p == v.data() + v.size(), ErrorCode::config,
            origin_ + ": key '" + key + "' expects a non-negative integer, got '" + v + "'");
    return out;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string& v = values_.at(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail(ErrorCode::config, origin_ + ": key '" + key + "' expects a boolean, got '" + v + "'");
  }

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  // Throws on keys nobody asked for.
  void reject_unknown() const {
    for (const auto& [k, v] : values_)
      require(used_.contains(k), ErrorCode::config, origin_ + ": unknown key '" + k + "'");
  }

  const std::string& origin() const noexcept { return origin_; }

  // Relative paths resolve against the directory of the config file.
  std::string resolve_path(const std::string& value) const {
    const std::filesystem::path path(value);
    const auto base = std::filesystem::path(origin_).parent_path();
    return (path.is_relative() && !base.empty() && origin_ != "<memory>" ? base / path : path).string();
  }
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

  double parse_double(const std::string& key, const std::string& v) const {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      require(used == v.size() && std::isfinite(d), ErrorCode::config, "");
      return d;
    } catch (...) {
      fail(ErrorCode::config, origin_ + ": key '" + key + "' expects a number, got '" + v + "'");
    }
  }

 private:
  std::map<std::string, std::string> values_;
  std::string origin_ = "<memory>";
  mutable std::set<std::string> used_;
};

inline Shape parse_shape(const std::string& s) {
  Shape out;
  char x1 = 0, x2 = 0;
  std::istringstream in(s);
  in >> out.height >> x1 >> out.width >> x2 >> out.channels;
  require(in && x1 == 'x' && x2 == 'x' && out.size() > 0 && in.peek() == std::char_traits<char>::eof(),
          ErrorCode::config, "shape must look like HxWxC, got '" + s + "'");
  return out;
}

// Expands \uXXXX escapes so config files can carry invisible trigger tokens.
inline std::string unescape_unicode(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 5 < s.size() && s[i + 1] == 'u') {
      unsigned cp = 0;
      const auto [p, ec] = std::from_chars(s.data() + i + 2, s.data() + i + 6, cp, 16);
      require(ec == std::errc() && p == s.data() + i + 6, ErrorCode::config, "bad \\u escape in '" + s + "'");
      if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
      } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
      } else {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
      }
      i += 5;
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

enum class BackendKind { synthetic_unconditional, synthetic_conditional, remote_http };

struct BackendDescriptor {
  BackendKind kind = BackendKind::synthetic_unconditional;
  std::optional<std::string> url;
  std::optional<SyntheticParams> synthetic;
  RemoteOptions remote{};
  std::optional<int> num_inference_steps;
  std::optional<std::uint64_t> remote_seed;

  void validate() const {
    if (kind == BackendKind::remote_http)
      require(url.has_value() && !url->empty(), ErrorCode::config, "remote_http backend needs a url");
    else
      require(synthetic.has_value(), ErrorCode::config, "synthetic backend needs parameters");
  }
};

inline std::shared_ptr<Backend> make_backend(const BackendDescriptor& d) {
  d.validate();
  switch (d.kind) {
    case BackendKind::synthetic_unconditional:
      return std::make_shared<SyntheticBackend>(*d.synthetic, QueryMode::unconditional);
    case BackendKind::synthetic_conditional:
      return std::make_shared<SyntheticBackend>(*d.synthetic, QueryMode::conditional);
    case BackendKind::remote_http:
      return std::make_shared<RemoteBackend>(*d.url, d.remote, d.remote_seed, d.num_inference_steps);
  }
  fail(ErrorCode::config, "unknown backend kind");
}

// Synthetic-backend parameters from config keys (all optional).
inline SyntheticParams synthetic_params_from(const KeyValueConfig& cfg, std::uint64_t seed) {
  const Shape shape = parse_shape(cfg.get("shape", "8x8x3"));
  SyntheticParams p = default_synthetic_params(shape, seed);
  p.sigma_c = cfg.get_double("sigma_c", p.sigma_c);
  p.sigma_b = cfg.get_double("sigma_b", p.sigma_b);
  p.trigger_threshold = cfg.get_double("trigger_threshold", p.trigger_threshold);
  p.blending_ratio = cfg.get_double("blending_ratio", p.blending_ratio);
  if (cfg.has("trigger_token")) p.trigger_token = unescape_unicode(cfg.get("trigger_token", ""));
  if (cfg.has("substitution")) {
    const std::string rule = cfg.get("substitution", "");
    const auto arrow = rule.find("->");
    require(arrow != std::string::npos, ErrorCode::config, "substitution must look like 'from->to'");
    p.substitution = SubstitutionRule{trim(rule.substr(0, arrow)), trim(rule.substr(arrow + 2))};
  }
  if (cfg.has("x_c")) p.x_c = read_image_file(cfg.resolve_path(cfg.get("x_c", "")));
  if (cfg.has("x_b")) p.x_b = read_image_file(cfg.resolve_path(cfg.get("x_b", "")));
  if (cfg.has("trigger")) p.trigger = read_image_file(cfg.resolve_path(cfg.get("trigger", "")));
  p.validate();
  return p;
}

inline BackendDescriptor backend_from(const KeyValueConfig& cfg, QueryMode mode, std::uint64_t seed) {
  BackendDescriptor d;
  const std::string kind = cfg.get("backend", "synthetic");
  if (kind == "remote" || kind == "remote_http") {
    d.kind = BackendKind::remote_http;
    d.url = cfg.require_string("url");
    d.remote.max_in_flight = static_cast<std::ptrdiff_t>(cfg.get_u64("max_in_flight", 4));
    if (cfg.has("num_inference_steps")) d.num_inference_steps = static_cast<int>(cfg.get_u64("num_inference_steps", 0));
    if (cfg.has("remote_seed")) d.remote_seed = cfg.get_u64("remote_seed", 0);
  } else {
    require(kind == "synthetic", ErrorCode::config, "backend must be 'synthetic' or 'remote', got '" + kind + "'");
    d.kind = mode == QueryMode::unconditional ? BackendKind::synthetic_unconditional : BackendKind::synthetic_conditional;
    d.synthetic = synthetic_params_from(cfg, seed);
  }
  return d;
}

inline std::shared_ptr<const Encoder> encoder_from(const KeyValueConfig& cfg, std::size_t channels) {
  const std::string kind = cfg.get("encoder", "synthetic");
  if (kind == "synthetic") return std::make_shared<SyntheticEncoder>(channels);
  require(kind == "remote", ErrorCode::config, "encoder must be 'synthetic' or 'remote', got '" + kind + "'");
  return std::make_shared<RemoteEncoder>(cfg.require_string("encoder_url"));
}

inline ScoringOptions scoring_from(const KeyValueConfig& cfg, std::size_t channels, bool combined) {
  ScoringOptions s;
  s.mode = parse_density_mode(cfg.get("density_mode", "mean_pairs"));
  const MetricKind kind = parse_metric_kind(cfg.get("metric", "encoder_cosine"));
  std::shared_ptr<const Encoder> encoder;
  if (kind == MetricKind::encoder_cosine || combined) encoder = encoder_from(cfg, channels);
  if (kind == MetricKind::ssim) {
    SsimParams p;
    p.window = static_cast<std::size_t>(cfg.get_u64("ssim_window", p.window));
    p.k1 = cfg.get_double("ssim_k1", p.k1);
    p.k2 = cfg.get_double("ssim_k2", p.k2);
    p.data_range = cfg.get_double("ssim_data_range", p.data_range);
    s.metric = SimilarityMetric::ssim_with(p);
  } else {
    s.metric = SimilarityMetric::cosine_with(encoder);
  }
  if (combined) s.multimodal = encoder;
  return s;
}

}  // namespace ufid
