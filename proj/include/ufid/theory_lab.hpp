#pragma once

// Monte Carlo checks of the separation results behind the detector.
//
// Conventions: in the Gaussian-law checks (Lemma 1 / Theorem 1) sigma_c and
// sigma_b are per-element variances of the generated image, matching the
// synthetic backend. In the norm and distance checks sigma is a standard
// deviation: x ~ N(0, sigma^2 I_N), and x1 - x2 has scale sqrt(2) * sigma_c.
//
// Every report carries the estimator's standard error; an inequality passes
// only when it holds with a margin of 3 standard errors.

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ufid/backends.hpp"
#include "ufid/core/error.hpp"
#include "ufid/core/rng.hpp"

namespace ufid::theory {

inline constexpr double kSigmaMargin = 3.0;

struct Bound {
  std::string name;
  double value = 0.0;
  bool lower = true;  // empirical must exceed value (lower) or stay below it (upper)
  bool pass = false;
};

struct BoundReport {
  std::string claim;
  std::map<std::string, double> params;
  std::size_t samples = 0;
  double empirical = 0.0;
  double std_error = 0.0;
  std::optional<double> analytic;
  std::vector<Bound> bounds;
  bool applicable = true;
  bool pass = false;
  std::string note;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["claim"] = claim;
    j["params"] = params;
    j["samples"] = samples;
    j["empirical"] = empirical;
    j["std_error"] = std_error;
    j["analytic"] = analytic ? nlohmann::ordered_json(*analytic) : nlohmann::ordered_json(nullptr);
    auto arr = nlohmann::ordered_json::array();
    for (const auto& b : bounds)
      arr.push_back({{"name", b.name}, {"value", b.value}, {"side", b.lower ? "lower" : "upper"}, {"pass", b.pass}});
    j["bounds"] = std::move(arr);
    j["applicable"] = applicable;
    j["pass"] = pass;
    if (!note.empty()) j["note"] = note;
    return j;
  }
};

// Running mean / standard error (Welford).
class MeanEstimator {
 public:
  void add(double x) noexcept {
    ++n_;
    const double d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (x - mean_);
  }
  std::size_t count() const noexcept { return n_; }
  double mean() const noexcept { return mean_; }
  double variance() const noexcept { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
  double std_error() const noexcept { return n_ > 0 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0; }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

inline Bound check_bound(std::string name, double value, bool lower, double estimate, double se) {
  const bool ok = lower ? estimate - kSigmaMargin * se > value : estimate + kSigmaMargin * se < value;
  return Bound{std::move(name), value, lower, ok};
}

// E||z|| for z ~ N(0, I_N): sqrt(2) Gamma((N+1)/2) / Gamma(N/2).
inline double expected_gaussian_norm(std::size_t n) {
  const double dn = static_cast<double>(n);
  return std::sqrt(2.0) * std::exp(std::lgamma((dn + 1.0) / 2.0) - std::lgamma(dn / 2.0));
}

inline double gaussian_norm_sample(RandomStream& rng, std::size_t n, double sigma) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = sigma * rng.normal();
    s += x * x;
  }
  return std::sqrt(s);
}

// N / sqrt(N+1) <= E||x|| / sigma <= sqrt(N) for x ~ N(0, sigma^2 I_N).
inline BoundReport verify_norm_bounds(std::size_t n, double sigma, std::size_t samples, RngSeed seed = {}) {
  require(n >= 1, ErrorCode::precondition, "norm bounds need N >= 1");
  require(sigma > 0.0, ErrorCode::precondition, "norm bounds need sigma > 0");
  require(samples >= 10000, ErrorCode::precondition, "norm bounds need at least 1e4 samples");
  RandomStream rng(seed, stream_label("theory", "norm", n));
  MeanEstimator est;
  for (std::size_t s = 0; s < samples; ++s) est.add(gaussian_norm_sample(rng, n, sigma) / sigma);

  BoundReport r;
  r.claim = "norm-bounds";
  r.params = {{"N", double(n)}, {"sigma", sigma}};
  r.samples = samples;
  r.empirical = est.mean();
  r.std_error = est.std_error();
  r.analytic = expected_gaussian_norm(n);
  const double dn = static_cast<double>(n);
  r.bounds.push_back(check_bound("N/sqrt(N+1)", dn / std::sqrt(dn + 1.0), true, r.empirical, r.std_error));
  r.bounds.push_back(check_bound("sqrt(N)", std::sqrt(dn), false, r.empirical, r.std_error));
  r.pass = r.bounds[0].pass && r.bounds[1].pass;
  return r;
}

struct VarianceEstimate {
  MeanEstimator mean_offset;  // per-image mean of (y - mu)
  MeanEstimator variance;     // per-image mean of (y - mu)^2
};

// Feeds `samples` inputs sqrt(rho2) * z (+ trigger when `triggered`) through
// an unclamped synthetic backend and measures spread around the branch mean.
inline VarianceEstimate sample_output_variance(const SyntheticParams& base, double rho2, bool triggered,
                                               std::size_t samples, const std::string& tag) {
  SyntheticParams params = base;
  params.unclamped = true;
  params.validate();
  const Image& mu = triggered ? params.x_b : params.x_c;
  const double scale = std::sqrt(rho2);
  RandomStream inputs(params.seed, stream_label("theory", tag, "inputs"));
  VarianceEstimate out;
  std::vector<float> data(params.shape.size());
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t i = 0; i < data.size(); ++i)
      data[i] = static_cast<float>(scale * inputs.normal() + (triggered ? params.trigger.data()[i] : 0.0f));
    const Query q = Query::unconditional(stream_label(tag, s), Image(params.shape, ImageKind::noise, data));
    const Image y = synthetic_generate_one(params, q);
    double off = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double d = double(y.data()[i]) - mu.data()[i];
      off += d;
      sq += d * d;
    }
    out.mean_offset.add(off / double(data.size()));
    out.variance.add(sq / double(data.size()));
  }
  return out;
}

inline constexpr double kVarianceTolerance = 0.05;

inline SyntheticParams theory_params(double sigma_c, double sigma_b, RngSeed seed) {
  SyntheticParams p = default_synthetic_params(Shape{16, 16, 3}, seed.root);
  p.sigma_c = sigma_c;
  p.sigma_b = sigma_b;
  return p;
}

// Output of the clean branch for inputs of variance rho2 ~ N(x_c, sigma_c / rho2).
inline BoundReport verify_lemma1(double rho2, double sigma_c, std::size_t samples = 10000, RngSeed seed = {}) {
  require(rho2 > 0.0, ErrorCode::precondition, "lemma 1 needs rho^2 > 0");
  require(sigma_c > 0.0, ErrorCode::precondition, "lemma 1 needs sigma_c > 0");
  require(samples >= 2, ErrorCode::precondition, "lemma 1 needs samples >= 2");
  const auto params = theory_params(sigma_c, std::min(sigma_c, 0.5), seed);
  const auto est = sample_output_variance(params, rho2, false, samples, "lemma1");

  BoundReport r;
  r.claim = "lemma1";
  r.params = {{"rho2", rho2}, {"sigma_c", sigma_c}};
  r.samples = samples;
  r.empirical = est.variance.mean();
  r.std_error = est.variance.std_error();
  r.analytic = sigma_c / rho2;
  r.bounds.push_back(Bound{"variance >= 0.95 * sigma_c/rho2", (1.0 - kVarianceTolerance) * *r.analytic, true,
                           r.empirical >= (1.0 - kVarianceTolerance) * *r.analytic});
  r.bounds.push_back(Bound{"variance <= 1.05 * sigma_c/rho2", (1.0 + kVarianceTolerance) * *r.analytic, false,
                           r.empirical <= (1.0 + kVarianceTolerance) * *r.analytic});
  const double offset = est.mean_offset.mean();
  const bool mean_ok = std::abs(offset) <= kSigmaMargin * est.mean_offset.std_error();
  r.note = "mean offset from x_c " + std::to_string(offset) + " (se " + std::to_string(est.mean_offset.std_error()) + ")";
  r.pass = mean_ok && r.bounds[0].pass && r.bounds[1].pass;
  return r;
}

// sigma'_c - sigma'_b >= 1 after perturbation, given sigma_c >= sigma_b + rho2.
inline BoundReport verify_theorem1(double sigma_c, double sigma_b, double rho2, std::size_t samples = 10000,
                                   RngSeed seed = {}) {
  require(sigma_c > 0.0 && sigma_b > 0.0 && rho2 > 0.0, ErrorCode::precondition,
          "theorem 1 needs positive sigma_c, sigma_b, rho^2");
  require(sigma_c >= sigma_b + rho2, ErrorCode::precondition,
          "theorem 1 assumption sigma_c >= sigma_b + rho^2 violated (" + std::to_string(sigma_c) + " < " +
              std::to_string(sigma_b) + " + " + std::to_string(rho2) + ")");
  const auto params = theory_params(sigma_c, sigma_b, seed);
  const auto clean = sample_output_variance(params, rho2, false, samples, "theorem1/clean");
  const auto backdoor = sample_output_variance(params, rho2, true, samples, "theorem1/backdoor");

  BoundReport r;
  r.claim = "theorem1";
  r.params = {{"sigma_c", sigma_c}, {"sigma_b", sigma_b}, {"rho2", rho2}};
  r.samples = samples;
  r.empirical = clean.variance.mean() - backdoor.variance.mean();
  r.std_error = std::hypot(clean.variance.std_error(), backdoor.variance.std_error());
  r.analytic = (sigma_c - sigma_b) / rho2;
  // Holds within estimator error: the boundary case has analytic gap exactly 1.
  r.bounds.push_back(Bound{"gap >= 1", 1.0, true, r.empirical + kSigmaMargin * r.std_error >= 1.0});
  const bool matches = std::abs(r.empirical - *r.analytic) <= kVarianceTolerance * std::abs(*r.analytic);
  r.bounds.push_back(Bound{"gap within 5% of (sigma_c - sigma_b)/rho2", *r.analytic, true, matches});
  r.note = "sigma'_c " + std::to_string(clean.variance.mean()) + ", sigma'_b " + std::to_string(backdoor.variance.mean());
  r.pass = r.bounds[0].pass && matches;
  return r;
}

// E(||x1 - x2|| - ||x3 - x4||) against the stated bound and its sqrt(2) variant.
inline BoundReport verify_corollary1(std::size_t n, double sigma_c, double sigma_b, std::size_t samples = 100000,
                                     RngSeed seed = {}) {
  require(n >= 1, ErrorCode::precondition, "corollary 1 needs N >= 1");
  require(sigma_c > 0.0 && sigma_b > 0.0, ErrorCode::precondition, "corollary 1 needs positive sigmas");
  RandomStream rng(seed, stream_label("theory", "corollary1", n));
  MeanEstimator est;
  auto distance = [&](double sigma) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = sigma * rng.normal() - sigma * rng.normal();
      s += d * d;
    }
    return std::sqrt(s);
  };
  for (std::size_t s = 0; s < samples; ++s) {
    const double clean = distance(sigma_c);
    const double backdoor = distance(sigma_b);
    est.add(clean - backdoor);
  }

  BoundReport r;
  r.claim = "corollary1";
  r.params = {{"N", double(n)}, {"sigma_c", sigma_c}, {"sigma_b", sigma_b}};
  r.samples = samples;
  r.empirical = est.mean();
  r.std_error = est.std_error();
  r.analytic = std::sqrt(2.0) * (sigma_c - sigma_b) * expected_gaussian_norm(n);
  const double dn = static_cast<double>(n);
  const double main_bound = (dn * (sigma_c - sigma_b) - sigma_b) / std::sqrt(dn + 1.0);
  r.bounds.push_back(check_bound("main", main_bound, true, r.empirical, r.std_error));
  r.bounds.push_back(check_bound("appendix_sqrt2", std::sqrt(2.0) * main_bound, true, r.empirical, r.std_error));
  r.applicable = sigma_c - sigma_b > 1.0;
  if (!r.applicable) r.note = "inapplicable: requires sigma_c - sigma_b > 1";
  r.pass = r.applicable && r.bounds[0].pass && r.bounds[1].pass;
  return r;
}

}  // namespace ufid::theory
