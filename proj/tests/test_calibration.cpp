#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "ufid/augmentation.hpp"
#include "ufid/backends.hpp"
#include "ufid/calibration.hpp"

using namespace ufid;

namespace {

const Shape kShape{8, 8, 3};

std::vector<Query> clean_noise(std::size_t n, const std::string& prefix, RngSeed seed) {
  std::vector<Query> out;
  for (std::size_t i = 0; i < n; ++i) {
    RandomStream rng(seed, prefix + std::to_string(i));
    std::vector<float> d(kShape.size());
    for (auto& x : d) x = float(rng.normal());
    out.push_back(Query::unconditional(prefix + std::to_string(i), Image(kShape, ImageKind::noise, d)));
  }
  return out;
}

ScoringOptions cosine_scoring() {
  ScoringOptions s;
  s.metric = SimilarityMetric::cosine_with(std::make_shared<SyntheticEncoder>(3));
  return s;
}

class ConstantBackend final : public Backend {
 public:
  std::string id() const override { return "constant"; }
  std::vector<Image> generate(std::span<const Query> inputs) const override {
    return std::vector<Image>(inputs.size(), default_target(kShape));
  }
};

class DownBackend final : public Backend {
 public:
  std::string id() const override { return "down"; }
  std::vector<Image> generate(std::span<const Query>) const override {
    throw TransportError("connection refused", 3);
  }
};

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(ThresholdFromGraph, HandFixture) {
  EXPECT_NEAR(threshold_from_graph(SimilarityGraph(3, {0.2, 0.4, 0.6})), 0.5, 1e-15);
}

TEST(ThresholdFromGraph, NeverDecreasesWhenASimilarityIncreases) {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(-1.0, 0.8);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> w(pair_count(6));
    for (auto& x : w) x = u(gen);
    const double base = threshold_from_graph(SimilarityGraph(6, w));
    w[t % w.size()] += 0.2;
    EXPECT_GE(threshold_from_graph(SimilarityGraph(6, w)), base);
  }
}

TEST(Calibrate, IdenticalGenerationsGiveOne) {
  const auto t = calibrate(clean_noise(5, "v", RngSeed{1}), ConstantBackend{}, {cosine_scoring(), false, 4, "t0"});
  EXPECT_NEAR(t.tau, 1.0, 1e-12);
  EXPECT_EQ(t.n_validation, 5u);
  EXPECT_EQ(t.backend_id, "constant");
  EXPECT_EQ(t.created_at, "t0");
}

TEST(Calibrate, NeedsTwoSamples) {
  const SyntheticBackend backend(default_synthetic_params(), QueryMode::unconditional);
  EXPECT_UFID_ERROR(calibrate(clean_noise(1, "v", RngSeed{1}), backend, {.scoring = cosine_scoring()}), ErrorCode::empty_input);
}

TEST(Calibrate, BackendFailurePropagatesAsTransport) {
  EXPECT_UFID_ERROR(calibrate(clean_noise(3, "v", RngSeed{1}), DownBackend{}, {.scoring = cosine_scoring()}), ErrorCode::transport);
}

TEST(Calibrate, OneGenerationPerSampleWithoutAugmentation) {
  auto counting = CountingBackend(std::make_shared<SyntheticBackend>(default_synthetic_params(), QueryMode::unconditional));
  calibrate(clean_noise(20, "v", RngSeed{1}), counting, {.scoring = cosine_scoring()});
  EXPECT_EQ(counting.calls(), 1u);
  EXPECT_EQ(counting.generations(), 20u);
}

TEST(Calibrate, PermutationInvariantAndDeterministic) {
  const SyntheticBackend backend(default_synthetic_params(kShape, 3), QueryMode::unconditional);
  auto val = clean_noise(20, "v", RngSeed{2});
  const double tau = calibrate(val, backend, {.scoring = cosine_scoring()}).tau;
  EXPECT_EQ(tau, calibrate(val, backend, {.scoring = cosine_scoring()}).tau);
  std::mt19937_64 gen(4);
  for (int t = 0; t < 5; ++t) {
    std::shuffle(val.begin(), val.end(), gen);
    EXPECT_NEAR(calibrate(val, backend, {.scoring = cosine_scoring()}).tau, tau, 1e-12);
  }
}

// 20 clean validation samples, then 200 clean queries through the detector
// statistic: at most 15% exceed tau.
TEST(Calibrate, CleanFalsePositiveRateAtMostFifteenPercent) {
  const auto params = default_synthetic_params(kShape, 5);
  const SyntheticBackend backend(params, QueryMode::unconditional);
  const auto scoring = cosine_scoring();
  const double tau = calibrate(clean_noise(20, "val", RngSeed{6}), backend, {.scoring = scoring}).tau;
  int flagged = 0;
  for (const auto& q : clean_noise(200, "test", RngSeed{7})) {
    GeneratedBatch b{q.id(), backend.generate(augment_unconditional(q, MagnitudeSet{4, 0.01, RngSeed{8}})), {}};
    flagged += score_batch(b, scoring).density > tau;
  }
  EXPECT_LE(flagged, 30);
}

TEST(Calibrate, CombinedThresholdIsMaxOfCombinedNodeScores) {
  auto params = default_synthetic_params(kShape, 9);
  params.sigma_c = 0.01;
  params.sigma_b = 0.01;
  const SyntheticBackend backend(params, QueryMode::conditional);
  const auto enc = std::make_shared<SyntheticEncoder>(3);
  ScoringOptions scoring;
  scoring.metric = SimilarityMetric::cosine_with(enc);
  scoring.multimodal = enc;
  std::vector<Query> val;
  for (const char* p : {"a red fox", "a blue whale", "an old oak tree", "a small boat"})
    val.push_back(Query::conditional(p, p));
  const auto t = calibrate(val, backend, {scoring, true, 4, "x"});
  EXPECT_TRUE(t.combined);

  const auto images = backend.generate(val);
  const SimilarityGraph g(4, pairwise_similarities(images, scoring.metric));
  const auto avg = g.node_averages();
  double expected = -1e9;
  for (std::size_t k = 0; k < 4; ++k) expected = std::max(expected, corre_score(val[k], images[k], *enc) + 3 * avg[k]);
  EXPECT_DOUBLE_EQ(t.tau, expected);
}

TEST(Threshold, JsonRoundTripAndFieldOrder) {
  Threshold t;
  t.tau = 0.125;
  t.n_validation = 20;
  t.metric = MetricKind::ssim;
  t.density_mode = DensityMode::paper_denominator;
  t.created_at = "2026-01-01T00:00:00Z";
  t.backend_id = "synthetic-unconditional";
  EXPECT_EQ(t.to_json().dump(),
            R"({"tau":0.125,"n_validation":20,"metric":"ssim","density_mode":"paper_denominator",)"
            R"("created_at":"2026-01-01T00:00:00Z","backend_id":"synthetic-unconditional"})");
  const auto path = temp_dir("ufid_threshold") / "t.json";
  t.save(path.string());
  const auto back = Threshold::load(path.string());
  EXPECT_EQ(back.tau, t.tau);
  EXPECT_EQ(back.metric, t.metric);
  EXPECT_EQ(back.density_mode, t.density_mode);
  EXPECT_EQ(back.backend_id, t.backend_id);
  EXPECT_FALSE(back.combined);
}

TEST(Threshold, RejectsInvalidFiles) {
  EXPECT_UFID_ERROR(Threshold::from_json(nlohmann::json::parse(R"({"tau":0.1,"n_validation":1,"metric":"ssim","density_mode":"mean_pairs"})")),
                    ErrorCode::config);
  EXPECT_UFID_ERROR(Threshold::from_json(nlohmann::json::parse(R"({"tau":0.1})")), ErrorCode::config);
  EXPECT_UFID_ERROR(Threshold::load("/nonexistent/t.json"), ErrorCode::missing_file);
  const auto path = temp_dir("ufid_threshold_bad") / "t.json";
  std::ofstream(path) << "not json";
  EXPECT_UFID_ERROR(Threshold::load(path.string()), ErrorCode::config);
}

TEST(ValidationManifest, PromptsAndRelativeNoisePaths) {
  const auto dir = temp_dir("ufid_manifest");
  const Image img = Image::filled({2, 2, 1}, ImageKind::noise, -0.5f);
  std::filesystem::create_directories(dir / "noise");
  write_image_file((dir / "noise" / "a.ufim").string(), img);
  std::ofstream(dir / "m.json") << R"([{"id":"n0","noise":"noise/a.ufim"},{"prompt":"a cat"}])";
  const auto qs = load_validation_manifest((dir / "m.json").string());
  ASSERT_EQ(qs.size(), 2u);
  EXPECT_EQ(qs[0].id(), "n0");
  EXPECT_EQ(qs[0].noise(), img);
  EXPECT_EQ(qs[1].id(), "val/1");
  EXPECT_EQ(qs[1].prompt(), "a cat");
  std::ofstream(dir / "bad.json") << R"([{"id":"x"}])";
  EXPECT_UFID_ERROR(load_validation_manifest((dir / "bad.json").string()), ErrorCode::config);
}

TEST(Calibrate, RejectsMixedModes) {
  const SyntheticBackend backend(default_synthetic_params(), QueryMode::unconditional);
  auto val = clean_noise(2, "v", RngSeed{1});
  val.push_back(Query::conditional("c", "a cat"));
  EXPECT_UFID_ERROR(calibrate(val, backend, {.scoring = cosine_scoring()}), ErrorCode::mode_mismatch);
}
