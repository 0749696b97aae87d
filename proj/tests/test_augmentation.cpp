#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "ufid/augmentation.hpp"

using namespace ufid;

namespace {

Query noise_query(std::string id, Shape s, RngSeed seed) {
  RandomStream rng(seed, "input/" + id);
  std::vector<float> d(s.size());
  for (auto& x : d) x = static_cast<float>(rng.normal());
  return Query::unconditional(std::move(id), Image(s, ImageKind::noise, std::move(d)));
}

PhrasePool numbered_pool(std::size_t n) {
  std::vector<std::string> p;
  for (std::size_t i = 0; i < n; ++i) p.push_back("phrase " + std::to_string(i));
  return PhrasePool(p);
}

}  // namespace

TEST(AugmentUnconditional, BatchSizeAndOriginalFirst) {
  const auto q = noise_query("q", {4, 4, 3}, RngSeed{1});
  for (std::size_t m : {0u, 1u, 4u, 9u}) {
    const auto batch = augment_unconditional(q, MagnitudeSet{m, 0.01, RngSeed{2}});
    ASSERT_EQ(batch.size(), m + 1);
    EXPECT_EQ(batch[0], q);
    for (const auto& b : batch) EXPECT_EQ(b.noise().shape(), q.noise().shape());
  }
}

TEST(AugmentUnconditional, ZeroAlphaCopiesInput) {
  const auto q = noise_query("q", {3, 3, 2}, RngSeed{1});
  for (const auto& b : augment_unconditional(q, MagnitudeSet{4, 0.0, RngSeed{3}})) EXPECT_EQ(b.noise(), q.noise());
}

TEST(AugmentUnconditional, ZeroInputGivesScaledEpsilon) {
  const auto q = Query::unconditional("zero", Image::filled({2, 2, 1}, ImageKind::noise, 0.0f));
  const MagnitudeSet m{3, 0.01, RngSeed{7}};
  const auto batch = augment_unconditional(q, m);
  for (std::size_t j = 1; j <= 3; ++j) {
    RandomStream eps(m.seed, stream_label("aug", "zero", j));
    for (float v : batch[j].noise().data()) EXPECT_EQ(v, static_cast<float>(0.0 + 0.01 * eps.normal()));
  }
}

TEST(AugmentUnconditional, RejectsConditionalQuery) {
  EXPECT_UFID_ERROR(augment_unconditional(Query::conditional("c", "cat"), MagnitudeSet{}), ErrorCode::mode_mismatch);
}

TEST(AugmentUnconditional, RejectsNegativeAlpha) {
  const auto q = noise_query("q", {2, 2, 1}, RngSeed{1});
  EXPECT_UFID_ERROR(augment_unconditional(q, MagnitudeSet{2, -0.1, {}}), ErrorCode::invalid_argument);
}

// x, eps ~ N(0,1), alpha = 0.5: Var(x + alpha eps) = 1 + alpha^2 = 1.25.
TEST(AugmentUnconditional, VarianceIsOnePlusAlphaSquared) {
  const double alpha = 0.5;
  const Shape s{10, 10, 1};
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (int k = 0; k < 1000; ++k) {
    const auto q = noise_query("v" + std::to_string(k), s, RngSeed{11});
    const auto batch = augment_unconditional(q, MagnitudeSet{1, alpha, RngSeed{12}});
    for (float v : batch[1].noise().data()) {
      sum += v;
      sq += double(v) * v;
      ++n;
    }
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  EXPECT_NEAR(var, 1.0 + alpha * alpha, 0.02 * 1.25);
  EXPECT_GT(std::abs(var - (1.0 + alpha)), 0.2);
}

// batch[j] - batch[0] has mean 0 and variance alpha^2 (3 standard errors).
TEST(AugmentUnconditional, PerturbationMomentsMatchAlpha) {
  const double alpha = 0.01;
  const auto q = noise_query("m", {8, 8, 3}, RngSeed{1});
  double sum = 0, sq = 0, quad = 0;
  std::size_t n = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto batch = augment_unconditional(q, MagnitudeSet{4, alpha, RngSeed{seed}});
    for (std::size_t j = 1; j < batch.size(); ++j)
      for (std::size_t i = 0; i < q.noise().size(); ++i) {
        const double d = double(batch[j].noise().data()[i]) - q.noise().data()[i];
        sum += d;
        sq += d * d;
        quad += d * d * d * d;
        ++n;
      }
  }
  const double mean = sum / n;
  const double var = sq / n;
  const double mean_se = std::sqrt(var / n);
  const double var_se = std::sqrt((quad / n - var * var) / n);
  EXPECT_LE(std::abs(mean), 3 * mean_se);
  // float rounding of x + alpha*eps adds ~1e-8 relative noise, far below var_se.
  EXPECT_LE(std::abs(var - alpha * alpha), 3 * var_se + 1e-9);
}

TEST(AugmentUnconditional, DeterministicPerSeedAndId) {
  const auto q = noise_query("d", {4, 4, 1}, RngSeed{1});
  const MagnitudeSet m{4, 0.1, RngSeed{5}};
  EXPECT_EQ(augment_unconditional(q, m), augment_unconditional(q, m));
  const auto other = augment_unconditional(q, MagnitudeSet{4, 0.1, RngSeed{6}});
  EXPECT_NE(augment_unconditional(q, m)[1], other[1]);
}

TEST(AugmentConditional, AppendsWithSpace) {
  const auto q = Query::conditional("q", "a photo of a cat");
  const auto batch = augment_conditional(q, PhrasePool({"Iron Man"}), MagnitudeSet{1, 0.01, {}});
  ASSERT_EQ(batch.size(), 2u);
  EXPECT_EQ(batch[0], q);
  EXPECT_EQ(batch[1].prompt(), "a photo of a cat Iron Man");
}

TEST(AugmentConditional, ZeroMagnitudeReturnsOriginalOnly) {
  const auto q = Query::conditional("q", "a cat");
  const auto batch = augment_conditional(q, PhrasePool({"x"}), MagnitudeSet{0, 0.01, {}});
  ASSERT_EQ(batch.size(), 1u);
  EXPECT_EQ(batch[0], q);
}

TEST(AugmentConditional, DrawsWithoutReplacement) {
  const auto pool = numbered_pool(10);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto q = Query::conditional("q" + std::to_string(seed), "a dog");
    const auto batch = augment_conditional(q, pool, MagnitudeSet{4, 0.01, RngSeed{seed}});
    std::set<std::string> seen;
    for (std::size_t j = 1; j < batch.size(); ++j) {
      const std::string& p = batch[j].prompt();
      ASSERT_EQ(p.rfind("a dog ", 0), 0u) << "original prompt must be an exact prefix";
      seen.insert(p.substr(6));
    }
    EXPECT_EQ(seen.size(), 4u);
  }
}

TEST(AugmentConditional, FullPoolUsesEveryPhraseOnce) {
  const auto pool = numbered_pool(6);
  const auto batch = augment_conditional(Query::conditional("q", "p"), pool, MagnitudeSet{6, 0.01, RngSeed{3}});
  std::set<std::string> seen;
  for (std::size_t j = 1; j < batch.size(); ++j) seen.insert(batch[j].prompt().substr(2));
  EXPECT_EQ(seen, std::set<std::string>(pool.phrases().begin(), pool.phrases().end()));
}

TEST(AugmentConditional, SamplingIsRoughlyUniform) {
  const auto pool = numbered_pool(5);
  std::map<std::string, int> counts;
  for (int k = 0; k < 5000; ++k) {
    const auto batch =
        augment_conditional(Query::conditional("u" + std::to_string(k), "p"), pool, MagnitudeSet{1, 0.01, RngSeed{4}});
    counts[batch[1].prompt()]++;
  }
  ASSERT_EQ(counts.size(), 5u);
  for (const auto& [p, c] : counts) EXPECT_NEAR(c, 1000, 150) << p;
}

TEST(AugmentConditional, PoolTooSmall) {
  EXPECT_UFID_ERROR(augment_conditional(Query::conditional("q", "cat"), numbered_pool(3), MagnitudeSet{4, 0.01, {}}),
                    ErrorCode::pool_too_small);
}

TEST(AugmentConditional, RejectsUnconditionalQuery) {
  const auto q = Query::unconditional("u", Image::filled({1, 1, 1}, ImageKind::noise, 0.f));
  EXPECT_UFID_ERROR(augment_conditional(q, numbered_pool(4), MagnitudeSet{}), ErrorCode::mode_mismatch);
}

TEST(PhrasePool, RejectsEmptyAndDuplicatePhrases) {
  EXPECT_UFID_ERROR(PhrasePool({"a", ""}), ErrorCode::invalid_argument);
  EXPECT_UFID_ERROR(PhrasePool({"a", "b", "a"}), ErrorCode::invalid_argument);
}

TEST(PhrasePool, FileFormatSkipsBlankAndComments) {
  std::istringstream in("# header\nIron Man\n\n   \nKitchen Dish Washer\r\n#tail\n");
  const PhrasePool pool(PhrasePool::read_lines(in));
  EXPECT_EQ(pool.phrases(), (std::vector<std::string>{"Iron Man", "Kitchen Dish Washer"}));
}

TEST(PhrasePool, ShippedPoolHasFiftyDistinctPhrases) {
  const auto pool = PhrasePool::from_file(std::string(UFID_SOURCE_DIR) + "/data/phrases.txt");
  EXPECT_EQ(pool.size(), 50u);
  EXPECT_UFID_ERROR(PhrasePool::from_file("/nonexistent/phrases.txt"), ErrorCode::missing_file);
}
