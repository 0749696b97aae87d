#pragma once

// Counter-based random streams keyed by (root seed, text label).
//
// Algorithm (fixed; changing it changes every golden value in the tests):
//   key        = mix64(root ^ mix64(fnv1a64(label)))
//   word(i)    = mix64(key + (i + 1) * 0x9E3779B97F4A7C15)     (SplitMix64 at counter i)
//   uniform(i) = ((word(i) >> 11) + 0.5) * 2^-53               in (0, 1)
//   normal     = Box-Muller on two consecutive uniforms, cosine branch first,
//                sine branch cached for the next draw.
// The stream holds only (key, counter), so any draw can be reproduced from
// its label without shared state.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <type_traits>

namespace ufid {

inline constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

struct RngSeed {
  std::uint64_t root = 0;
};

// Joins label parts with '/', e.g. stream_label("aug", "q7", 2) == "aug/q7/2".
template <typename... Parts>
std::string stream_label(std::string_view tag, const Parts&... parts) {
  std::string out(tag);
  [[maybe_unused]] auto append = [&out](const auto& part) {
    out.push_back('/');
    if constexpr (std::is_arithmetic_v<std::decay_t<decltype(part)>>)
      out += std::to_string(part);
    else
      out += std::string_view(part);
  };
  (append(parts), ...);
  return out;
}

class RandomStream {
 public:
  RandomStream(RngSeed seed, std::string_view label) noexcept
      : key_(mix64(seed.root ^ mix64(fnv1a64(label)))) {}

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  double uniform() noexcept { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  // Uniform integer in [0, bound) by rejection, bound > 0.
  std::uint64_t below(std::uint64_t bound) noexcept {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % bound;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline RandomStream derive_rng(RngSeed seed, std::string_view label) { return RandomStream(seed, label); }

}  // namespace ufid
