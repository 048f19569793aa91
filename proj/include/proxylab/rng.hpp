#pragma once

// Portable random numbers. Everything that needs randomness goes through
// Rng so that a (seed, stream) pair reproduces the same bytes on every
// platform and in every language that implements the same three pieces:
//
//   * SplitMix64 (Steele, Lea, Flood 2014) expands a 64-bit seed into state;
//   * xoshiro256** 1.0 (Blackman, Vigna 2018) is the generator proper;
//   * doubles are (next() >> 11) * 2^-53, normals use Box-Muller (cosine
//     branch only, no cached second value), bounded integers use rejection
//     on the top of the 64-bit range.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>

namespace proxylab {

class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

class Xoshiro256StarStar {
 public:
  explicit constexpr Xoshiro256StarStar(std::array<std::uint64_t, 4> state) noexcept
      : s_(state) {}

  static constexpr Xoshiro256StarStar from_seed(std::uint64_t seed) noexcept {
    SplitMix64 sm(seed);
    return Xoshiro256StarStar({sm.next(), sm.next(), sm.next(), sm.next()});
  }

  constexpr std::uint64_t next() noexcept {
    const std::uint64_t result = std::rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = std::rotl(s_[3], 45);
    return result;
  }

 private:
  std::array<std::uint64_t, 4> s_;
};

// Independent sub-stream seed: one SplitMix64 step over seed ^ golden * (stream+1).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return SplitMix64(seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1))).next();
}

// Named sub-streams, so unrelated consumers of one run seed never share draws.
enum class Stream : std::uint64_t {
  data = 1,
  lift = 2,
  embed_init = 3,
  proxy_init = 4,
  sampler = 5,
  kmeans = 6,
  toy_init = 7,
};

class Rng {
 public:
  explicit constexpr Rng(std::uint64_t seed) noexcept
      : gen_(Xoshiro256StarStar::from_seed(seed)) {}

  constexpr Rng(std::uint64_t seed, Stream stream) noexcept
      : Rng(derive_seed(seed, static_cast<std::uint64_t>(stream))) {}

  constexpr std::uint64_t next_u64() noexcept { return gen_.next(); }

  // Uniform on [0, 1).
  constexpr double uniform() noexcept {
    return static_cast<double>(gen_.next() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Uniform on {0, ..., n-1}; n must be positive.
  constexpr std::uint64_t below(std::uint64_t n) noexcept {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = gen_.next();
      if (r >= threshold) return r % n;
    }
  }

  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  // Fisher-Yates, drawing j in [0, i] from the top index down.
  template <class T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  Xoshiro256StarStar gen_;
};

}  // namespace proxylab
