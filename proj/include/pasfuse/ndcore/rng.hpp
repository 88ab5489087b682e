#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace pasfuse {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b);
std::uint64_t hash_string(std::string_view s);

/// Counter-based 64-bit generator. Output k is splitmix64(key, k), so a
/// stream is fully determined by its key and streams split by hashing extra
/// words into the key. Platform-independent: uniform and normal draws are
/// computed here rather than through <random> distributions.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) : key_(splitmix64(seed)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return hash_combine(key_, counter_++); }

  /// Independent child stream keyed by `word`; does not advance this one.
  Rng split(std::uint64_t word) const {
    Rng child;
    child.key_ = hash_combine(key_, splitmix64(word ^ 0x9e3779b97f4a7c15ULL));
    return child;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal();

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace pasfuse
