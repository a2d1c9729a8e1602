// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace melbench {

/// Counter-based generator: draw i of a stream is mix(key, i), so a stream is
/// fully described by (key, counter) and child streams are derived by hashing
/// the parent key with a stream id. Distributions are implemented here rather
/// than via <random> so draw sequences are identical on every platform.
class Rng {
 public:
  static constexpr std::string_view kAlgorithm = "splitmix64-ctr";

  explicit Rng(std::uint64_t seed = 0);

  /// Stream derived from a seed and a path of ids, e.g. (seed, {epoch, index}).
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

  /// Independent child stream; does not advance this generator.
  [[nodiscard]] Rng split(std::uint64_t stream) const;

  std::uint64_t next_u64();

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer on [0, n); unbiased.
  std::uint64_t uniform_int(std::uint64_t n);
  bool bernoulli(double p);
  /// Box-Muller; consumes exactly two raw draws per call.
  double normal(double mean = 0.0, double stddev = 1.0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  Rng(std::uint64_t seed, std::uint64_t key) : seed_(seed), key_(key) {}

  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace melbench
