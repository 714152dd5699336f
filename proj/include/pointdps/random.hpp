#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace pointdps {

/// Counter-based, splittable random stream.
///
/// Output word i of stream (seed, stream) is a pure function of
/// (seed, stream, i), so streams handed to worker threads produce the same
/// values regardless of scheduling. Satisfies UniformRandomBitGenerator and
/// can be passed to the <random> distributions.
class RandomSource {
 public:
  using result_type = std::uint64_t;

  explicit RandomSource(std::uint64_t seed = 0, std::uint64_t stream = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  /// Independent child stream; children with different ids never overlap.
  RandomSource split(std::uint64_t id) const;

  double uniform();                    // [0, 1)
  double uniform(double lo, double hi);
  double normal();                     // standard normal
  std::size_t index(std::size_t n);    // uniform in [0, n)

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace pointdps
