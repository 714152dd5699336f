#include "pointdps/random.hpp"

namespace pointdps {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// splitmix64 finalizer
std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

RandomSource::RandomSource(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), key_(mix64(mix64(seed + kGolden) ^ mix64(stream * kGolden + 0x632BE59BD9B4E019ULL))) {}

RandomSource::result_type RandomSource::operator()() {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

RandomSource RandomSource::split(std::uint64_t id) const {
  return RandomSource(key_, mix64(id + stream_ * kGolden) ^ id);
}

double RandomSource::uniform() {
  // 53 random mantissa bits
  return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
}

double RandomSource::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double RandomSource::normal() { return normal_(*this); }

std::size_t RandomSource::index(std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(*this);
}

}  // namespace pointdps
