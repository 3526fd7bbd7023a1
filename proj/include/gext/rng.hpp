#pragma once

#include <cstdint>
#include <random>
#include <span>

#include <boost/random/normal_distribution.hpp>

namespace gext {

/// SplitMix64 finalizer; a bijection on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed of the independent stream (master, index, stream).
///
/// Every replicate draws from its own stream, so results never depend on how
/// replicates are scheduled across workers.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index,
                                    std::uint64_t stream = 0) noexcept {
  return mix64(mix64(mix64(master) ^ index) + stream * 0xd1b54a32d192ed03ULL);
}

/// Standard normal variates from a 64-bit Mersenne twister.
///
/// Boost's ziggurat normal is used instead of std::normal_distribution because its
/// output sequence is specified by the library, not by the standard library vendor.
class NormalSource {
 public:
  explicit NormalSource(std::uint64_t seed) : engine_(seed) {}

  double operator()() { return dist_(engine_); }

  void fill(std::span<double> out) {
    for (double& v : out) v = dist_(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  boost::random::normal_distribution<double> dist_{0.0, 1.0};
};

}  // namespace gext
