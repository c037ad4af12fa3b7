#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace pcdpem {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Seed derived from a root seed and a list of stream keys, e.g. (seed, agent, time).
/// Streams keyed this way are independent of evaluation order, so serial and
/// parallel runs draw identical numbers.
std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> keys) noexcept;

inline Rng make_rng(std::uint64_t root, std::initializer_list<std::uint64_t> keys) {
  return Rng(derive_seed(root, keys));
}

/// Stream tags keep different consumers of the same root seed apart.
namespace stream {
inline constexpr std::uint64_t kTopology = 0x746f706fULL;
inline constexpr std::uint64_t kProcessNoise = 0x70726f63ULL;
inline constexpr std::uint64_t kMeasurementNoise = 0x6d656173ULL;
inline constexpr std::uint64_t kInitialState = 0x696e6974ULL;
inline constexpr std::uint64_t kParticleFilter = 0x70667277ULL;
inline constexpr std::uint64_t kGossip = 0x676f7373ULL;
inline constexpr std::uint64_t kThetaInit = 0x74686574ULL;
inline constexpr std::uint64_t kExperiment = 0x65787072ULL;
}  // namespace stream

}  // namespace pcdpem
