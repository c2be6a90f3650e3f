#pragma once

#include <cstdint>
#include <random>

namespace rnot {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer. Used to derive independent child seeds from a root
/// seed so that per-task streams do not depend on scheduling order.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream,
                                    std::uint64_t index = 0) {
  return mix64(mix64(root ^ mix64(stream)) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t root, std::uint64_t stream, std::uint64_t index = 0) {
  return Rng(derive_seed(root, stream, index));
}

// Named streams, so call sites read as intent rather than magic numbers.
namespace stream {
inline constexpr std::uint64_t kLandmarks = 1;
inline constexpr std::uint64_t kNetInit = 2;
inline constexpr std::uint64_t kSourceBatch = 3;
inline constexpr std::uint64_t kTargetBatch = 4;
inline constexpr std::uint64_t kEvalSource = 5;
inline constexpr std::uint64_t kEvalPool = 6;
inline constexpr std::uint64_t kValidation = 7;
inline constexpr std::uint64_t kPairs = 8;
inline constexpr std::uint64_t kLloyd = 9;
inline constexpr std::uint64_t kRcpmSites = 10;
inline constexpr std::uint64_t kEvalTarget = 11;
inline constexpr std::uint64_t kCandidates = 12;
}  // namespace stream

}  // namespace rnot
