#pragma once

#include <cstdint>
#include <random>

namespace dauction {

using Rng = std::mt19937_64;

// Independent random streams derived from one root seed. Each consumer of
// randomness owns a stream so that, e.g., toggling conflict elimination does
// not shift the market samples drawn by a training run.
enum class Stream : std::uint64_t {
  kMarketSize = 1,
  kMarketSample = 2,
  kProbeInit = 3,
  kConflictDraw = 4,
  kParamInit = 5,
  kRandomProbe = 6,
  kEvalProfit = 7,
  kEvalIc = 8,
  kMechanism = 9,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed for item `index` of `stream` under `root`: a fixed function of the
// triple, so per-item draws can be regenerated in any order.
constexpr std::uint64_t derive_seed(std::uint64_t root, Stream stream,
                                    std::uint64_t index = 0) {
  return splitmix64(splitmix64(splitmix64(root) ^ static_cast<std::uint64_t>(stream)) + index);
}

inline Rng make_rng(std::uint64_t root, Stream stream, std::uint64_t index = 0) {
  return Rng(derive_seed(root, stream, index));
}

// Uniform on [low, high); returns low for a degenerate interval.
inline double uniform(Rng& rng, double low, double high) {
  if (!(high > low)) return low;
  return std::uniform_real_distribution<double>(low, high)(rng);
}

// Uniform integer on the closed interval [low, high].
inline int uniform_int(Rng& rng, int low, int high) {
  if (high <= low) return low;
  return std::uniform_int_distribution<int>(low, high)(rng);
}

}  // namespace dauction
