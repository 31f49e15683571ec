#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mdmsteer {

using Rng = std::mt19937_64;

// Derives an independent stream from a root seed, a stream name
// ("train", "sample", "eval", ...) and an index (step, worker, element).
// The same triple always yields the same stream.
Rng make_stream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0);

// Uniform draw in [0, 1).
inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace mdmsteer
