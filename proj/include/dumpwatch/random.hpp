#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dumpwatch {

using Rng = std::mt19937_64;

/// Seed for a named substream of a global seed ("chip", "init", "shuffle",
/// "synth", ...). Streams with different names are decorrelated.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

/// Uniform integer in [0, n).
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

}  // namespace dumpwatch
