#include "dumpwatch/random.hpp"

#include <stdexcept>

namespace dumpwatch {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
    // FNV-1a over the stream name, mixed with the seed.
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : stream) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return splitmix64(splitmix64(seed) ^ h);
}

std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: empty range");
    // Rejection sampling keeps the result exactly uniform.
    const std::uint64_t limit = Rng::max() - (Rng::max() % n);
    std::uint64_t v = rng();
    while (v >= limit) v = rng();
    return v % n;
}

}  // namespace dumpwatch
