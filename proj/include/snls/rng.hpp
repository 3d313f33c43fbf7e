#pragma once

#include <boost/random/normal_distribution.hpp>

#include <cstdint>
#include <random>
#include <string_view>

namespace snls {

/// SplitMix64 finalizer; used to derive independent stream seeds from counters.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// FNV-1a, for turning run labels into stream keys.
constexpr std::uint64_t hash_label(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/**
 * A random stream identified by (seed, run, index). Streams with different
 * counters are statistically independent; the same counters always replay
 * the same draws, regardless of which worker thread consumes them.
 */
class RandomStream {
public:
    RandomStream(std::uint64_t seed, std::uint64_t run, std::uint64_t index)
        : engine_(mix64(mix64(mix64(seed) ^ run) ^ mix64(index + 0x632be59bd9b4e019ULL))) {}

    explicit RandomStream(std::uint64_t seed) : RandomStream(seed, 0, 0) {}

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    std::uint64_t bits() { return engine_(); }

private:
    std::mt19937_64 engine_;
    boost::random::normal_distribution<double> normal_{0.0, 1.0}; // ziggurat
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

} // namespace snls
