#pragma once

// Counter-based pseudo-random generator (splitmix64 finalizer over a
// keyed counter). Stateless apart from the counter, so streams can be
// derived from (seed, stream) pairs and results are identical across
// platforms and runs.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

namespace jepa4rec {

namespace detail {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

} // namespace detail

class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
        : key_(detail::splitmix64(detail::splitmix64(seed) ^ stream)) {}

    // Derive an independent substream, e.g. per (sequence, epoch).
    CounterRng fork(std::uint64_t stream) const {
        CounterRng r(0);
        r.key_ = detail::splitmix64(key_ ^ detail::splitmix64(stream));
        r.counter_ = 0;
        return r;
    }

    std::uint64_t next_u64() {
        return detail::splitmix64(key_ ^ (counter_++ * 0xd6e8feb86659fd93ull));
    }

    // Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n). Unbiased via rejection.
    std::uint64_t next_below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    // Standard normal via Box-Muller (one value per call, no caching so
    // the draw count stays predictable).
    double next_gaussian() {
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    bool next_bernoulli(double p) { return next_double() < p; }

    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

// FNV-1a, used for vocab/corpus fingerprints and checkpoint checksums.
class Fnv1a {
public:
    void update(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            hash_ ^= p[i];
            hash_ *= 0x100000001b3ull;
        }
    }
    void update_string(const std::string& s) { update(s.data(), s.size()); }
    std::uint64_t digest() const { return hash_; }

private:
    std::uint64_t hash_ = 0xcbf29ce484222325ull;
};

} // namespace jepa4rec
