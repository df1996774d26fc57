#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace rig {

// All randomness in the project reduces to one integer mixing function applied
// to (key, counter) pairs, so every draw is reproducible from the root seed on
// any platform and independent streams never alias.
//
//   mix64      : SplitMix64 finalizer.
//   draw       : n-th sample of the stream identified by `key`.
//   split      : derive a child key from (key, tag); tags are either small
//                integers or fnv1a64 hashes of string labels.
inline constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;

inline constexpr uint64_t mix64(uint64_t x) {
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ull;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBull;
    x ^= x >> 31;
    return x;
}

inline constexpr uint64_t draw(uint64_t key, uint64_t counter) {
    return mix64(key + (counter + 1) * kGolden);
}

inline constexpr uint64_t split(uint64_t key, uint64_t tag) {
    return mix64(key ^ mix64(tag));
}

inline constexpr uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

inline constexpr uint64_t split(uint64_t key, std::string_view label) {
    return split(key, fnv1a64(label));
}

// Stateful convenience wrapper over the counter-based draws.  Copyable; a copy
// continues the same stream from the same position.
class Rng {
public:
    explicit Rng(uint64_t key) : key_(key) {}

    uint64_t next_u64() { return draw(key_, counter_++); }

    // Uniform in [0, 1) with 53 bits of precision.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).  Plain modulo: the (negligible) bias is an
    // accepted part of the reproducibility contract.
    uint64_t below(uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller; consumes two uniform draws per call.
    double next_gaussian() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 0x1.0p-100) u1 = 0x1.0p-100;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    Rng child(uint64_t tag) const { return Rng(split(key_, tag)); }
    Rng child(std::string_view label) const { return Rng(split(key_, label)); }

    uint64_t key() const { return key_; }
    uint64_t counter() const { return counter_; }

private:
    uint64_t key_;
    uint64_t counter_ = 0;
};

}  // namespace rig
