#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "nct/tensor.hpp"

namespace nct {

// Generator identity recorded in checkpoint headers. The raw stream is
// std::mt19937_64 (bit-exact per the C++ standard); normals come from the
// cosine branch pair of Box-Muller over uniforms in (0,1].
inline const char* kRngAlgoId = "mt19937_64/box-muller-v1";

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// Deterministic labeled stream: identical (seed, label) and draw count give
// identical values. The counter tracks raw 64-bit words consumed.
class RngStream {
  public:
    RngStream() : RngStream(0, "") {}

    RngStream(uint64_t seed, const std::string& label)
        : seed_(seed), label_(label), engine_(splitmix64(seed ^ fnv1a64(label))), counter_(0) {}

    uint64_t seed() const { return seed_; }
    const std::string& label() const { return label_; }
    uint64_t counter() const { return counter_; }

    uint64_t next_u64() {
        ++counter_;
        return engine_();
    }

    // Uniform in (0, 1]; never returns 0 so log() below is safe.
    double next_uniform() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    double next_uniform_in(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

    // Uniform integer in [0, n).
    uint64_t next_below(uint64_t n) {
        // Rejection sampling keeps the distribution exact.
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    std::pair<double, double> next_normal_pair() {
        double u1 = next_uniform();
        double u2 = next_uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        return {r * std::cos(a), r * std::sin(a)};
    }

    double next_normal() { return next_normal_pair().first; }

    template <typename S>
    TensorT<S> normal(std::vector<int> shape) {
        TensorT<S> t(std::move(shape));
        int64_t n = t.numel();
        int64_t i = 0;
        while (i + 1 < n) {
            auto [a, b] = next_normal_pair();
            t[i++] = static_cast<S>(a);
            t[i++] = static_cast<S>(b);
        }
        if (i < n) t[i] = static_cast<S>(next_normal_pair().first);
        return t;
    }

    template <typename S>
    TensorT<S> uniform(std::vector<int> shape, double lo, double hi) {
        TensorT<S> t(std::move(shape));
        for (int64_t i = 0; i < t.numel(); ++i)
            t[i] = static_cast<S>(next_uniform_in(lo, hi));
        return t;
    }

    // Independent child stream; drawing from it does not advance this one.
    RngStream fork(const std::string& sublabel) const {
        return RngStream(splitmix64(seed_ ^ fnv1a64(label_)), sublabel);
    }

  private:
    uint64_t seed_;
    std::string label_;
    std::mt19937_64 engine_;
    uint64_t counter_;
};

}  // namespace nct
