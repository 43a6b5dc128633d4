#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace g2d {

// SplitMix64, used to expand a single seed into stream states.
struct SplitMix64 {
    std::uint64_t x;

    explicit SplitMix64(std::uint64_t seed) : x(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
};

// xoshiro256** — 4x u64 state, which is exactly what the checkpoint
// format stores. No hidden carry (normal() draws fresh uniforms), so
// serializing the state words captures the full generator.
class Rng {
public:
    Rng() : Rng(0) {}

    explicit Rng(std::uint64_t seed) {
        SplitMix64 sm(seed);
        for (auto& w : s_) w = sm.next();
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0,1)
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n), n >= 1, via rejection
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t v;
        do {
            v = next();
        } while (v >= limit);
        return v % n;
    }

    // standard normal via Box-Muller (spare discarded to keep state
    // fully described by the four words)
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    std::array<std::uint64_t, 4> state() const { return s_; }
    void set_state(const std::array<std::uint64_t, 4>& s) { s_ = s; }

    // independent per-record stream: mixes (seed, index) so records can be
    // generated in any order or thread with identical results
    static Rng stream(std::uint64_t seed, std::uint64_t index) {
        SplitMix64 sm(seed ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
        Rng r(0);
        for (auto& w : r.s_) w = sm.next();
        return r;
    }

private:
    static std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    std::array<std::uint64_t, 4> s_{};
};

}  // namespace g2d
