#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "lipsync/core/common.hpp"

namespace lipsync {

// xoshiro256++ with splitmix64 seeding. Self-contained so that sampled
// streams are identical across platforms and can be checkpointed exactly.
class Rng {
public:
    Rng() : Rng(0x9e3779b97f4a7c15ull) {}

    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& s : state_) {
            // splitmix64
            x += 0x9e3779b97f4a7c15ull;
            uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
            s = z ^ (z >> 31);
        }
    }

    uint64_t next_u64() {
        const uint64_t result = rotl_(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl_(state_[3], 45);
        return result;
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [0, n)
    int64_t uniform_int(int64_t n) {
        LIPSYNC_CHECK(n > 0, BoundsError, "uniform_int needs n > 0");
        return static_cast<int64_t>(uniform() * static_cast<double>(n));
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller without caching the spare, so the state alone determines
    // the stream (no hidden carry between checkpoint save/load).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::array<uint64_t, 4> save_state() const { return state_; }
    void restore_state(const std::array<uint64_t, 4>& s) { state_ = s; }

    std::string state_hex() const {
        char buf[4 * 16 + 1];
        for (int i = 0; i < 4; ++i) std::snprintf(buf + i * 16, 17, "%016llx", (unsigned long long)state_[i]);
        return std::string(buf, 64);
    }

    void restore_state_hex(const std::string& hex) {
        LIPSYNC_CHECK(hex.size() == 64, IoError, "rng state hex must be 64 chars");
        for (int i = 0; i < 4; ++i) state_[i] = std::stoull(hex.substr(i * 16, 16), nullptr, 16);
    }

    // Independent substream, e.g. one per sweep cell or data worker.
    Rng split(uint64_t salt) {
        return Rng(next_u64() ^ (salt * 0x9e3779b97f4a7c15ull + 0x165667b19e3779f9ull));
    }

private:
    static uint64_t rotl_(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::array<uint64_t, 4> state_{};
};

}  // namespace lipsync
