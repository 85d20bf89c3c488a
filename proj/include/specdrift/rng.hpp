#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace specdrift {

// Deterministic splitmix64 stream. Used everywhere randomness is needed so
// that results are bit-identical across runs and platforms; fork() derives
// independent substreams from (seed, stream-id) pairs without sharing state.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {
        // warm up so small seeds (0, 1, ...) decorrelate immediately
        next_u64();
        next_u64();
    }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Substream keyed by `stream`; independent of how much of *this was consumed.
    Rng fork(uint64_t stream) const {
        uint64_t mixed = state_ ^ (0x9e3779b97f4a7c15ULL * (stream + 0x632be59bd9b4e019ULL));
        return Rng(mixed);
    }

    // [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, no spare caching so fork/replay order stays predictable.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // [0, n)
    uint64_t next_below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    uint64_t state_;
};

}  // namespace specdrift
