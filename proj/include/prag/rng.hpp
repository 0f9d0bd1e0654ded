#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "prag/io.hpp"

namespace prag {

// Deterministic RNG used everywhere randomness is needed. All randomness in a
// run flows from one top-level seed through named substreams so components are
// independently reproducible and byte-identical across compilers (the std
// distributions are implementation-defined, so sampling is hand-rolled).
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {
        // Avoid the all-zero fixed point and decorrelate small seeds.
        next_u64();
        next_u64();
    }

    // Substream derivation: hash the parent seed with a stream name (and an
    // optional index, e.g. the epoch for shuffling).
    static Rng substream(uint64_t seed, const std::string& name, uint64_t index = 0) {
        uint64_t h = fnv1a64(name, 0xcbf29ce484222325ull ^ seed);
        h = fnv1a64(&index, sizeof(index), h);
        return Rng(h);
    }

    uint64_t next_u64() {
        // splitmix64
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform index in [0, n). Modulo bias is ~2^-50 at desk scale; determinism
    // matters more here than exact uniformity.
    size_t index(size_t n) { return n == 0 ? 0 : static_cast<size_t>(next_u64() % n); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

    double normal(double mean = 0.0, double stddev = 1.0) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + stddev * spare_;
        }
        double u1 = 0.0;
        do { u1 = unit(); } while (u1 <= 0.0);
        double u2 = unit();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return mean + stddev * r * std::cos(a);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct indices from [0, n) when k <= n, else k draws with replacement.
    std::vector<size_t> sample_indices(size_t n, size_t k) {
        std::vector<size_t> out;
        out.reserve(k);
        if (k <= n) {
            std::vector<size_t> pool(n);
            for (size_t i = 0; i < n; ++i) pool[i] = i;
            for (size_t i = 0; i < k; ++i) {
                size_t j = i + index(n - i);
                std::swap(pool[i], pool[j]);
                out.push_back(pool[i]);
            }
        } else {
            for (size_t i = 0; i < k; ++i) out.push_back(index(n));
        }
        return out;
    }

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace prag
