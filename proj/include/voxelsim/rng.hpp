#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace voxelsim {

/// Deterministic RNG wrapper. std::mt19937_64 is fully specified by the
/// standard; the distributions below are hand-rolled so that streams are
/// reproducible across compilers and standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    /// Uniform double in [0, 1).
    double uniform() { return double(eng_() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection sampling keeps the stream unbiased.
    uint64_t bounded(uint64_t n) {
        if (n == 0) return 0;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = eng_();
        } while (x >= limit);
        return x % n;
    }

    /// Uniform integer in [lo, hi] inclusive.
    int64_t range(int64_t lo, int64_t hi) { return lo + int64_t(bounded(uint64_t(hi - lo + 1))); }

    /// Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& xs) {
        for (size_t i = xs.size(); i > 1; --i) {
            size_t j = size_t(bounded(uint64_t(i)));
            std::swap(xs[i - 1], xs[j]);
        }
    }

    /// k distinct indices from [0, n), uniform without replacement
    /// (partial Fisher-Yates over an index table).
    std::vector<int64_t> sample_without_replacement(int64_t n, int64_t k);

    /// Derive an independent child seed; mixing avoids correlated streams
    /// when seeds are consecutive (epoch, step) counters.
    static uint64_t mix(uint64_t a, uint64_t b) {
        uint64_t x = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ULL;
        x ^= x >> 27;
        x *= 0x94d049bb133111ebULL;
        x ^= x >> 31;
        return x;
    }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

inline std::vector<int64_t> Rng::sample_without_replacement(int64_t n, int64_t k) {
    if (k > n) k = n;
    std::vector<int64_t> idx(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) idx[size_t(i)] = i;
    for (int64_t i = 0; i < k; ++i) {
        int64_t j = i + int64_t(bounded(uint64_t(n - i)));
        std::swap(idx[size_t(i)], idx[size_t(j)]);
    }
    idx.resize(size_t(k));
    return idx;
}

}  // namespace voxelsim
