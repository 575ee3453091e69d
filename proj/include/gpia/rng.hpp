#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace gpia {

// All stochastic code draws from a seeded mt19937_64. Independent sub-streams
// are derived with splitmix64 so parallel and serial execution of per-sample
// work consume identical randomness.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

struct Rng {
    std::mt19937_64 gen;

    explicit Rng(std::uint64_t seed) : gen(seed) {}

    double uniform() {
        return std::uniform_real_distribution<double>(0.0, 1.0)(gen);
    }

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(gen);
    }

    // Inclusive bounds.
    int uniform_int(int lo, int hi) {
        return std::uniform_int_distribution<int>(lo, hi)(gen);
    }

    std::size_t uniform_index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(gen);
    }

    double normal() {
        return std::normal_distribution<double>(0.0, 1.0)(gen);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Inverse-CDF Laplace(mu=0, b): x = -b * sgn(u) * ln(1 - 2|u|), u in (-0.5, 0.5).
    double laplace(double b) {
        double u = uniform() - 0.5;
        double t = std::max(1.0 - 2.0 * std::abs(u), 1e-300);
        double s = (u >= 0.0) ? 1.0 : -1.0;
        return -b * s * std::log(t);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        std::shuffle(v.begin(), v.end(), gen);
    }

    // k distinct values from {0..n-1} by partial Fisher-Yates, ascending order.
    std::vector<int> sample_indices(int n, int k) {
        std::vector<int> idx(n);
        for (int i = 0; i < n; ++i) idx[i] = i;
        for (int i = 0; i < k; ++i) {
            int j = uniform_int(i, n - 1);
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k);
        std::sort(idx.begin(), idx.end());
        return idx;
    }

    // k distinct elements drawn from pool, ascending order.
    std::vector<int> sample_from(const std::vector<int>& pool, int k) {
        std::vector<int> picked = sample_indices(static_cast<int>(pool.size()), k);
        for (auto& i : picked) i = pool[static_cast<std::size_t>(i)];
        std::sort(picked.begin(), picked.end());
        return picked;
    }
};

}  // namespace gpia
