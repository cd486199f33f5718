#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace benet {

inline uint64_t split_mix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derives an independent stream seed from a root seed plus tags.
inline uint64_t mix_seed(std::initializer_list<uint64_t> parts) {
    uint64_t s = 0x6a09e667f3bcc908ULL;
    for (uint64_t p : parts) {
        s ^= p + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
        (void)split_mix64(s);
    }
    return split_mix64(s);
}

// Deterministic RNG. mt19937_64 has a standard-mandated sequence; the
// distributions are hand-rolled because the std:: ones are
// implementation-defined and would break cross-build reproducibility.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t u64() { return eng_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller without a cached spare: two draws per call, stateless.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // [0, n). Modulo bias is negligible for the n used here.
    int64_t below(int64_t n) { return static_cast<int64_t>(eng_() % static_cast<uint64_t>(n)); }

    bool coin() { return (eng_() & 1ULL) != 0; }

private:
    std::mt19937_64 eng_;
};

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
        int64_t j = rng.below(i + 1);
        std::swap(v[i], v[j]);
    }
}

}  // namespace benet
