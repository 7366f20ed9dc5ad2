#pragma once

#include <cstdint>
#include <cmath>
#include <string_view>
#include <vector>

namespace tdlab {

// splitmix64; used to expand seeds into xoshiro state and to derive stream seeds
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// derive an independent stream seed from a master seed and a purpose tag
inline uint64_t derive_seed(uint64_t master, std::string_view tag) {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a over the tag
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    uint64_t s = master ^ h;
    return splitmix64(s);
}

// xoshiro256**; integer core keeps sequences identical across platforms
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64(sm);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // uniform in [0, 1), 53 random bits
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; second value cached so draws come in a fixed order
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    // unbiased integer in [0, n) by rejection
    uint64_t below(uint64_t n) {
        const uint64_t threshold = (0 - n) % n;
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    int index(int n) { return static_cast<int>(below(static_cast<uint64_t>(n))); }

    // k distinct indices from [0, n), partial Fisher-Yates
    std::vector<int64_t> sample_without_replacement(int64_t n, int64_t k) {
        std::vector<int64_t> pool(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
        std::vector<int64_t> out;
        out.reserve(static_cast<size_t>(k));
        for (int64_t i = 0; i < k; ++i) {
            const int64_t j = i + static_cast<int64_t>(below(static_cast<uint64_t>(n - i)));
            std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
            out.push_back(pool[static_cast<size_t>(i)]);
        }
        return out;
    }

    Rng fork(std::string_view tag) { return Rng(derive_seed(next_u64(), tag)); }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t state_[4] = {};
    bool have_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace tdlab
