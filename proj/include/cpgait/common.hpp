// Shared error types, execution mode and deterministic RNG.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace cpgait {

// Precondition / shape-contract violations.
struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Malformed or out-of-range input data.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad or unknown configuration.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unreadable or incompatible checkpoint.
struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

inline void validate(bool cond, const std::string& msg) {
    if (!cond) throw ValidationError(msg);
}

enum class Mode { train, eval };

// Counter-free splitmix64 generator. Streams are derived by hashing a base
// seed with salt values, so per-clip randomness is identical no matter how
// work is ordered or parallelized.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller. Caches the second deviate.
    double normal() {
        if (has_cache_) {
            has_cache_ = false;
            return cache_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double two_pi = 6.283185307179586476925286766559;
        cache_ = r * std::sin(two_pi * u2);
        has_cache_ = true;
        return r * std::cos(two_pi * u2);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    // Unbiased-enough integer in [0, n) via multiply-shift.
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    template <class Vec>
    void shuffle(Vec& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derives a decorrelated child seed; used for per-clip / per-epoch streams.
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
        return mix(mix(a, b), c);
    }

private:
    std::uint64_t state_;
    double cache_ = 0.0;
    bool has_cache_ = false;
};

constexpr double kPi = 3.14159265358979323846;
constexpr double kDegPerRad = 180.0 / kPi;

}  // namespace cpgait
