#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

namespace ecsac {

/// Deterministic random source. All distribution transforms are implemented
/// here (not via std:: distributions) so that a given seed produces the same
/// stream on every platform and standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller. Always consumes exactly two draws and
    /// never caches, so the stream position is a pure function of call count.
    double normal() {
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform index in [0, n). n must be > 0.
    std::size_t uniform_index(std::size_t n) {
        return static_cast<std::size_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    std::string save_state() const {
        std::ostringstream os;
        os << gen_;
        return os.str();
    }

    void restore_state(const std::string& s) {
        std::istringstream is(s);
        is >> gen_;
    }

private:
    std::mt19937_64 gen_;
};

/// splitmix64-style mix for deriving independent seeds (episode seeds,
/// evaluation streams) from a run seed without touching the main stream.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix_seed(mix_seed(a, b), c);
}

} // namespace ecsac
