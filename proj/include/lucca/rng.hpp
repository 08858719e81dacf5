#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace lucca {

/// Counter-based pseudo-random stream with cheap, collision-resistant
/// substream derivation. Every draw is a pure function of (key, counter),
/// so sequences are identical across platforms and independent of
/// evaluation order between streams. One global seed fans out to named
/// substreams (calibration noise, tree split, MPPI, episodes, ...) so
/// components can be varied independently.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0)
        : key_(mix(mix(seed + 0x9E3779B97F4A7C15ULL) ^ mix(stream))) {}

    /// Derives an independent stream; `id` may be a loop/rollout index.
    RngStream substream(std::uint64_t id) const {
        RngStream s(0);
        s.key_ = mix(key_ ^ mix(id + 0xD1B54A32D192ED03ULL));
        return s;
    }

    /// Named substream (name hashed with FNV-1a).
    RngStream substream(std::string_view name) const {
        std::uint64_t h = 0xCBF29CE484222325ULL;
        for (unsigned char c : name) {
            h ^= c;
            h *= 0x100000001B3ULL;
        }
        return substream(h);
    }

    std::uint64_t next_u64() { return mix(key_ + (++counter_) * 0x9E3779B97F4A7C15ULL); }

    /// Uniform draw in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Standard normal draw (Box-Muller; the second variate of each pair is
    /// cached, keeping the stream's consumption pattern deterministic).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace lucca
