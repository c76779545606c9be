#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace cadgmm {

/// Deterministic seeded generator. The engine is std::mt19937_64, whose raw
/// 64-bit output stream is fully specified by the standard; the mappings to
/// doubles, bounded indices and shuffles are implemented here (standard
/// library distributions are implementation-defined and would break
/// cross-platform reproducibility).
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0,1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform index in [0,n). Rejection sampling, no modulo bias.
    std::size_t index(std::size_t n);

    /// Fisher-Yates shuffle driven by index().
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

    /// Child generator with a domain-separated seed, so the split / init /
    /// shuffle / inject streams of one run never alias.
    SeededRng substream(std::string_view tag) const;

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

/// FNV-1a over a byte range; also used for container fingerprints.
std::uint64_t fnv1a(const void* data, std::size_t len,
                    std::uint64_t basis = 14695981039346656037ULL);

}  // namespace cadgmm
