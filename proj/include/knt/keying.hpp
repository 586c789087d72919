#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include "knt/feature_map.hpp"

namespace knt {

/// 256-bit secret from which every transform parameter is derived.
class MasterKey {
public:
    static constexpr std::size_t kBytes = 32;

    MasterKey() = default;
    explicit MasterKey(const std::array<std::uint8_t, kBytes>& bytes) : bytes_(bytes) {}

    /// Parses exactly 64 hex characters (either case).
    static MasterKey from_hex(std::string_view hex);
    /// Expands a 64-bit seed into a key via four splitmix64 outputs (experiment convenience).
    static MasterKey from_seed(std::uint64_t seed);
    /// Fixed, published key used by the "w/o key" ablation.
    static MasterKey public_key();

    std::string to_hex() const;
    /// First 8 hex chars of a keyed hash; safe to print.
    std::string fingerprint() const;

    const std::array<std::uint8_t, kBytes>& bytes() const noexcept { return bytes_; }

    friend bool operator==(const MasterKey&, const MasterKey&) = default;

private:
    std::array<std::uint8_t, kBytes> bytes_{};
};

namespace splitmix {

inline constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t next(std::uint64_t& state) noexcept {
    state += kGamma;
    return mix(state);
}

}  // namespace splitmix

/// Domain-separated 64-bit seed; see docs/determinism.md for the absorption sequence.
/// Throws InvalidArgument for an empty label or one longer than 64 bytes.
std::uint64_t derive_seed(const MasterKey& key, std::string_view label);

/// Independent key for experiment repetition `index` under `master`.
MasterKey derive_subkey(const MasterKey& master, std::uint64_t index);

/// Combines a chain of integers into one seed (per-sample / per-restart streams).
std::uint64_t combine_seeds(std::uint64_t base, std::initializer_list<std::uint64_t> parts) noexcept;

/// xoshiro256** seeded from four splitmix64 outputs of `seed`.
class UniformStream {
public:
    using result_type = std::uint64_t;

    explicit UniformStream(std::uint64_t seed) noexcept;

    result_type next() noexcept;
    result_type operator()() noexcept { return next(); }

    /// Uniform double in [0, 1) from the top 53 bits.
    double next_unit() noexcept;

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }

private:
    std::array<std::uint64_t, 4> s_{};
};

/// n Box-Muller normals scaled by `stddev`; two 64-bit draws per output pair.
std::vector<float> gaussian_stream(std::uint64_t seed, std::size_t n, double stddev);

/// Stateful Box-Muller source over a UniformStream, same draw convention as gaussian_stream.
class GaussianStream {
public:
    explicit GaussianStream(std::uint64_t seed) noexcept : uniform_(seed) {}

    /// Next standard normal, rounded to float.
    float next() noexcept;

private:
    UniformStream uniform_;
    float spare_ = 0.0f;
    bool has_spare_ = false;
};

/// Fisher-Yates from the top index down, j = next() mod (i + 1). Throws on n == 0.
Permutation key_permutation(std::uint64_t seed, std::size_t n);

}  // namespace knt
