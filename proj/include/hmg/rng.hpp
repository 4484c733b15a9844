#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace hmg {

/// SplitMix64 finalizer; used to derive independent stream keys.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derives a child seed from a parent seed and two integer labels
/// (e.g. eps index and stage id). Pure function of its arguments.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) noexcept {
    return mix64(mix64(mix64(seed) ^ (a * 0xd1b54a32d192ed03ULL)) ^ (b * 0x8cb92ba72f3d8dd7ULL));
}

/// Philox4x32-10 counter-based generator.
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;

    explicit constexpr Philox4x32(std::uint64_t key) noexcept
        : k0_(static_cast<std::uint32_t>(key)), k1_(static_cast<std::uint32_t>(key >> 32)) {}

    constexpr Counter operator()(Counter ctr) const noexcept {
        std::uint32_t k0 = k0_, k1 = k1_;
        for (int r = 0; r < 10; ++r) {
            const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
            const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
            ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ k0, static_cast<std::uint32_t>(p1),
                   static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ k1, static_cast<std::uint32_t>(p0)};
            k0 += kW0;
            k1 += kW1;
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kM0 = 0xD2511F53u;
    static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kW0 = 0x9E3779B9u;
    static constexpr std::uint32_t kW1 = 0xBB67AE85u;
    std::uint32_t k0_, k1_;
};

/// Uniform double in the open interval (0, 1) from 52 random bits.
constexpr double to_open_unit(std::uint64_t bits) noexcept {
    return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52;
}

/// Standard normal pair for the counter (path, step, block) under `key`.
/// Box-Muller on two 52-bit uniforms.
inline std::array<double, 2> normal_pair(const Philox4x32& gen, std::uint64_t path, std::uint32_t step,
                                         std::uint32_t block) noexcept {
    const auto out = gen({step, block, static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32)});
    const double u1 = to_open_unit((static_cast<std::uint64_t>(out[0]) << 32) | out[1]);
    const double u2 = to_open_unit((static_cast<std::uint64_t>(out[2]) << 32) | out[3]);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    return {r * std::cos(a), r * std::sin(a)};
}

}  // namespace hmg
