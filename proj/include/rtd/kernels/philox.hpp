#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace rtd {

/// Counter-based random numbers (Philox 4x32-10).
///
/// Every draw is a pure function of (seed, stream, step, slot), so any
/// number of threads can consume the same logical streams in any order
/// and reproduce identical values. `stream` identifies a trajectory or
/// field realization, `step` the time step or mode index, `slot` the
/// draw within that step.
class Philox {
public:
    static constexpr int kRounds = 10;

    static std::array<std::uint32_t, 4> block(std::uint64_t seed, std::uint64_t stream,
                                              std::uint32_t step, std::uint32_t slot) {
        std::uint32_t k0 = static_cast<std::uint32_t>(seed);
        std::uint32_t k1 = static_cast<std::uint32_t>(seed >> 32);
        std::array<std::uint32_t, 4> c = {slot, step, static_cast<std::uint32_t>(stream),
                                          static_cast<std::uint32_t>(stream >> 32)};
        for (int round = 0; round < kRounds; ++round) {
            const std::uint64_t prod0 = static_cast<std::uint64_t>(kMult0) * c[0];
            const std::uint64_t prod1 = static_cast<std::uint64_t>(kMult1) * c[2];
            const std::uint32_t hi0 = static_cast<std::uint32_t>(prod0 >> 32);
            const std::uint32_t lo0 = static_cast<std::uint32_t>(prod0);
            const std::uint32_t hi1 = static_cast<std::uint32_t>(prod1 >> 32);
            const std::uint32_t lo1 = static_cast<std::uint32_t>(prod1);
            c = {hi1 ^ c[1] ^ k0, lo1, hi0 ^ c[3] ^ k1, lo0};
            k0 += kWeyl0;
            k1 += kWeyl1;
        }
        return c;
    }

    /// Two independent uniforms in (0,1), 53-bit resolution, never 0 or 1.
    static std::array<double, 2> uniform2(std::uint64_t seed, std::uint64_t stream,
                                          std::uint32_t step, std::uint32_t slot) {
        const auto b = block(seed, stream, step, slot);
        return {to_unit(b[0], b[1]), to_unit(b[2], b[3])};
    }

    /// Two independent standard normals (Box-Muller on one block).
    static std::array<double, 2> normal2(std::uint64_t seed, std::uint64_t stream,
                                         std::uint32_t step, std::uint32_t slot) {
        const auto u = uniform2(seed, stream, step, slot);
        const double r = std::sqrt(-2.0 * std::log(u[0]));
        const double phi = 2.0 * kPi * u[1];
        return {r * std::cos(phi), r * std::sin(phi)};
    }

private:
    static constexpr std::uint32_t kMult0 = 0xD2511F53u;
    static constexpr std::uint32_t kMult1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
    static constexpr double kPi = 3.14159265358979323846;

    static double to_unit(std::uint32_t hi, std::uint32_t lo) {
        const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32) | lo;
        return static_cast<double>(bits >> 11) * 0x1.0p-53 + 0x1.0p-54;
    }
};

} // namespace rtd
