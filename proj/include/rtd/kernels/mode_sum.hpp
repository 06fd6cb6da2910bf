#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace rtd {

/// Plane-wave mode summation kernels.
///
/// A sampled field strength is evaluated as
///   F_c(x) = sum_m bc[c][m] * cos(phi_m) + bs[c][m] * sin(phi_m),
///   phi_m  = k0[m] x^0 - kx[m] x^1 - ky[m] x^2 - kz[m] x^3,
/// where c runs over the six independent components of an antisymmetric
/// rank-2 tensor in the fixed order 01, 02, 03, 12, 13, 23 (lowered
/// indices). This loop dominates the Monte Carlo estimators, so it has a
/// scalar reference implementation and an AVX2+FMA variant selected at
/// runtime; the two are equivalence-tested against each other.

inline constexpr int kFieldComponents = 6;

/// Index pairs behind the packed component order.
inline constexpr int kComponentRow[kFieldComponents] = {0, 0, 0, 1, 1, 2};
inline constexpr int kComponentCol[kFieldComponents] = {1, 2, 3, 2, 3, 3};

/// Borrowed pointers into a ModePack (structure-of-arrays layout).
struct ModeView {
    const double* k0 = nullptr;
    const double* kx = nullptr;
    const double* ky = nullptr;
    const double* kz = nullptr;
    std::array<const double*, kFieldComponents> bc{};
    std::array<const double*, kFieldComponents> bs{};
    std::size_t n = 0;
};

/// Owning structure-of-arrays storage for a set of modes.
struct ModePack {
    std::vector<double> k0, kx, ky, kz;
    std::array<std::vector<double>, kFieldComponents> bc;
    std::array<std::vector<double>, kFieldComponents> bs;

    std::size_t size() const { return k0.size(); }

    void reserve(std::size_t n) {
        k0.reserve(n);
        kx.reserve(n);
        ky.reserve(n);
        kz.reserve(n);
        for (auto& v : bc) v.reserve(n);
        for (auto& v : bs) v.reserve(n);
    }

    void push_mode(const double k[4], const double cos_coeff[kFieldComponents],
                   const double sin_coeff[kFieldComponents]) {
        k0.push_back(k[0]);
        kx.push_back(k[1]);
        ky.push_back(k[2]);
        kz.push_back(k[3]);
        for (int c = 0; c < kFieldComponents; ++c) {
            bc[c].push_back(cos_coeff[c]);
            bs[c].push_back(sin_coeff[c]);
        }
    }

    ModeView view() const {
        ModeView v;
        v.k0 = k0.data();
        v.kx = kx.data();
        v.ky = ky.data();
        v.kz = kz.data();
        for (int c = 0; c < kFieldComponents; ++c) {
            v.bc[c] = bc[c].data();
            v.bs[c] = bs[c].data();
        }
        v.n = size();
        return v;
    }
};

/// Accumulates the six field components at position x into f (overwritten).
/// Dispatches to the best kernel for the running CPU.
void field_sum(const ModeView& modes, const double x[4], double f[kFieldComponents]);

/// Scalar reference kernel (libm sin/cos, plain loop).
void field_sum_scalar(const ModeView& modes, const double x[4], double f[kFieldComponents]);

/// AVX2+FMA kernel; only safe to call when the CPU supports both.
/// Compiled on x86-64 only.
void field_sum_avx2(const ModeView& modes, const double x[4], double f[kFieldComponents]);

/// True when field_sum_avx2 exists and the CPU can run it.
bool avx2_kernel_available();

/// Name of the kernel field_sum currently dispatches to ("avx2"/"scalar").
const char* active_kernel();

/// Force the scalar path (true) or restore automatic dispatch (false).
/// Intended for tests and benchmarks.
void force_scalar_kernel(bool force);

} // namespace rtd
