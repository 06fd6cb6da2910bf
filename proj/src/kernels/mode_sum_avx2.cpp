// AVX2+FMA variant of the mode summation kernel. This translation unit is
// compiled with -mavx2 -mfma; callers must go through the runtime dispatch
// in dispatch.cpp, which checks CPU support first.

#include "rtd/kernels/mode_sum.hpp"

#if defined(__x86_64__) || defined(__i386__)

#include <immintrin.h>

#include <cmath>

namespace rtd {

namespace {

// Argument reduction constants: pi/2 split into three parts so that
// phi - j*pi/2 is exact to double precision for |phi| up to ~1e6
// (far beyond the phases produced by desk-scale trajectories).
const __m256d kTwoOverPi = _mm256_set1_pd(0x1.45f306dc9c883p-1);
const __m256d kPio2Hi = _mm256_set1_pd(1.57079632673412561417e+00);
const __m256d kPio2Mid = _mm256_set1_pd(6.07710050650619224932e-11);
const __m256d kPio2Lo = _mm256_set1_pd(2.02226624879595063154e-21);

// Minimax polynomials on [-pi/4, pi/4] (classic double-precision
// coefficients, ~1 ulp).
const __m256d kSinC0 = _mm256_set1_pd(1.58962301576546568060e-10);
const __m256d kSinC1 = _mm256_set1_pd(-2.50507477628578072866e-8);
const __m256d kSinC2 = _mm256_set1_pd(2.75573136213857245213e-6);
const __m256d kSinC3 = _mm256_set1_pd(-1.98412698295895385996e-4);
const __m256d kSinC4 = _mm256_set1_pd(8.33333333332211858878e-3);
const __m256d kSinC5 = _mm256_set1_pd(-1.66666666666666307295e-1);

const __m256d kCosC0 = _mm256_set1_pd(-1.13585365213876817300e-11);
const __m256d kCosC1 = _mm256_set1_pd(2.08757008419747316778e-9);
const __m256d kCosC2 = _mm256_set1_pd(-2.75573141792967388112e-7);
const __m256d kCosC3 = _mm256_set1_pd(2.48015872888517179954e-5);
const __m256d kCosC4 = _mm256_set1_pd(-1.38888888888730564116e-3);
const __m256d kCosC5 = _mm256_set1_pd(4.16666666666665929218e-2);

const __m256d kOne = _mm256_set1_pd(1.0);
const __m256d kHalf = _mm256_set1_pd(0.5);
const __m256d kSignMask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x8000000000000000ll));

// Four sines and cosines per call. Quadrant bookkeeping follows the
// usual reduce-by-pi/2 scheme with exact mask-based selection.
inline void sincos4(__m256d phi, __m256d& sin_out, __m256d& cos_out) {
    const __m256d jd = _mm256_round_pd(_mm256_mul_pd(phi, kTwoOverPi),
                                       _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    __m256d r = _mm256_fnmadd_pd(jd, kPio2Hi, phi);
    r = _mm256_fnmadd_pd(jd, kPio2Mid, r);
    r = _mm256_fnmadd_pd(jd, kPio2Lo, r);

    const __m128i j32 = _mm256_cvtpd_epi32(jd);
    const __m128i bit0 = _mm_and_si128(j32, _mm_set1_epi32(1));
    const __m128i bit1 = _mm_and_si128(j32, _mm_set1_epi32(2));
    const __m128i one32 = _mm_set1_epi32(1);
    const __m128i two32 = _mm_set1_epi32(2);
    const __m256d swap_mask =
        _mm256_castsi256_pd(_mm256_cvtepi32_epi64(_mm_cmpeq_epi32(bit0, one32)));
    const __m256d flip_mask =
        _mm256_castsi256_pd(_mm256_cvtepi32_epi64(_mm_cmpeq_epi32(bit1, two32)));

    const __m256d z = _mm256_mul_pd(r, r);

    __m256d ps = kSinC0;
    ps = _mm256_fmadd_pd(ps, z, kSinC1);
    ps = _mm256_fmadd_pd(ps, z, kSinC2);
    ps = _mm256_fmadd_pd(ps, z, kSinC3);
    ps = _mm256_fmadd_pd(ps, z, kSinC4);
    ps = _mm256_fmadd_pd(ps, z, kSinC5);
    const __m256d sin_r = _mm256_fmadd_pd(_mm256_mul_pd(ps, z), r, r);

    __m256d pc = kCosC0;
    pc = _mm256_fmadd_pd(pc, z, kCosC1);
    pc = _mm256_fmadd_pd(pc, z, kCosC2);
    pc = _mm256_fmadd_pd(pc, z, kCosC3);
    pc = _mm256_fmadd_pd(pc, z, kCosC4);
    pc = _mm256_fmadd_pd(pc, z, kCosC5);
    const __m256d cos_r =
        _mm256_fmadd_pd(_mm256_mul_pd(pc, z), z, _mm256_fnmadd_pd(z, kHalf, kOne));

    // Quadrant q = j mod 4: sin -> (sin, cos, -sin, -cos), cos -> (cos, -sin, -cos, sin).
    __m256d s = _mm256_blendv_pd(sin_r, cos_r, swap_mask);
    __m256d c = _mm256_blendv_pd(cos_r, sin_r, swap_mask);
    s = _mm256_xor_pd(s, _mm256_and_pd(flip_mask, kSignMask));
    const __m256d cos_neg = _mm256_xor_pd(swap_mask, flip_mask);
    c = _mm256_xor_pd(c, _mm256_and_pd(cos_neg, kSignMask));
    sin_out = s;
    cos_out = c;
}

inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d sum2 = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(sum2, _mm_unpackhi_pd(sum2, sum2)));
}

} // namespace

void field_sum_avx2(const ModeView& modes, const double x[4], double f[kFieldComponents]) {
    const __m256d x0 = _mm256_set1_pd(x[0]);
    const __m256d x1 = _mm256_set1_pd(x[1]);
    const __m256d x2 = _mm256_set1_pd(x[2]);
    const __m256d x3 = _mm256_set1_pd(x[3]);

    __m256d acc[kFieldComponents];
    for (int j = 0; j < kFieldComponents; ++j) acc[j] = _mm256_setzero_pd();

    const std::size_t n4 = modes.n & ~std::size_t(3);
    for (std::size_t m = 0; m < n4; m += 4) {
        __m256d phi = _mm256_mul_pd(_mm256_loadu_pd(modes.k0 + m), x0);
        phi = _mm256_fnmadd_pd(_mm256_loadu_pd(modes.kx + m), x1, phi);
        phi = _mm256_fnmadd_pd(_mm256_loadu_pd(modes.ky + m), x2, phi);
        phi = _mm256_fnmadd_pd(_mm256_loadu_pd(modes.kz + m), x3, phi);

        __m256d s, c;
        sincos4(phi, s, c);

        for (int j = 0; j < kFieldComponents; ++j) {
            acc[j] = _mm256_fmadd_pd(_mm256_loadu_pd(modes.bc[j] + m), c, acc[j]);
            acc[j] = _mm256_fmadd_pd(_mm256_loadu_pd(modes.bs[j] + m), s, acc[j]);
        }
    }

    double tail[kFieldComponents] = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    for (std::size_t m = n4; m < modes.n; ++m) {
        const double phase =
            modes.k0[m] * x[0] - modes.kx[m] * x[1] - modes.ky[m] * x[2] - modes.kz[m] * x[3];
        const double cp = std::cos(phase);
        const double sp = std::sin(phase);
        for (int j = 0; j < kFieldComponents; ++j)
            tail[j] += modes.bc[j][m] * cp + modes.bs[j][m] * sp;
    }

    for (int j = 0; j < kFieldComponents; ++j) f[j] = hsum(acc[j]) + tail[j];
}

} // namespace rtd

#else // non-x86: dispatch never selects this symbol, keep a stub for the linker

namespace rtd {
void field_sum_avx2(const ModeView& modes, const double x[4], double f[kFieldComponents]) {
    field_sum_scalar(modes, x, f);
}
} // namespace rtd

#endif
