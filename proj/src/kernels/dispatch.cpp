#include <atomic>

#include "rtd/kernels/mode_sum.hpp"

namespace rtd {

namespace {

std::atomic<bool> g_force_scalar{false};

bool detect_avx2() {
#if (defined(__x86_64__) || defined(__i386__)) && defined(__GNUC__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const bool g_have_avx2 = detect_avx2();

} // namespace

bool avx2_kernel_available() { return g_have_avx2; }

const char* active_kernel() {
    return (g_have_avx2 && !g_force_scalar.load(std::memory_order_relaxed)) ? "avx2" : "scalar";
}

void force_scalar_kernel(bool force) {
    g_force_scalar.store(force, std::memory_order_relaxed);
}

void field_sum(const ModeView& modes, const double x[4], double f[kFieldComponents]) {
    if (g_have_avx2 && !g_force_scalar.load(std::memory_order_relaxed))
        field_sum_avx2(modes, x, f);
    else
        field_sum_scalar(modes, x, f);
}

} // namespace rtd
