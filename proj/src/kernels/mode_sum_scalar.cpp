#include <cmath>

#include "rtd/kernels/mode_sum.hpp"

namespace rtd {

void field_sum_scalar(const ModeView& modes, const double x[4], double f[kFieldComponents]) {
    double acc[kFieldComponents] = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    for (std::size_t m = 0; m < modes.n; ++m) {
        const double phase =
            modes.k0[m] * x[0] - modes.kx[m] * x[1] - modes.ky[m] * x[2] - modes.kz[m] * x[3];
        const double c = std::cos(phase);
        const double s = std::sin(phase);
        for (int j = 0; j < kFieldComponents; ++j)
            acc[j] += modes.bc[j][m] * c + modes.bs[j][m] * s;
    }
    for (int j = 0; j < kFieldComponents; ++j) f[j] = acc[j];
}

} // namespace rtd
