#pragma once

#include <array>

#include "rtd/minkowski.hpp"
#include "rtd/spectral.hpp"

namespace rtd {

/// Orthogonal projector P^{mu nu} = eta^{mu nu} - p^mu p^nu / p.p for
/// timelike p. Contravariant components.
Tensor2 projector(const FourVector& p);

/// Core tensor of the diffusion kernel, covariant components:
/// C_{sr} = 2 pi eta_{sr} - (eps + pi) ((w.p)^2/p.p eta_{sr} + w_s w_r).
Tensor2 c_tensor(const FourVector& p, const BathParams& bath);

/// Momentum-space diffusion tensor alpha = P C P at a phase point,
/// validated at construction: exact symmetry, degeneracy along p, and
/// positive semidefiniteness of the component matrix.
struct DiffusionTensor {
    Tensor2 alpha; // contravariant components
    FourVector p;
    FourVector w;
    BathParams bath;
};

DiffusionTensor alpha(const FourVector& p, const BathParams& bath);

/// a_mu a_nu alpha^{mu nu}; nonnegative for any real a when the bath
/// ordering eps >= pi >= 0 holds.
double quadratic_form(const FourVector& a, const FourVector& p, const BathParams& bath);

/// Friction drift b^mu = s * P^{mu nu} w_nu. Under the default flux_zero
/// convention s = beta (eps - pi), which makes the stationary flux of
/// exp(-beta w.p) vanish and decelerates the particle in the bath frame;
/// the reversed convention uses s = -lambda.
FourVector friction_drift(const FourVector& p, const BathParams& bath);

struct ItoDrift {
    FourVector total;      // divergence term plus friction
    FourVector divergence; // (d/dp^nu) alpha^{nu mu}
    FourVector friction;
    double fd_error = 0.0;     // Richardson error estimate (absolute, max over components)
    bool step_warning = false; // set when fd_error exceeds 1e-6 of the drift magnitude
};

/// Drift of the Ito form of the generator: the divergence of alpha,
/// computed by central differences with Richardson extrapolation, plus
/// the friction drift. h <= 0 selects the default step 1e-4 max(1, |p|).
ItoDrift ito_drift(const FourVector& p, const BathParams& bath, double h = 0.0);

/// Factor sigma with sigma sigma^T = 2 alpha, from the eigensystem of
/// the component matrix. Channels whose eigenvalue falls below the clamp
/// threshold are dropped; every surviving column is orthogonal to p.
struct NoiseFactor {
    std::array<FourVector, 3> columns{}; // only the first `rank` are meaningful
    int rank = 0;
    int clamped = 0;              // eigenvalues zeroed by the clamp
    double min_eigenvalue = 0.0;  // smallest eigenvalue of 2 alpha before clamping
};

NoiseFactor noise_factor(const DiffusionTensor& d);

} // namespace rtd
