#pragma once

#include "rtd/diffusion.hpp"
#include "rtd/minkowski.hpp"
#include "rtd/spectral.hpp"

namespace rtd {

/// Parameters of the stationary family exp(-beta w.p - gamma p.p).
/// On a fixed mass shell gamma only rescales the normalization, so it
/// defaults to zero; it is kept as a knob for off-shell studies.
struct JuttnerParams {
    double beta = 1.0;
    double gamma = 0.0;
    FourVector w{1.0, 0.0, 0.0, 0.0};
    double norm = 1.0;

    /// Adopts the frame and temperature of a bath.
    static JuttnerParams from_bath(const BathParams& bath, double gamma = 0.0);

    void validate() const;
};

/// norm * exp(-beta w.p - gamma p.p); defined off shell as well.
double juttner_density(const FourVector& p, const JuttnerParams& params);

/// Stationary flux alpha^{mu nu} d_nu Omega - b^mu Omega of the
/// dynamics the bath configures, with the density gradient taken
/// analytically. Identically zero under the flux_zero friction
/// convention; under the reversed convention no friction magnitude
/// makes it vanish, which is what settles the sign question.
FourVector flux_residual(const FourVector& p, const BathParams& bath,
                         const JuttnerParams& params);

/// Same residual with an explicit friction coefficient in place of the
/// bath convention: alpha^{mu nu} d_nu Omega - lambda (P w)^mu Omega,
/// where P w is the shell-tangent projection of the frame vector.
/// Vanishes exactly at lambda = beta (epsilon - pi_eps) and is linear
/// in lambda off that value.
FourVector flux_residual(const FourVector& p, const BathParams& bath,
                         const JuttnerParams& params, double lambda);

/// Drift alpha^{mu nu} d_nu ln Omega, the unique friction for which
/// the generator is reversible with respect to the density. Detailed
/// balance holds when this coincides with the friction actually
/// applied, which it does under the flux_zero convention.
FourVector reversible_drift(const FourVector& p, const BathParams& bath,
                            const JuttnerParams& params);

/// Normalized radial moment <|p|^order> of the rest-frame stationary
/// family, weight r^2 exp(-beta (E - mass)) / E^energy_power per unit
/// r. Power 1 is the measure the transport march relaxes to, power 0
/// the plain exponential alternative.
double juttner_moment(double mass, double beta, int order, int energy_power = 1);

} // namespace rtd
