#include "rtd/equilibrium.hpp"

#include <cmath>

#include "rtd/errors.hpp"

namespace rtd {

namespace {

void require_matching(const FourVector& p, const BathParams& bath, const JuttnerParams& params) {
    bath.validate(false);
    params.validate();
    if (std::abs(params.beta - bath.beta) > 1e-12 * bath.beta)
        throw ConfigError("equilibrium parameters carry a different temperature than the bath");
    const double scale = std::max(params.w.max_abs(), bath.w.max_abs());
    for (int mu = 0; mu < 4; ++mu)
        if (std::abs(params.w[mu] - bath.w[mu]) > 1e-12 * scale)
            throw FrameError("equilibrium parameters carry a different frame than the bath");
    if (!is_timelike(p)) throw FrameError("shell identities need a timelike momentum");
}

/// Covariant tuple d_nu ln Omega = -beta w_nu - 2 gamma p_nu.
FourVector log_gradient(const FourVector& p, const JuttnerParams& params) {
    return lower(-params.beta * params.w - 2.0 * params.gamma * p);
}

/// Composite Simpson of r^(order + 2) exp(-beta (E - mass)) / E^power
/// on a span sized so the neglected tail stays below 1e-13 of the
/// total even after the r^order weighting; panels double until the
/// value settles.
double shell_integral(double mass, double beta, int order, int power) {
    const double e_max = mass + (42.0 + 4.0 * order) / beta;
    const double r_max = std::sqrt(e_max * e_max - mass * mass);
    const auto f = [=](double r) {
        const double e = std::sqrt(mass * mass + r * r);
        const double w = std::pow(r, order + 2) * std::exp(-beta * (e - mass));
        return power == 1 ? w / e : w;
    };
    double prev = 0.0;
    for (int n = 256; n <= (1 << 21); n *= 2) {
        const double h = r_max / n;
        double s = f(0.0) + f(r_max);
        for (int i = 1; i < n; ++i) s += f(i * h) * (i % 2 ? 4.0 : 2.0);
        s *= h / 3.0;
        if (n > 256 && std::isfinite(s) && std::abs(s - prev) <= 5e-13 * std::abs(s)) return s;
        prev = s;
    }
    throw ConvergenceError("moment quadrature did not settle to 5e-13 relative");
}

} // namespace

JuttnerParams JuttnerParams::from_bath(const BathParams& bath, double gamma) {
    bath.validate(false);
    if (!std::isfinite(gamma)) throw ConfigError("mass-shell weight gamma must be finite");
    JuttnerParams j;
    j.beta = bath.beta;
    j.gamma = gamma;
    j.w = bath.w;
    return j;
}

void JuttnerParams::validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta))
        throw InvariantViolation("equilibrium family needs a positive beta");
    if (!std::isfinite(gamma))
        throw InvariantViolation("equilibrium family needs a finite gamma");
    if (!(norm > 0.0) || !std::isfinite(norm))
        throw InvariantViolation("equilibrium family needs a positive normalization");
    const double defect = std::abs(dot(w, w) - 1.0);
    if (!(defect <= 1e-9) || !(w[0] > 0.0))
        throw InvariantViolation("equilibrium frame vector must be future unit timelike");
}

double juttner_density(const FourVector& p, const JuttnerParams& params) {
    params.validate();
    return params.norm * std::exp(-params.beta * dot(params.w, p) - params.gamma * dot(p, p));
}

FourVector flux_residual(const FourVector& p, const BathParams& bath,
                         const JuttnerParams& params) {
    require_matching(p, bath, params);
    const double omega = juttner_density(p, params);
    const FourVector diffusive = alpha(p, bath).alpha.apply_covector(log_gradient(p, params));
    return (diffusive - friction_drift(p, bath)) * omega;
}

FourVector flux_residual(const FourVector& p, const BathParams& bath, const JuttnerParams& params,
                         double lambda) {
    require_matching(p, bath, params);
    if (!std::isfinite(lambda)) throw ConfigError("friction coefficient must be finite");
    const double omega = juttner_density(p, params);
    const FourVector diffusive = alpha(p, bath).alpha.apply_covector(log_gradient(p, params));
    const FourVector tangent_w = projector(p).apply_covector(lower(bath.w));
    return (diffusive - lambda * tangent_w) * omega;
}

FourVector reversible_drift(const FourVector& p, const BathParams& bath,
                            const JuttnerParams& params) {
    require_matching(p, bath, params);
    return alpha(p, bath).alpha.apply_covector(log_gradient(p, params));
}

double juttner_moment(double mass, double beta, int order, int energy_power) {
    if (!(mass > 0.0)) throw ConfigError("moment needs a positive mass");
    if (!(beta > 0.0)) throw ConfigError("moment needs a positive beta");
    if (order < 0) throw ConfigError("moment order must be nonnegative");
    if (order > 64) throw ConfigError("moment orders above 64 are not supported");
    if (energy_power != 0 && energy_power != 1)
        throw ConfigError("energy power picks one of the two stationary measures, 0 or 1");
    if (order == 0) return 1.0;
    const double den = shell_integral(mass, beta, 0, energy_power);
    if (!(den > 0.0) || !std::isfinite(den))
        throw ConvergenceError("stationary weight underflowed on the quadrature span");
    return shell_integral(mass, beta, order, energy_power) / den;
}

} // namespace rtd
