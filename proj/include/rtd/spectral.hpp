#pragma once

#include <utility>
#include <vector>

#include "rtd/minkowski.hpp"

namespace rtd {

/// Scalar quadrature outcome. `converged` is false when the error
/// estimate exceeded the requested tolerance; the value is still usable.
struct QuadResult {
    double value = 0.0;
    double error = 0.0;
    bool converged = true;
};

/// Discrete covariant piece of a spectral density: the set of wave
/// vectors with k.k = s and k.w_axis = sigma, carrying total weight.
/// In the axis rest frame this is an isotropic sphere of radius
/// sqrt(sigma^2 - s), so every scalar moment of an atom is closed-form;
/// the property tests lean on that.
struct ShellAtom {
    double s = 0.0;      // invariant mass squared of the modes, >= 0
    double sigma = 0.0;  // frequency in the axis frame, sigma >= sqrt(s)
    double weight = 0.0; // integrated density carried by the shell
};

/// Nonnegative spectral density of the field ensemble.
///
/// Supported content: a lightlike (on-shell) continuum described by a
/// radial density g(|k|) per d^3k in its rest frame, plus any number of
/// shell atoms with s >= 0. Both pieces live on the closed forward cone,
/// which is what positivity of the ensemble requires. The density is
/// isotropic in the frame of its `axis` four-velocity; boosting the
/// density just boosts the axis.
class SpectralDensity {
public:
    enum class Continuum { none, planck, table };

    /// Photon-gas density at inverse temperature beta:
    /// g(|k|) = normalization / (|k| (exp(beta |k|) - 1)).
    static SpectralDensity planck(double beta, double normalization = 1.0);

    /// Single lightlike shell of frequency k0 and total weight.
    static SpectralDensity monochromatic(double k0, double weight = 1.0);

    /// Piecewise-linear radial density from (|k|, g) samples with
    /// ascending |k| >= 0 and g >= 0.
    static SpectralDensity custom_table(std::vector<std::pair<double, double>> samples);

    /// Purely discrete density from forward-cone shells.
    static SpectralDensity shell_atoms(std::vector<ShellAtom> atoms);

    /// Same density carried by a boosted bath: axis -> Lambda(axis).
    SpectralDensity boosted(const Boost& lambda) const;

    Continuum continuum_kind() const { return kind_; }
    const FourVector& axis() const { return axis_; }
    const std::vector<ShellAtom>& atoms() const { return atoms_; }

    /// Radial density g(|k|) of the continuum in the axis rest frame.
    double radial_density(double kmag) const;

    /// Radial integration window [0, cutoff] for the continuum; the
    /// cutoff is where the damping factor has fallen below 1e-16 of the
    /// peak of the radial integrand (tables end at their last node).
    double radial_cutoff() const;

    /// Interior breakpoints the radial quadrature must not straddle
    /// (table nodes); empty for smooth profiles.
    std::vector<double> radial_breakpoints() const;

    bool has_continuum() const { return kind_ != Continuum::none; }

private:
    SpectralDensity() = default;

    Continuum kind_ = Continuum::none;
    double beta_ = 0.0;
    double norm_ = 0.0;
    std::vector<double> tab_k_, tab_g_;
    std::vector<ShellAtom> atoms_;
    FourVector axis_{1.0, 0.0, 0.0, 0.0};
};

/// epsilon = integral of G(k) (k.w)^2 over the support.
QuadResult energy_density(const SpectralDensity& g, const FourVector& w);

/// pi = (1/3) integral of G(k) ((k.w)^2 - k.k).
QuadResult pressure(const SpectralDensity& g, const FourVector& w);

/// Total integrated density (the mass of G as a measure).
QuadResult total_weight(const SpectralDensity& g);

/// Correlation-time scale implied by the spectral width,
/// sqrt(total_weight / epsilon) evaluated in the axis frame.
double correlation_time_estimate(const SpectralDensity& g);

struct BoseCurrent {
    FourVector current;   // J^mu
    double r = 0.0;       // fitted magnitude in J = -(3r/2) w
    double residual = 0.0; // relative fit residual over the four components
    QuadResult quad;       // accuracy of the underlying quadrature
};

/// Equilibrium boson current J_mu = -N * integral d^3k k0^{-1} k_mu
/// (exp(beta k.w) - 1)^{-1}, computed with polar axis along w. The
/// normalization constant N defaults to 1 and simply scales the result.
/// Throws InvariantViolation if J is not parallel to w within 1e-6.
BoseCurrent bose_current(double beta, const FourVector& w, double normalization = 1.0);

/// Sign convention for the friction drift. flux_zero makes the
/// stationary flux of the equilibrium density vanish (and decelerates in
/// the bath frame); reversed is the opposite sign, kept selectable for
/// comparison runs and expected to fail the equilibrium checks.
enum class FrictionSign { flux_zero, reversed };

struct BathParams {
    double beta = 1.0;     // inverse temperature
    double epsilon = 0.0;  // energy density of the field ensemble
    double pi_eps = 0.0;   // pressure-like scalar
    double lambda = 0.0;   // friction magnitude, >= 0
    double tau_c = 1.0;    // correlation time, > 0
    FourVector w{1.0, 0.0, 0.0, 0.0};
    FrictionSign friction_sign = FrictionSign::flux_zero;

    /// Direct construction for synthetic baths; enforces the weak
    /// ordering epsilon >= pi_eps >= 0 (epsilon = pi_eps is allowed here
    /// but not for spectrally derived baths).
    static BathParams synthetic(double beta, double epsilon, double pi_eps, double lambda,
                                double tau_c, const FourVector& w);

    void validate(bool spectral_origin) const;
};

/// Bath parameters from quadrature: epsilon, pi from G at w, and
/// lambda = beta (epsilon - pi). Enforces the strict spectral ordering
/// epsilon >= 3 pi >= 0.
BathParams bath_from_spectral(const SpectralDensity& g, double beta, const FourVector& w,
                              double tau_c);

} // namespace rtd
