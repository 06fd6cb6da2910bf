#pragma once

#include <cstdint>
#include <vector>

#include "rtd/kernels/mode_sum.hpp"
#include "rtd/minkowski.hpp"
#include "rtd/spectral.hpp"

namespace rtd {

/// One sampled plane-wave mode of the Gaussian field ensemble: a wave
/// vector on the support of the density, its polarization basis, and
/// the complex Gaussian amplitudes attached to each polarization.
struct FieldMode {
    FourVector k;                 // contravariant, k.k >= 0, k0 > 0
    std::array<FourVector, 3> e;  // polarization vectors, first `npol` valid
    int npol = 0;                 // 2 for lightlike modes, 3 for timelike shells
    std::array<double, 3> c_re{}, c_im{};
    double weight = 0.0;          // importance weight Z/N
};

/// A concrete draw of the random field: the mode set plus the
/// kernel-ready coefficient arrays for fast evaluation. The field
/// strength derives from a vector potential, so the cyclic derivative
/// identities hold exactly, mode by mode.
class FieldRealization {
public:
    const std::vector<FieldMode>& modes() const { return modes_; }
    std::uint64_t seed() const { return seed_; }
    std::uint64_t index() const { return index_; }

    ModeView view() const { return pack_.view(); }

    /// L1 magnitude of the field coefficients; tolerance scale for
    /// antisymmetry and periodicity checks.
    double coefficient_scale() const { return coeff_scale_; }

    /// L1 magnitude of the analytic first derivatives; tolerance scale
    /// for the cyclic-identity residual.
    double derivative_scale() const { return deriv_scale_; }

    /// Diagnostic hook: add (d_cos, d_sin) to one packed coefficient so
    /// closure-sensitivity tests can break the wedge structure of a mode
    /// without touching its phase. Not used by any production path.
    void perturb_coefficient(std::size_t mode, int component, double d_cos, double d_sin);

private:
    friend class ModeSampler;
    std::vector<FieldMode> modes_;
    ModePack pack_;
    std::uint64_t seed_ = 0, index_ = 0;
    double coeff_scale_ = 0.0, deriv_scale_ = 0.0;
};

/// Reusable sampling state for a density: component decomposition,
/// the radial inverse-CDF table, and the axis boost. Building this is
/// the expensive part; drawing a realization is cheap, so ensemble
/// loops construct one sampler and call sample() per realization.
class ModeSampler {
public:
    ModeSampler(const SpectralDensity& g, int n_modes);

    /// The stream is keyed by (seed, realization, mode), so any subset
    /// of realizations can be regenerated independently, in any order.
    FieldRealization sample(std::uint64_t seed, std::uint64_t realization) const;

    double total_mass() const { return z_total_; }
    int n_modes() const { return n_; }

private:
    SpectralDensity g_;
    int n_ = 0;
    double z_cont_ = 0.0, z_total_ = 0.0;
    std::vector<double> atom_cum_;        // cumulative atom masses after the continuum
    std::vector<double> cdf_k_, cdf_c_;   // radial grid and cumulative mass
    std::vector<double> pdf_v_;           // kappa^2 g at the grid nodes
    Boost lab_from_axis_;
    bool boosted_ = false;
};

/// Draws n_modes wave vectors from the normalized density (weight Z/N
/// each) with fresh Gaussian amplitudes. One-shot convenience wrapper
/// around ModeSampler.
FieldRealization sample_modes(const SpectralDensity& g, int n_modes, std::uint64_t seed,
                              std::uint64_t realization = 0);

/// F_{mu nu}(x), antisymmetric, lowered indices.
Tensor2 field_strength(const FieldRealization& f, const FourVector& x);

/// Max over index triples of the cyclic derivative sum
/// |d_s F_{mn} + d_n F_{sm} + d_m F_{ns}| with exact mode-wise
/// derivatives; compare against 1e-12 * derivative_scale().
double bianchi_residual(const FieldRealization& f, const FourVector& x);

struct Trajectory {
    std::vector<FourVector> x, p;      // one entry per recorded step, including start
    double mass2_rel_drift = 0.0;      // max |p.p - p0.p0| / p0.p0 over the run
    double per_step_rel_drift = 0.0;   // max per-step |delta p.p| / p0.p0
    bool refine = false;               // advice: per-step drift above 1e-6 relative
};

/// Fourth-order integration of dx/dtau = p/sqrt(p.p),
/// dp/dtau = F(x) p / sqrt(p.p) through a frozen field realization.
Trajectory liouville_trajectory(const FieldRealization& f, const FourVector& x0,
                                const FourVector& p0, double tau_max, int steps);

struct KuboEstimate {
    Tensor2 value;      // <dp dp>/tau^2 across the ensemble (contravariant)
    Tensor2 std_error;  // per-component MC standard error
    double tau = 0.0;
    double tau_corr = 0.0;  // trajectory-frame correlation-time estimate
    int realizations = 0;
    int n_modes = 0;
};

/// Short-time momentum-increment statistic at fixed starting point.
/// Refuses tau > tau_corr/10 unless allow_large_tau; that guard keeps
/// the quadratic-growth window honest.
KuboEstimate kubo_alpha_estimate(const SpectralDensity& g, const FourVector& p,
                                 const FourVector& w, double tau, int ensembles,
                                 std::uint64_t seed, bool allow_large_tau = false,
                                 int n_modes = 64, int rk_steps = 8, int threads = 1);

struct KuboTimeIntegrated {
    Tensor2 value;      // integral over s of the force-force correlation
    Tensor2 std_error;
    double s_max = 0.0;
    double tau_c = 0.0;         // least-squares ratio against the analytic tensor
    double tail_fraction = 0.0; // share of |integral| from the last 10% of the window
    bool tail_warning = false;  // tail_fraction > 5%
    int realizations = 0;
};

/// Time-integrated force-force correlation along the frozen straight
/// worldline through p; equals tau_c * alpha for the reported tau_c.
KuboTimeIntegrated kubo_alpha_time_integrated(const SpectralDensity& g, const FourVector& p,
                                              const FourVector& w, double s_max,
                                              int ensembles, std::uint64_t seed,
                                              int n_modes = 64, int s_points = 128,
                                              int threads = 1);

/// Coincident-point covariance of the six field components over
/// single-mode realizations, with a least-squares fit of the four
/// tensor structures the two-point function can carry. The wedge
/// construction should leave only the metric-pair structure (a1);
/// the fit reports each coefficient with its standard error.
struct CovarianceEstimate {
    double cov[kFieldComponents][kFieldComponents]{};
    double err[kFieldComponents][kFieldComponents]{};
    long samples = 0;
    double a1 = 0.0, a0 = 0.0, a2 = 0.0, a3 = 0.0;
    double se_a1 = 0.0, se_a0 = 0.0, se_a2 = 0.0, se_a3 = 0.0;
};

CovarianceEstimate covariance_estimate(const SpectralDensity& g, int realizations,
                                       std::uint64_t seed);

/// Coincident-point covariance target built from the spectral scalars:
/// Cov_{mn;sr}(0) = -eta_{ms} T_{nr} + eta_{mr} T_{ns} - eta_{nr} T_{sm}
/// + eta_{ns} T_{mr} with T_{mn} = eps w_m w_n - pi (eta_{mn} - w_m w_n).
double covariance_target(const SpectralDensity& g, int mu, int nu, int sigma, int rho);

} // namespace rtd
