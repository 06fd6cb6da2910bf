#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rtd/diffusion.hpp"
#include "rtd/minkowski.hpp"
#include "rtd/spectral.hpp"

namespace rtd {

/// Phase-space state of one particle. The mass is cached at
/// construction and the stepper's shell projection keeps the momentum
/// consistent with it; with projection off the cache tracks the
/// drifting p.p instead.
struct PhasePoint {
    FourVector x{};
    FourVector p{1.0, 0.0, 0.0, 0.0};
    double mass = 1.0;

    /// Caches mass = sqrt(p.p). Throws InvariantViolation unless
    /// p.p > 0.
    static PhasePoint make(const FourVector& x, const FourVector& p);

    /// Re-checks p.p > 0 and that the cached mass matches within 1e-12
    /// relative; throws InvariantViolation otherwise.
    void validate() const;
};

/// End-of-step treatment of the mass shell. resolve_p0 recomputes the
/// energy from the cached mass (keeping the sign of the pre-step p0),
/// rescale_spatial keeps the updated energy and rescales the spatial
/// momentum, off leaves the discretization drift in place.
enum class Projection { resolve_p0, rescale_spatial, off };

/// Which four-vector advances the position per unit parameter: the
/// four-velocity p/sqrt(p.p) (default) or the momentum itself.
enum class Advection { velocity, momentum };

struct SimConfig {
    double dstep = 1e-3;             // parameter increment per update
    std::int64_t steps = 1000;
    std::int64_t ensemble = 1;
    std::uint64_t seed = 0;
    Projection projection = Projection::resolve_p0;
    Advection advection = Advection::velocity;
    std::int64_t output_every = 100; // moment-record cadence in steps
    int threads = 1;
    int radial_bins = 64;
    int cartesian_bins = 16;         // per axis
    double histogram_pmax = 0.0;     // 0 selects an automatic range

    void validate() const; // ConfigError on out-of-range fields
};

/// Drift of the Ito form of the momentum generator, in closed form:
/// divergence of the diffusion tensor plus the friction drift, without
/// the correlation-time factor (the stepper multiplies tau_c itself).
/// Agrees with the finite-difference ito_drift to its Richardson error
/// estimate; tested against it, and cheap enough for inner loops.
FourVector drift_closed_form(const FourVector& p, const BathParams& bath);

/// Noise channels sigma with sigma sigma^T = 2 alpha, in closed form:
/// one channel along the projected bath velocity carrying eps - pi and
/// two transverse channels carrying (eps+pi)(w.p)^2/p.p - 2 pi. Every
/// column is Minkowski-orthogonal to p, which is what keeps the exact
/// update tangent to the mass shell. Vanishing channels are dropped;
/// `rank` counts the survivors (stored front-to-back).
struct NoiseChannels {
    std::array<FourVector, 3> columns{};
    int rank = 0;
};

NoiseChannels noise_channels(const FourVector& p, const BathParams& bath);

/// One Euler-Maruyama update from `state`, all right-hand sides
/// evaluated at the pre-step state:
///   p <- p + tau_c (drift) ds + sqrt(tau_c ds) sigma xi
///   x <- x + (p/sqrt(p.p)) ds    (or p ds under momentum advection)
/// followed by the configured shell projection. Throws ConfigError for
/// ds <= 0 and InvariantViolation when the kicked momentum cannot be
/// brought back to the shell (p.p <= 0 before projection, or a
/// rescale_spatial target that does not exist); run_ensemble reacts to
/// that by retrying in halves with fresh noise.
PhasePoint em_step(const PhasePoint& state, const BathParams& bath, double ds,
                   const std::array<double, 3>& noise,
                   Projection projection = Projection::resolve_p0,
                   Advection advection = Advection::velocity);

/// Uniform-bin histogram of |p| in the bath rest frame, bins on
/// [0, p_max] with width p_max / counts.size().
struct RadialHistogram {
    double p_max = 0.0;
    std::vector<double> counts;
    double overflow = 0.0;

    double total() const; // in-range count
};

/// Cartesian histogram of the bath-frame spatial momentum on
/// [-p_max, p_max]^3, `bins` cells per axis, x index fastest.
struct CartesianHistogram {
    double p_max = 0.0;
    int bins = 0;
    std::vector<double> counts;
    double overflow = 0.0;
};

/// Ensemble statistics at one recorded parameter value. Momentum
/// statistics are taken in the bath rest frame; mean_x0 is the
/// laboratory time elapsed along the trajectories. Standard errors are
/// over trajectories. Shell drift is (p.p - mass0^2)/mass0^2 against
/// the trajectory's initial mass.
struct MomentRecord {
    double s = 0.0;
    std::int64_t step = 0;
    double mean_x0 = 0.0;
    std::array<double, 4> mean_p{};
    std::array<double, 4> se_p{};
    double mean_abs_p = 0.0;
    double se_abs_p = 0.0;
    double mean_shell_drift = 0.0;
    double max_shell_drift = 0.0; // largest |drift| in the ensemble
};

struct EnsembleResult {
    std::vector<MomentRecord> moments;
    RadialHistogram radial;          // final states
    CartesianHistogram cartesian;    // final states
    std::int64_t rejected_steps = 0; // attempts undone and halved
    int max_halvings = 0;            // deepest halving level used
    std::int64_t trajectories = 0;
    SimConfig config;                // echo
    BathParams bath;                 // echo
    std::vector<std::string> warnings;
};

/// Initial ensemble distribution. `delta` starts every trajectory at
/// the same point. `thermal` draws an isotropic momentum in the bath
/// rest frame at x = 0 with radial density r^2 exp(-beta E) / E^power,
/// E = sqrt(mass^2 + r^2); power 1 is the stationary profile of the
/// process, power 0 the plain exp(-beta E) alternative.
struct InitialDistribution {
    enum class Kind { delta, thermal };
    Kind kind = Kind::delta;
    PhasePoint point{};
    double mass = 1.0;
    double beta = 1.0;
    int energy_power = 1;

    static InitialDistribution at(const PhasePoint& start);
    static InitialDistribution thermal(double mass, double beta, int energy_power = 1);
};

/// Evolves an independent ensemble. Deterministic for a fixed seed:
/// noise is keyed by (seed, trajectory, step, attempt) and reductions
/// run over fixed-size chunks merged in order, so the result is
/// bitwise identical for any thread count. A step whose momentum
/// leaves the forward cone is retried as two half steps with fresh
/// noise (recursively, counted in the diagnostics); if six halvings do
/// not cure it the step size is hopeless for this bath and a
/// ConvergenceError names the offending trajectory.
EnsembleResult run_ensemble(const SimConfig& config, const BathParams& bath,
                            const InitialDistribution& init);

/// States of trajectory `index` of the matching ensemble at the
/// recording cadence (step 0 and the final step always included).
struct TrajectorySample {
    double s = 0.0;
    std::int64_t step = 0;
    PhasePoint state;
};

std::vector<TrajectorySample> simulate_trajectory(const SimConfig& config,
                                                  const BathParams& bath,
                                                  const InitialDistribution& init,
                                                  std::int64_t index = 0);

/// Comparison of an empirical bath-frame radial histogram against the
/// stationary family rho(r) ~ r^2 exp(-beta sqrt(m^2+r^2)) mu(r). The
/// primary score uses the measure factor mu = 1/E, which is the family
/// the transport solver's numerically determined stationary profile
/// selects; the plain mu = 1 candidate is scored alongside so reports
/// can show the discrimination. beta is fitted per candidate by
/// minimizing the L1 distance of the normalized densities.
struct StationarityReport {
    double distance = 0.0;     // L1 distance at the fitted beta, mu = 1/E
    double beta_fit = 0.0;
    double distance_d3p = 0.0; // same for mu = 1
    double beta_fit_d3p = 0.0;
    double effective_samples = 0.0;
    bool low_confidence = false; // fewer than 1e4 in-range samples
    bool bracket_edge = false;   // a fit ran into the beta search bracket
};

StationarityReport stationarity_distance(const RadialHistogram& hist, double mass,
                                         const BathParams& bath);

} // namespace rtd
