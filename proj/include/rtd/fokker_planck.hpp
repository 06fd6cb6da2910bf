#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "rtd/spectral.hpp"

namespace rtd {

/// Deterministic momentum-space solver for the on-shell transport
/// equation, used as the Monte-Carlo-independent reference for
/// stationary momentum distributions. Densities are per d^3p; the
/// evolution parameter is the same proper-time-like variable the
/// stochastic integrator uses, including its tau_c rate factor.

enum class GridGeometry { radial, axisymmetric };

/// Finite-volume momentum grid. The radial geometry assumes the bath
/// at rest (isotropic coefficients); the axisymmetric geometry spans
/// (|p_perp|, p_par) around the spatial direction of w and exists for
/// reduced-resolution covariance checks with a moving bath.
struct MomentumGrid {
    GridGeometry geometry = GridGeometry::radial;
    double mass = 1.0;
    int nq = 0;                  // radial cells, or transverse cells
    int nz = 1;                  // axial cells (axisymmetric only)
    std::vector<double> q_edges; // nq + 1 ascending, starting at 0
    std::vector<double> z_edges; // nz + 1 ascending (axisymmetric)
    std::array<double, 3> axis{0.0, 0.0, 1.0}; // unit symmetry axis
    std::vector<double> volumes; // nq * nz, z-major rows of q cells

    /// Bath-rest radial grid out to the radius where exp(-beta(E - m))
    /// has fallen to 1e-12, so every thermal family at this beta fits.
    static MomentumGrid radial(double mass, double beta, int cells = 512);
    /// Radial grid with a caller-chosen span, for oracle problems that
    /// are not tied to a thermal scale.
    static MomentumGrid radial_span(double mass, double p_max, int cells);
    /// Axisymmetric grid sized for the boosted thermal family of the
    /// given bath: transverse span as at rest, axial span widened by
    /// the Doppler factor of w.
    static MomentumGrid axisymmetric(double mass, const BathParams& bath, int nq, int nz);

    void validate() const;
    std::size_t cells() const { return static_cast<std::size_t>(nq) * static_cast<std::size_t>(nz); }
    double q_center(int i) const { return 0.5 * (q_edges[static_cast<std::size_t>(i)] + q_edges[static_cast<std::size_t>(i) + 1]); }
    double z_center(int j) const { return 0.5 * (z_edges[static_cast<std::size_t>(j)] + z_edges[static_cast<std::size_t>(j) + 1]); }
    /// Spatial momentum of a cell center in lab coordinates.
    std::array<double, 3> cell_momentum(int i, int j) const;
};

/// Cell densities with their time stamp. total is the probability
/// currently on the grid and is refreshed by every operation that
/// returns a state.
struct GridState {
    double time = 0.0;
    double total = 0.0;
    std::vector<double> f;

    void validate(const MomentumGrid& grid) const;
};

/// Normalized thermal state exp(-beta w.p) / (p^0)^energy_power
/// sampled onto the grid.
GridState thermal_state(const MomentumGrid& grid, const BathParams& bath, int energy_power = 1);

/// Coefficients of the momentum process restricted to the mass shell:
/// d p^i = tau_c b^i ds + noise with <dp dp> = 2 tau_c a ds. The
/// restriction extends densities constantly in p^0 and evaluates at
/// p^0 = E(p); that convention is the one that closes the process in
/// the spatial momentum alone. b_flux = div a - b is the advection
/// vector of the divergence form d_i(a^{ij} d_j f + b_flux^i f).
struct ShellReduction {
    std::array<std::array<double, 3>, 3> a{};
    std::array<double, 3> b{};
    std::array<double, 3> b_flux{};
};

ShellReduction reduce_to_shell(const std::array<double, 3>& p, double mass,
                               const BathParams& bath);

/// Precomputed face coefficients of the explicit finite-volume update,
/// with the tau_c rate factor folded in. The advective weight of each
/// face is split between its two cells by the exponential fitting rule,
/// which reduces to the centered mean at small face Peclet number but
/// stays a nonnegative stencil at any Peclet and makes the discrete
/// equilibrium match the two-point integrated balance exactly. Fluxes
/// vanish on the domain boundary, so marching conserves probability to
/// rounding.
struct FluxTables {
    GridGeometry geometry = GridGeometry::radial;
    int nq = 0;
    int nz = 1;
    // Faces normal to q: (nq + 1) per z row. grad multiplies the
    // neighbor difference, lo and hi the lower and upper neighbor
    // densities, cross the tangential derivative (axisymmetric only).
    std::vector<double> qf_grad, qf_lo, qf_hi, qf_cross;
    // Faces normal to z: nq * (nz + 1), axisymmetric only.
    std::vector<double> zf_grad, zf_lo, zf_hi, zf_cross;
};

FluxTables flux_tables(const MomentumGrid& grid, const BathParams& bath);
/// Constant isotropic diffusion with no advection; the classical heat
/// oracle for the marching scheme.
FluxTables isotropic_tables(const MomentumGrid& grid, double diffusion);

/// Largest explicit step the tables admit, with a safety margin.
double stable_dt(const MomentumGrid& grid, const FluxTables& tables);

GridState time_march(const MomentumGrid& grid, const GridState& state, const FluxTables& tables,
                     double dt, std::int64_t steps);
GridState time_march(const MomentumGrid& grid, const GridState& state, const BathParams& bath,
                     double dt, std::int64_t steps);

/// Largest face flux magnitude of the state, normalized per unit face
/// area; vanishes cell-wise at stationarity, not just in divergence.
double max_face_flux(const MomentumGrid& grid, const GridState& state, const BathParams& bath);

struct StationaryProfile {
    GridState state;
    double l1_rate = 0.0;     // L1 change per unit time at termination
    std::int64_t steps = 0;
    double dt = 0.0;
    double distance = 0.0;    // L1 misfit of exp(-beta w.p)/p^0 at beta_fit
    double beta_fit = 0.0;
    double distance_d3p = 0.0; // same for exp(-beta w.p)
    double beta_fit_d3p = 0.0;
};

/// Marches from the plain exponential family until the L1 change per
/// unit time falls below tol, then scores both thermal candidates
/// against the converged profile. Starting away from the expected
/// fixed point makes the fit report a statement about the dynamics
/// rather than the initialization.
StationaryProfile stationary_profile(const MomentumGrid& grid, const BathParams& bath,
                                     double tol = 1e-8, std::int64_t max_steps = 20000000);

} // namespace rtd
