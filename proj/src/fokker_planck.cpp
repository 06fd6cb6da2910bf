#include "rtd/fokker_planck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "rtd/sde.hpp"

namespace rtd {

namespace {

constexpr double kFourPi = 4.0 * M_PI;

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

double dot3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

/// Deterministic unit vector orthogonal to a unit axis: take the
/// coordinate direction least aligned with it and project the axis out.
std::array<double, 3> transverse_unit(const std::array<double, 3>& axis) {
    int k = 0;
    double best = std::abs(axis[0]);
    for (int i = 1; i < 3; ++i)
        if (std::abs(axis[i]) < best) {
            best = std::abs(axis[i]);
            k = i;
        }
    std::array<double, 3> e{};
    e[k] = 1.0;
    const double c = dot3(e, axis);
    for (int i = 0; i < 3; ++i) e[i] -= c * axis[i];
    const double n = std::sqrt(dot3(e, e));
    for (double& v : e) v /= n;
    return e;
}

void require_rest_for_radial(const MomentumGrid& grid, const BathParams& bath) {
    if (grid.geometry == GridGeometry::radial && bath.w.spatial_norm() > 1e-12)
        throw FrameError("radial geometry assumes the bath at rest; use the axisymmetric grid "
                         "for a moving bath");
}

/// Integral of 4 pi r^2 exp(-beta (E - shift)) / E^power over one radial
/// cell, by the three-point Simpson rule. The shift keeps the exponent
/// well conditioned; it cancels once masses are normalized.
double radial_family_mass(double r_lo, double r_hi, double mass, double beta, int power,
                          double shift) {
    const auto g = [&](double r) {
        const double e = std::sqrt(mass * mass + r * r);
        double v = kFourPi * r * r * std::exp(-beta * (e - shift));
        for (int k = 0; k < power; ++k) v /= e;
        return v;
    };
    const double h = r_hi - r_lo;
    return h / 6.0 * (g(r_lo) + 4.0 * g(0.5 * (r_lo + r_hi)) + g(r_hi));
}

/// Per-cell masses of the family exp(-beta w.p) / (p^0)^power on a grid,
/// normalized to total one.
std::vector<double> family_masses(const MomentumGrid& grid, const BathParams& bath, double beta,
                                  int power) {
    std::vector<double> m(grid.cells(), 0.0);
    if (grid.geometry == GridGeometry::radial) {
        for (int i = 0; i < grid.nq; ++i)
            m[static_cast<std::size_t>(i)] =
                radial_family_mass(grid.q_edges[static_cast<std::size_t>(i)],
                                   grid.q_edges[static_cast<std::size_t>(i) + 1], grid.mass, beta,
                                   power, grid.mass);
    } else {
        const FourVector& w = bath.w;
        for (int j = 0; j < grid.nz; ++j)
            for (int i = 0; i < grid.nq; ++i) {
                const std::array<double, 3> p = grid.cell_momentum(i, j);
                const double e = std::sqrt(grid.mass * grid.mass + dot3(p, p));
                const double wp = w[0] * e - (w[1] * p[0] + w[2] * p[1] + w[3] * p[2]);
                double v = std::exp(-beta * (wp - grid.mass));
                for (int k = 0; k < power; ++k) v /= e;
                const std::size_t c = static_cast<std::size_t>(j) * static_cast<std::size_t>(grid.nq) +
                                      static_cast<std::size_t>(i);
                m[c] = v * grid.volumes[c];
            }
    }
    double sum = 0.0;
    for (double v : m) sum += v;
    if (!(sum > 0.0)) throw ConfigError("thermal family carries no mass on this grid");
    for (double& v : m) v /= sum;
    return m;
}

/// L1 distance between normalized cell masses and the best-fitting
/// member of one thermal family, with the inverse temperature located
/// by golden-section search on [beta/8, 8 beta].
void fit_family(const MomentumGrid& grid, const BathParams& bath, const std::vector<double>& data,
                int power, double* beta_fit, double* distance) {
    const auto l1_at = [&](double beta) {
        const std::vector<double> model = family_masses(grid, bath, beta, power);
        double d = 0.0;
        for (std::size_t c = 0; c < data.size(); ++c) d += std::abs(data[c] - model[c]);
        return d;
    };
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double lo = bath.beta / 8.0, hi = bath.beta * 8.0;
    double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
    double f1 = l1_at(x1), f2 = l1_at(x2);
    for (int it = 0; it < 90; ++it) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - gr * (hi - lo);
            f1 = l1_at(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + gr * (hi - lo);
            f2 = l1_at(x2);
        }
    }
    *beta_fit = 0.5 * (lo + hi);
    *distance = l1_at(*beta_fit);
}

/// Exponential-fitting weight of the higher-index cell in the advective
/// face flux a (fR - fL)/h + b [(1 - delta) fL + delta fR], chosen so
/// the flux vanishes exactly on the two-point equilibrium ratio
/// fR / fL = exp(-pe) with pe = b h / a. Centered (1/2) at small pe,
/// fully one-sided in the advection-dominated limit.
double cc_weight(double pe) {
    if (std::abs(pe) < 1e-4) return 0.5 + pe / 12.0;
    if (pe > 30.0) return 1.0 - 1.0 / pe;
    if (pe < -30.0) return -1.0 / pe;
    const double em = std::expm1(-pe); // exp(-pe) - 1
    return (pe + em) / (pe * (-em));
}

/// Splits a face's advective weight (rate area b) into its lower and
/// upper cell parts. The Peclet number b h / a equals adv / grad
/// because the area and rate factors cancel; a diffusion-free face
/// falls back to the pure upstream side.
void split_advection(double grad, double adv, double* lo, double* hi) {
    const double delta = grad > 0.0 ? cc_weight(adv / grad) : (adv > 0.0 ? 1.0 : 0.0);
    *hi = adv * delta;
    *lo = adv * (1.0 - delta);
}

void check_tables_match(const MomentumGrid& grid, const FluxTables& t) {
    if (t.geometry != grid.geometry || t.nq != grid.nq || t.nz != grid.nz)
        throw ConfigError("flux tables were built for a different grid");
}

/// Net face flux into each cell (sum of signed face fluxes, not yet
/// divided by the cell volume). Faces on the domain boundary carry no
/// flux, so the column sums of this operator vanish and marching
/// conserves probability. Mixed fluxes take their tangential derivative
/// from two one-sided differences, one per adjacent cell, with the side
/// picked by the sign of the face coefficient. The pair is symmetric
/// about the face center, so second order accuracy survives, and the
/// corner couplings it induces have the sign of diffusion along that
/// diagonal. A centered tangential stencil instead leaves the converged
/// profile a few parts in 1e5 negative on the steep flank of a drifting
/// bath. Edge rows drop the out-of-range half.
void accumulate_net(const MomentumGrid& grid, const FluxTables& t, const std::vector<double>& f,
                    std::vector<double>& net) {
    std::fill(net.begin(), net.end(), 0.0);
    const int nq = t.nq, nz = t.nz;
    if (t.geometry == GridGeometry::radial) {
        for (int i = 1; i < nq; ++i) {
            const std::size_t si = static_cast<std::size_t>(i);
            const double flux = t.qf_grad[si] * (f[si] - f[si - 1]) + t.qf_lo[si] * f[si - 1] +
                                t.qf_hi[si] * f[si];
            net[si - 1] += flux;
            net[si] -= flux;
        }
        return;
    }
    const auto cell = [nq](int i, int j) {
        return static_cast<std::size_t>(j) * static_cast<std::size_t>(nq) +
               static_cast<std::size_t>(i);
    };
    const double hq = grid.q_edges[1] - grid.q_edges[0];
    const double hz = grid.z_edges[1] - grid.z_edges[0];
    for (int j = 0; j < nz; ++j)
        for (int i = 1; i < nq; ++i) {
            const std::size_t cl = cell(i - 1, j), cr = cell(i, j);
            const std::size_t fi = static_cast<std::size_t>(j) * static_cast<std::size_t>(nq + 1) +
                                   static_cast<std::size_t>(i);
            double flux = t.qf_grad[fi] * (f[cr] - f[cl]) + t.qf_lo[fi] * f[cl] +
                          t.qf_hi[fi] * f[cr];
            if (const double c = t.qf_cross[fi]; c != 0.0) {
                double gz = 0.0;
                if (c > 0.0) {
                    if (j > 0) gz += f[cl] - f[cell(i - 1, j - 1)];
                    if (j + 1 < nz) gz += f[cell(i, j + 1)] - f[cr];
                } else {
                    if (j + 1 < nz) gz += f[cell(i - 1, j + 1)] - f[cl];
                    if (j > 0) gz += f[cr] - f[cell(i, j - 1)];
                }
                flux += c * gz / (2.0 * hz);
            }
            net[cl] += flux;
            net[cr] -= flux;
        }
    for (int j = 1; j < nz; ++j)
        for (int i = 0; i < nq; ++i) {
            const std::size_t cd = cell(i, j - 1), cu = cell(i, j);
            const std::size_t fi = cell(i, j);
            double flux = t.zf_grad[fi] * (f[cu] - f[cd]) + t.zf_lo[fi] * f[cd] +
                          t.zf_hi[fi] * f[cu];
            if (const double c = t.zf_cross[fi]; c != 0.0) {
                double gq = 0.0;
                if (c > 0.0) {
                    if (i > 0) gq += f[cd] - f[cell(i - 1, j - 1)];
                    if (i + 1 < nq) gq += f[cell(i + 1, j)] - f[cu];
                } else {
                    if (i + 1 < nq) gq += f[cell(i + 1, j - 1)] - f[cd];
                    if (i > 0) gq += f[cu] - f[cell(i - 1, j)];
                }
                flux += c * gq / (2.0 * hq);
            }
            net[cd] += flux;
            net[cu] -= flux;
        }
}

} // namespace

MomentumGrid MomentumGrid::radial(double mass, double beta, int cells) {
    if (!(beta > 0.0)) throw ConfigError("momentum grid needs a positive beta");
    // exp(-28) < 1e-12, so the span captures the whole thermal family
    // at this temperature down to negligible tail mass.
    const double e_span = mass + 28.0 / beta;
    if (!(mass > 0.0)) throw ConfigError("momentum grid needs a positive mass");
    return radial_span(mass, std::sqrt(e_span * e_span - mass * mass), cells);
}

MomentumGrid MomentumGrid::radial_span(double mass, double p_max, int cells) {
    if (!(mass > 0.0)) throw ConfigError("momentum grid needs a positive mass");
    if (!(p_max > 0.0)) throw ConfigError("momentum grid needs a positive span");
    if (cells < 8) throw ConfigError("momentum grid needs at least 8 radial cells");
    MomentumGrid g;
    g.geometry = GridGeometry::radial;
    g.mass = mass;
    g.nq = cells;
    g.nz = 1;
    g.q_edges.resize(static_cast<std::size_t>(cells) + 1);
    for (int i = 0; i <= cells; ++i)
        g.q_edges[static_cast<std::size_t>(i)] = p_max * static_cast<double>(i) / cells;
    g.q_edges.back() = p_max;
    g.volumes.resize(static_cast<std::size_t>(cells));
    for (int i = 0; i < cells; ++i) {
        const double lo = g.q_edges[static_cast<std::size_t>(i)];
        const double hi = g.q_edges[static_cast<std::size_t>(i) + 1];
        g.volumes[static_cast<std::size_t>(i)] = kFourPi / 3.0 * (hi * hi * hi - lo * lo * lo);
    }
    return g;
}

MomentumGrid MomentumGrid::axisymmetric(double mass, const BathParams& bath, int nq, int nz) {
    if (!(mass > 0.0)) throw ConfigError("momentum grid needs a positive mass");
    bath.validate(false);
    if (nq < 4) throw ConfigError("axisymmetric grid needs at least 4 transverse cells");
    if (nz < 8) throw ConfigError("axisymmetric grid needs at least 8 axial cells");
    const double e_span = mass + 28.0 / bath.beta;
    const double r_span = std::sqrt(e_span * e_span - mass * mass);

    MomentumGrid g;
    g.geometry = GridGeometry::axisymmetric;
    g.mass = mass;
    g.nq = nq;
    g.nz = nz;
    const double wmag = bath.w.spatial_norm();
    double doppler = 1.0;
    if (wmag > 1e-14) {
        g.axis = {bath.w[1] / wmag, bath.w[2] / wmag, bath.w[3] / wmag};
        doppler = bath.w[0] + wmag;
    }
    // Transverse decay is at least as fast as at rest; along the motion
    // the support stretches by the Doppler factor of w.
    const double z_half = r_span * doppler;
    g.q_edges.resize(static_cast<std::size_t>(nq) + 1);
    for (int i = 0; i <= nq; ++i)
        g.q_edges[static_cast<std::size_t>(i)] = r_span * static_cast<double>(i) / nq;
    g.z_edges.resize(static_cast<std::size_t>(nz) + 1);
    for (int j = 0; j <= nz; ++j)
        g.z_edges[static_cast<std::size_t>(j)] =
            z_half * (2.0 * static_cast<double>(j) / nz - 1.0);
    g.volumes.resize(g.cells());
    for (int j = 0; j < nz; ++j) {
        const double dz = g.z_edges[static_cast<std::size_t>(j) + 1] -
                          g.z_edges[static_cast<std::size_t>(j)];
        for (int i = 0; i < nq; ++i) {
            const double lo = g.q_edges[static_cast<std::size_t>(i)];
            const double hi = g.q_edges[static_cast<std::size_t>(i) + 1];
            g.volumes[static_cast<std::size_t>(j) * static_cast<std::size_t>(nq) +
                      static_cast<std::size_t>(i)] = M_PI * (hi * hi - lo * lo) * dz;
        }
    }
    return g;
}

void MomentumGrid::validate() const {
    if (!(mass > 0.0)) throw InvariantViolation("momentum grid mass must be positive");
    if (nq < 1 || nz < 1) throw InvariantViolation("momentum grid has no cells");
    if (q_edges.size() != static_cast<std::size_t>(nq) + 1)
        throw InvariantViolation("momentum grid edge count does not match nq");
    if (!(q_edges.front() == 0.0))
        throw InvariantViolation("momentum grid must start at |p| = 0");
    for (int i = 0; i < nq; ++i)
        if (!(q_edges[static_cast<std::size_t>(i) + 1] > q_edges[static_cast<std::size_t>(i)]))
            throw InvariantViolation("momentum grid edges must ascend");
    if (geometry == GridGeometry::radial) {
        if (nz != 1 || !z_edges.empty())
            throw InvariantViolation("radial grid carries axial structure");
    } else {
        if (z_edges.size() != static_cast<std::size_t>(nz) + 1)
            throw InvariantViolation("momentum grid edge count does not match nz");
        for (int j = 0; j < nz; ++j)
            if (!(z_edges[static_cast<std::size_t>(j) + 1] > z_edges[static_cast<std::size_t>(j)]))
                throw InvariantViolation("momentum grid edges must ascend");
    }
    if (std::abs(dot3(axis, axis) - 1.0) > 1e-9)
        throw InvariantViolation("momentum grid axis must be a unit vector");
    if (volumes.size() != cells()) throw InvariantViolation("momentum grid volume count is wrong");
    for (double v : volumes)
        if (!(v > 0.0) || !std::isfinite(v))
            throw InvariantViolation("momentum grid cell volumes must be positive");
}

std::array<double, 3> MomentumGrid::cell_momentum(int i, int j) const {
    const double q = q_center(i);
    if (geometry == GridGeometry::radial) return {axis[0] * q, axis[1] * q, axis[2] * q};
    const std::array<double, 3> eq = transverse_unit(axis);
    const double z = z_center(j);
    return {q * eq[0] + z * axis[0], q * eq[1] + z * axis[1], q * eq[2] + z * axis[2]};
}

void GridState::validate(const MomentumGrid& grid) const {
    if (f.size() != grid.cells())
        throw InvariantViolation("grid state size does not match the grid");
    if (!std::isfinite(time)) throw InvariantViolation("grid state time must be finite");
    double sum = 0.0;
    for (std::size_t c = 0; c < f.size(); ++c) {
        if (!std::isfinite(f[c]) || f[c] < 0.0)
            throw InvariantViolation("grid state density must be finite and nonnegative");
        sum += f[c] * grid.volumes[c];
    }
    if (std::abs(sum - total) > 1e-9 * std::max(1.0, std::abs(total)))
        throw InvariantViolation("grid state total is stale");
}

GridState thermal_state(const MomentumGrid& grid, const BathParams& bath, int energy_power) {
    grid.validate();
    bath.validate(false);
    require_rest_for_radial(grid, bath);
    if (energy_power != 0 && energy_power != 1)
        throw ConfigError("thermal energy_power must be 0 or 1");
    const std::vector<double> masses = family_masses(grid, bath, bath.beta, energy_power);
    GridState s;
    s.f.resize(grid.cells());
    s.total = 0.0;
    for (std::size_t c = 0; c < masses.size(); ++c) {
        s.f[c] = masses[c] / grid.volumes[c];
        s.total += s.f[c] * grid.volumes[c];
    }
    return s;
}

ShellReduction reduce_to_shell(const std::array<double, 3>& p, double mass,
                               const BathParams& bath) {
    if (!(mass > 0.0)) throw ConfigError("shell reduction needs a positive mass");
    bath.validate(false);

    const double r2 = dot3(p, p);
    const double energy = std::sqrt(mass * mass + r2);
    const FourVector p4{energy, p[0], p[1], p[2]};
    const FourVector& w = bath.w;
    const double s = mass * mass;
    const double y = dot(w, p4);
    const double both = bath.epsilon + bath.pi_eps;

    // Spatial block of the diffusion tensor on the shell, written on the
    // covariant basis {eta, p p, p w + w p, w w}. The eta coefficient is
    // the transverse eigenvalue; the remaining terms carry the p and w
    // legs of the projector structure.
    const double c_eta = 2.0 * bath.pi_eps - both * y * y / s;
    const double c_pp = -2.0 * bath.pi_eps / s;
    const double c_pw = both * y / s;
    const double c_ww = -both;
    ShellReduction out;
    for (int i = 0; i < 3; ++i)
        for (int j = i; j < 3; ++j) {
            double v = c_pp * p[i] * p[j] + c_pw * (p[i] * w[j + 1] + w[i + 1] * p[j]) +
                       c_ww * w[i + 1] * w[j + 1];
            if (i == j) v -= c_eta; // eta^{ii} = -1
            out.a[i][j] = v;
            out.a[j][i] = v; // mirrored, so symmetry holds bitwise
        }

    const FourVector drift = drift_closed_form(p4, bath);
    for (int i = 0; i < 3; ++i) out.b[i] = drift[i + 1];

    // Divergence of the shell tensor, using dE/dp^j = p^j / E and
    // dy/dp^j = w^0 p^j / E - w^j through the basis coefficients.
    const double w0 = w[0];
    const double wp3 = w[1] * p[0] + w[2] * p[1] + w[3] * p[2];
    const double ww3 = w[1] * w[1] + w[2] * w[2] + w[3] * w[3];
    for (int i = 0; i < 3; ++i) {
        const double wi = w[i + 1];
        const double t_eta = (2.0 * both * y / s) * (w0 * p[i] / energy - wi);
        const double t_pp = -(8.0 * bath.pi_eps / s) * p[i];
        const double t_pw = (both / s) * ((w0 * wp3 / energy - ww3) * p[i] +
                                          (w0 * r2 / energy - wp3) * wi + 4.0 * y * wi);
        out.b_flux[i] = t_eta + t_pp + t_pw - out.b[i];
    }
    return out;
}

FluxTables flux_tables(const MomentumGrid& grid, const BathParams& bath) {
    grid.validate();
    bath.validate(false);
    require_rest_for_radial(grid, bath);

    FluxTables t;
    t.geometry = grid.geometry;
    t.nq = grid.nq;
    t.nz = grid.nz;
    const double tau = bath.tau_c;
    if (grid.geometry == GridGeometry::radial) {
        const double h = grid.q_edges[1] - grid.q_edges[0];
        t.qf_grad.assign(static_cast<std::size_t>(grid.nq) + 1, 0.0);
        t.qf_lo.assign(t.qf_grad.size(), 0.0);
        t.qf_hi.assign(t.qf_grad.size(), 0.0);
        for (int i = 1; i < grid.nq; ++i) {
            const double rf = grid.q_edges[static_cast<std::size_t>(i)];
            const std::array<double, 3> pf{grid.axis[0] * rf, grid.axis[1] * rf,
                                           grid.axis[2] * rf};
            const ShellReduction red = reduce_to_shell(pf, grid.mass, bath);
            double a_rr = 0.0, b_r = 0.0;
            for (int a = 0; a < 3; ++a) {
                b_r += red.b_flux[a] * grid.axis[a];
                for (int b = 0; b < 3; ++b) a_rr += grid.axis[a] * red.a[a][b] * grid.axis[b];
            }
            const double area = kFourPi * rf * rf;
            const std::size_t si = static_cast<std::size_t>(i);
            t.qf_grad[si] = tau * area * a_rr / h;
            split_advection(t.qf_grad[si], tau * area * b_r, &t.qf_lo[si], &t.qf_hi[si]);
        }
        return t;
    }

    const std::array<double, 3> eq = transverse_unit(grid.axis);
    const std::array<double, 3>& ez = grid.axis;
    const double hq = grid.q_edges[1] - grid.q_edges[0];
    const double hz = grid.z_edges[1] - grid.z_edges[0];
    const auto project = [](const ShellReduction& red, const std::array<double, 3>& u,
                            const std::array<double, 3>& v) {
        double s = 0.0;
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) s += u[a] * red.a[a][b] * v[b];
        return s;
    };
    t.qf_grad.assign(static_cast<std::size_t>(grid.nq + 1) * static_cast<std::size_t>(grid.nz),
                     0.0);
    t.qf_lo.assign(t.qf_grad.size(), 0.0);
    t.qf_hi.assign(t.qf_grad.size(), 0.0);
    t.qf_cross.assign(t.qf_grad.size(), 0.0);
    for (int j = 0; j < grid.nz; ++j) {
        const double zc = grid.z_center(j);
        const double dz = grid.z_edges[static_cast<std::size_t>(j) + 1] -
                          grid.z_edges[static_cast<std::size_t>(j)];
        for (int i = 1; i < grid.nq; ++i) {
            const double qf = grid.q_edges[static_cast<std::size_t>(i)];
            const std::array<double, 3> p{qf * eq[0] + zc * ez[0], qf * eq[1] + zc * ez[1],
                                          qf * eq[2] + zc * ez[2]};
            const ShellReduction red = reduce_to_shell(p, grid.mass, bath);
            const double area = 2.0 * M_PI * qf * dz;
            const std::size_t fi = static_cast<std::size_t>(j) * static_cast<std::size_t>(grid.nq + 1) +
                                   static_cast<std::size_t>(i);
            t.qf_grad[fi] = tau * area * project(red, eq, eq) / hq;
            split_advection(t.qf_grad[fi], tau * area * dot3(red.b_flux, eq), &t.qf_lo[fi],
                            &t.qf_hi[fi]);
            t.qf_cross[fi] = tau * area * project(red, eq, ez);
        }
    }
    t.zf_grad.assign(static_cast<std::size_t>(grid.nq) * static_cast<std::size_t>(grid.nz + 1),
                     0.0);
    t.zf_lo.assign(t.zf_grad.size(), 0.0);
    t.zf_hi.assign(t.zf_grad.size(), 0.0);
    t.zf_cross.assign(t.zf_grad.size(), 0.0);
    for (int j = 1; j < grid.nz; ++j) {
        const double zf = grid.z_edges[static_cast<std::size_t>(j)];
        for (int i = 0; i < grid.nq; ++i) {
            const double qc = grid.q_center(i);
            const std::array<double, 3> p{qc * eq[0] + zf * ez[0], qc * eq[1] + zf * ez[1],
                                          qc * eq[2] + zf * ez[2]};
            const ShellReduction red = reduce_to_shell(p, grid.mass, bath);
            const double lo = grid.q_edges[static_cast<std::size_t>(i)];
            const double hi = grid.q_edges[static_cast<std::size_t>(i) + 1];
            const double area = M_PI * (hi * hi - lo * lo);
            const std::size_t fi = static_cast<std::size_t>(j) * static_cast<std::size_t>(grid.nq) +
                                   static_cast<std::size_t>(i);
            t.zf_grad[fi] = tau * area * project(red, ez, ez) / hz;
            split_advection(t.zf_grad[fi], tau * area * dot3(red.b_flux, ez), &t.zf_lo[fi],
                            &t.zf_hi[fi]);
            t.zf_cross[fi] = tau * area * project(red, ez, eq);
        }
    }
    return t;
}

FluxTables isotropic_tables(const MomentumGrid& grid, double diffusion) {
    grid.validate();
    if (!(diffusion > 0.0)) throw ConfigError("isotropic tables need a positive diffusion");
    FluxTables t;
    t.geometry = grid.geometry;
    t.nq = grid.nq;
    t.nz = grid.nz;
    if (grid.geometry == GridGeometry::radial) {
        const double h = grid.q_edges[1] - grid.q_edges[0];
        t.qf_grad.assign(static_cast<std::size_t>(grid.nq) + 1, 0.0);
        t.qf_lo.assign(t.qf_grad.size(), 0.0);
        t.qf_hi.assign(t.qf_grad.size(), 0.0);
        for (int i = 1; i < grid.nq; ++i) {
            const double rf = grid.q_edges[static_cast<std::size_t>(i)];
            t.qf_grad[static_cast<std::size_t>(i)] = kFourPi * rf * rf * diffusion / h;
        }
        return t;
    }
    const double hq = grid.q_edges[1] - grid.q_edges[0];
    const double hz = grid.z_edges[1] - grid.z_edges[0];
    t.qf_grad.assign(static_cast<std::size_t>(grid.nq + 1) * static_cast<std::size_t>(grid.nz),
                     0.0);
    t.qf_lo.assign(t.qf_grad.size(), 0.0);
    t.qf_hi.assign(t.qf_grad.size(), 0.0);
    t.qf_cross.assign(t.qf_grad.size(), 0.0);
    for (int j = 0; j < grid.nz; ++j) {
        const double dz = grid.z_edges[static_cast<std::size_t>(j) + 1] -
                          grid.z_edges[static_cast<std::size_t>(j)];
        for (int i = 1; i < grid.nq; ++i)
            t.qf_grad[static_cast<std::size_t>(j) * static_cast<std::size_t>(grid.nq + 1) +
                      static_cast<std::size_t>(i)] =
                2.0 * M_PI * grid.q_edges[static_cast<std::size_t>(i)] * dz * diffusion / hq;
    }
    t.zf_grad.assign(static_cast<std::size_t>(grid.nq) * static_cast<std::size_t>(grid.nz + 1),
                     0.0);
    t.zf_lo.assign(t.zf_grad.size(), 0.0);
    t.zf_hi.assign(t.zf_grad.size(), 0.0);
    t.zf_cross.assign(t.zf_grad.size(), 0.0);
    for (int j = 1; j < grid.nz; ++j)
        for (int i = 0; i < grid.nq; ++i) {
            const double lo = grid.q_edges[static_cast<std::size_t>(i)];
            const double hi = grid.q_edges[static_cast<std::size_t>(i) + 1];
            t.zf_grad[static_cast<std::size_t>(j) * static_cast<std::size_t>(grid.nq) +
                      static_cast<std::size_t>(i)] = M_PI * (hi * hi - lo * lo) * diffusion / hz;
        }
    return t;
}

double stable_dt(const MomentumGrid& grid, const FluxTables& t) {
    grid.validate();
    check_tables_match(grid, t);
    const int nq = t.nq, nz = t.nz;
    const double hq = grid.q_edges[1] - grid.q_edges[0];
    const double hz = grid.geometry == GridGeometry::axisymmetric
                          ? grid.z_edges[1] - grid.z_edges[0]
                          : 1.0;
    double dt = 0.0;
    bool any = false;
    for (int j = 0; j < nz; ++j)
        for (int i = 0; i < nq; ++i) {
            double rate = 0.0;
            if (t.geometry == GridGeometry::radial) {
                for (const std::size_t fi :
                     {static_cast<std::size_t>(i), static_cast<std::size_t>(i) + 1})
                    rate += t.qf_grad[fi] + std::abs(t.qf_lo[fi]) + std::abs(t.qf_hi[fi]);
            } else {
                const std::size_t ql = static_cast<std::size_t>(j) * static_cast<std::size_t>(nq + 1) +
                                       static_cast<std::size_t>(i);
                const std::size_t zl = static_cast<std::size_t>(j) * static_cast<std::size_t>(nq) +
                                       static_cast<std::size_t>(i);
                for (const std::size_t fi : {ql, ql + 1})
                    rate += t.qf_grad[fi] + std::abs(t.qf_lo[fi]) + std::abs(t.qf_hi[fi]) +
                            std::abs(t.qf_cross[fi]) / hz;
                for (const std::size_t fi : {zl, zl + static_cast<std::size_t>(nq)})
                    rate += t.zf_grad[fi] + std::abs(t.zf_lo[fi]) + std::abs(t.zf_hi[fi]) +
                            std::abs(t.zf_cross[fi]) / hq;
            }
            if (rate > 0.0) {
                const double cell_dt =
                    grid.volumes[static_cast<std::size_t>(j) * static_cast<std::size_t>(nq) +
                                 static_cast<std::size_t>(i)] /
                    rate;
                dt = any ? std::min(dt, cell_dt) : cell_dt;
                any = true;
            }
        }
    if (!any) throw ConfigError("transport coefficients vanish on the whole grid");
    return 0.4 * dt;
}

GridState time_march(const MomentumGrid& grid, const GridState& state, const FluxTables& tables,
                     double dt, std::int64_t steps) {
    grid.validate();
    state.validate(grid);
    check_tables_match(grid, tables);
    if (!(dt > 0.0)) throw ConfigError("time_march needs dt > 0");
    if (steps < 1) throw ConfigError("time_march needs at least one step");
    const double bound = stable_dt(grid, tables);
    if (dt > bound * (1.0 + 1e-12))
        throw ConfigError("dt " + fmt_g(dt) + " exceeds the explicit stability bound; suggested dt " +
                          fmt_g(bound));

    GridState out = state;
    std::vector<double> net(grid.cells());
    for (std::int64_t step = 0; step < steps; ++step) {
        accumulate_net(grid, tables, out.f, net);
        double fmin = 0.0, linf = 0.0;
        for (std::size_t c = 0; c < out.f.size(); ++c) {
            out.f[c] += dt * net[c] / grid.volumes[c];
            fmin = std::min(fmin, out.f[c]);
            linf = std::max(linf, std::abs(out.f[c]));
        }
        if (fmin < 0.0) {
            // The bounded step keeps the update a nonnegative stencil, so
            // anything below rounding noise means the step control failed.
            if (fmin < -5e-13 * linf)
                throw ConvergenceError("density went negative while marching; reduce dt below " +
                                       fmt_g(dt));
            for (double& v : out.f) v = std::max(v, 0.0);
        }
    }
    out.time = state.time + dt * static_cast<double>(steps);
    out.total = 0.0;
    for (std::size_t c = 0; c < out.f.size(); ++c) out.total += out.f[c] * grid.volumes[c];
    return out;
}

GridState time_march(const MomentumGrid& grid, const GridState& state, const BathParams& bath,
                     double dt, std::int64_t steps) {
    return time_march(grid, state, flux_tables(grid, bath), dt, steps);
}

double max_face_flux(const MomentumGrid& grid, const GridState& state, const BathParams& bath) {
    grid.validate();
    state.validate(grid);
    bath.validate(false);
    require_rest_for_radial(grid, bath);
    // Same face evaluation as the march, but per unit area and without
    // the rate factor, so the result is the physical flux magnitude.
    const FluxTables t = flux_tables(grid, bath);
    std::vector<double> net(grid.cells());
    double worst = 0.0;
    const std::vector<double>& f = state.f;
    const int nq = t.nq, nz = t.nz;
    if (grid.geometry == GridGeometry::radial) {
        for (int i = 1; i < nq; ++i) {
            const double rf = grid.q_edges[static_cast<std::size_t>(i)];
            const double area = kFourPi * rf * rf;
            const std::size_t si = static_cast<std::size_t>(i);
            const double flux = t.qf_grad[si] * (f[si] - f[si - 1]) + t.qf_lo[si] * f[si - 1] +
                                t.qf_hi[si] * f[si];
            worst = std::max(worst, std::abs(flux) / (bath.tau_c * area));
        }
        return worst;
    }
    const auto cell = [nq](int i, int j) {
        return static_cast<std::size_t>(j) * static_cast<std::size_t>(nq) +
               static_cast<std::size_t>(i);
    };
    const double hq = grid.q_edges[1] - grid.q_edges[0];
    const double hz = grid.z_edges[1] - grid.z_edges[0];
    for (int j = 0; j < nz; ++j) {
        const double dzj = grid.z_edges[static_cast<std::size_t>(j) + 1] -
                           grid.z_edges[static_cast<std::size_t>(j)];
        for (int i = 1; i < nq; ++i) {
            const std::size_t fi = static_cast<std::size_t>(j) * static_cast<std::size_t>(nq + 1) +
                                   static_cast<std::size_t>(i);
            const double area = 2.0 * M_PI * grid.q_edges[static_cast<std::size_t>(i)] * dzj;
            double flux = t.qf_grad[fi] * (f[cell(i, j)] - f[cell(i - 1, j)]) +
                          t.qf_lo[fi] * f[cell(i - 1, j)] + t.qf_hi[fi] * f[cell(i, j)];
            if (const double c = t.qf_cross[fi]; c != 0.0) {
                double gz = 0.0;
                if (c > 0.0) {
                    if (j > 0) gz += f[cell(i - 1, j)] - f[cell(i - 1, j - 1)];
                    if (j + 1 < nz) gz += f[cell(i, j + 1)] - f[cell(i, j)];
                } else {
                    if (j + 1 < nz) gz += f[cell(i - 1, j + 1)] - f[cell(i - 1, j)];
                    if (j > 0) gz += f[cell(i, j)] - f[cell(i, j - 1)];
                }
                flux += c * gz / (2.0 * hz);
            }
            worst = std::max(worst, std::abs(flux) / (bath.tau_c * area));
        }
    }
    for (int j = 1; j < nz; ++j)
        for (int i = 0; i < nq; ++i) {
            const double lo = grid.q_edges[static_cast<std::size_t>(i)];
            const double hi = grid.q_edges[static_cast<std::size_t>(i) + 1];
            const double area = M_PI * (hi * hi - lo * lo);
            const std::size_t fi = static_cast<std::size_t>(j) * static_cast<std::size_t>(nq) +
                                   static_cast<std::size_t>(i);
            double flux = t.zf_grad[fi] * (f[cell(i, j)] - f[cell(i, j - 1)]) +
                          t.zf_lo[fi] * f[cell(i, j - 1)] + t.zf_hi[fi] * f[cell(i, j)];
            if (const double c = t.zf_cross[fi]; c != 0.0) {
                double gq = 0.0;
                if (c > 0.0) {
                    if (i > 0) gq += f[cell(i, j - 1)] - f[cell(i - 1, j - 1)];
                    if (i + 1 < nq) gq += f[cell(i + 1, j)] - f[cell(i, j)];
                } else {
                    if (i + 1 < nq) gq += f[cell(i + 1, j - 1)] - f[cell(i, j - 1)];
                    if (i > 0) gq += f[cell(i, j)] - f[cell(i - 1, j)];
                }
                flux += c * gq / (2.0 * hq);
            }
            worst = std::max(worst, std::abs(flux) / (bath.tau_c * area));
        }
    return worst;
}

StationaryProfile stationary_profile(const MomentumGrid& grid, const BathParams& bath, double tol,
                                     std::int64_t max_steps) {
    grid.validate();
    bath.validate(false);
    require_rest_for_radial(grid, bath);
    if (!(tol > 0.0)) throw ConfigError("stationary march needs a positive tolerance");
    if (max_steps < 1) throw ConfigError("stationary march needs a positive step budget");

    const FluxTables tables = flux_tables(grid, bath);
    const double dt = stable_dt(grid, tables);

    StationaryProfile out;
    out.dt = dt;
    out.state = thermal_state(grid, bath, 0);

    constexpr std::int64_t kBlock = 256;
    double history[5] = {0.0, 0.0, 0.0, 0.0, 0.0};
    int recorded = 0;
    bool converged = false;
    std::vector<double> prev;
    while (out.steps < max_steps) {
        const std::int64_t block = std::min(kBlock, max_steps - out.steps);
        prev = out.state.f;
        out.state = time_march(grid, out.state, tables, dt, block);
        out.steps += block;
        double change = 0.0;
        for (std::size_t c = 0; c < prev.size(); ++c)
            change += std::abs(out.state.f[c] - prev[c]) * grid.volumes[c];
        out.l1_rate = change / (dt * static_cast<double>(block));
        history[recorded % 5] = out.l1_rate;
        ++recorded;
        if (out.l1_rate < tol) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        std::string msg = "stationary march exhausted its budget of " +
                          std::to_string(max_steps) + " steps at dt " + fmt_g(dt) +
                          "; recent L1 rates per unit time:";
        const int n = std::min(recorded, 5);
        for (int k = n; k >= 1; --k) msg += " " + fmt_g(history[(recorded - k) % 5]);
        msg += "; target " + fmt_g(tol);
        throw ConvergenceError(msg);
    }

    std::vector<double> data(grid.cells());
    for (std::size_t c = 0; c < data.size(); ++c)
        data[c] = out.state.f[c] * grid.volumes[c] / out.state.total;
    fit_family(grid, bath, data, 1, &out.beta_fit, &out.distance);
    fit_family(grid, bath, data, 0, &out.beta_fit_d3p, &out.distance_d3p);
    return out;
}

} // namespace rtd
