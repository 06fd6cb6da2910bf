#include "rtd/sde.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "rtd/errors.hpp"
#include "rtd/kernels/philox.hpp"
#include "rtd/parallel.hpp"

namespace rtd {
namespace {

constexpr int kMaxHalvings = 6;
constexpr int kScalars = 7; // x0, bath-frame p0..p3, |p|, shell drift
constexpr double kTwoPi = 6.28318530717958647692;

void require_timelike(const FourVector& p) {
    if (!(dot(p, p) > 0.0))
        throw InvariantViolation("momentum must be timelike (p.p > 0)");
}

/// Unit spacelike vector orthogonal to the unit timelike u, seeded from
/// the best-conditioned coordinate axis.
FourVector spacelike_unit_orthogonal(const FourVector& u) {
    FourVector best{};
    double best_n2 = -1.0;
    for (int a = 1; a < 4; ++a) {
        FourVector v{};
        v[a] = 1.0;
        v = v - u * dot(v, u);
        const double n2 = -dot(v, v);
        if (n2 > best_n2) {
            best_n2 = n2;
            best = v;
        }
    }
    return best * (1.0 / std::sqrt(best_n2));
}

/// Minkowski-orthonormal spacelike pair spanning the plane orthogonal
/// to the unit timelike u and the unit spacelike n1. Greedy
/// Gram-Schmidt over the coordinate axes, largest residual first, so
/// the pair stays well conditioned at any rapidity.
void transverse_pair(const FourVector& u, const FourVector& n1, FourVector& e2,
                     FourVector& e3) {
    FourVector cand[3];
    double score[3];
    for (int a = 0; a < 3; ++a) {
        FourVector v{};
        v[a + 1] = 1.0;
        v = v - u * dot(v, u);
        v = v + n1 * dot(v, n1);
        cand[a] = v;
        score[a] = -dot(v, v);
    }
    int i2 = 0;
    for (int a = 1; a < 3; ++a)
        if (score[a] > score[i2]) i2 = a;
    if (!(score[i2] > 0.0)) throw InvariantViolation("transverse noise frame is degenerate");
    e2 = cand[i2] * (1.0 / std::sqrt(score[i2]));

    double best = -1.0;
    FourVector r3{};
    for (int a = 0; a < 3; ++a) {
        if (a == i2) continue;
        FourVector v = cand[a] + e2 * dot(cand[a], e2);
        const double n2 = -dot(v, v);
        if (n2 > best) {
            best = n2;
            r3 = v;
        }
    }
    if (!(best > 0.0)) throw InvariantViolation("transverse noise frame is degenerate");
    e3 = r3 * (1.0 / std::sqrt(best));
}

/// Radial density of the thermal shell family, shifted by exp(beta m)
/// so the peak stays in range at large beta m.
double shell_density(double r, double m, double beta, int energy_power) {
    const double e = std::sqrt(m * m + r * r);
    const double v = r * r * std::exp(-beta * (e - m));
    return energy_power == 1 ? v / e : v;
}

/// Tabulated radial CDF of the thermal shell family on [0, r_max].
struct RadialTable {
    double r_max = 0.0;
    double dr = 0.0;
    std::vector<double> pdf;
    std::vector<double> cdf;
};

RadialTable build_thermal_table(double m, double beta, int energy_power) {
    // E - m <= 45/beta keeps everything beyond the table below ~1e-19
    // of the density peak.
    const double emax = m + 45.0 / beta;
    const int n = 4096;
    RadialTable t;
    t.r_max = std::sqrt(emax * emax - m * m);
    t.dr = t.r_max / n;
    t.pdf.resize(n + 1);
    t.cdf.resize(n + 1);
    for (int i = 0; i <= n; ++i) t.pdf[i] = shell_density(i * t.dr, m, beta, energy_power);
    t.cdf[0] = 0.0;
    for (int i = 1; i <= n; ++i)
        t.cdf[i] = t.cdf[i - 1] + 0.5 * t.dr * (t.pdf[i - 1] + t.pdf[i]);
    if (!(t.cdf.back() > 0.0))
        throw ConfigError("thermal initial distribution carries no mass");
    return t;
}

double invert_radial_table(const RadialTable& t, double u) {
    const double target = u * t.cdf.back();
    const auto it = std::upper_bound(t.cdf.begin(), t.cdf.end(), target);
    std::size_t i = it == t.cdf.begin() ? 0 : static_cast<std::size_t>(it - t.cdf.begin()) - 1;
    i = std::min(i, t.pdf.size() - 2);
    const double rem = std::max(0.0, target - t.cdf[i]);
    const double v0 = t.pdf[i];
    const double a = (t.pdf[i + 1] - v0) / t.dr;
    // Stable root of (a/2) x^2 + v0 x = rem on [0, dr].
    const double denom = v0 + std::sqrt(std::max(0.0, v0 * v0 + 2.0 * a * rem));
    const double x = denom > 0.0 ? std::min(t.dr, 2.0 * rem / denom) : 0.0;
    return i * t.dr + x;
}

/// Shared setup for the two drivers: initial-state sampling plus the
/// boosts into and out of the bath rest frame.
struct EnsembleSetup {
    const InitialDistribution* init = nullptr;
    RadialTable table;
    bool moving = false;
    Boost to_bath;
    Boost from_bath;

    EnsembleSetup(const InitialDistribution& in, const BathParams& bath) : init(&in) {
        if (in.kind == InitialDistribution::Kind::thermal) {
            if (!(in.mass > 0.0)) throw ConfigError("thermal initial mass must be positive");
            if (!(in.beta > 0.0)) throw ConfigError("thermal initial beta must be positive");
            if (in.energy_power != 0 && in.energy_power != 1)
                throw ConfigError("thermal energy_power must be 0 or 1");
            table = build_thermal_table(in.mass, in.beta, in.energy_power);
        } else {
            in.point.validate();
        }
        moving = bath.w.spatial_norm() > 0.0;
        if (moving) {
            to_bath = Boost::to_rest_of(bath.w);
            from_bath = to_bath.inverse();
        }
    }

    PhasePoint initial_state(std::uint64_t seed, std::int64_t traj) const {
        if (init->kind == InitialDistribution::Kind::delta) return init->point;
        const auto u01 = Philox::uniform2(seed, static_cast<std::uint64_t>(traj), 0, 0);
        const auto u23 = Philox::uniform2(seed, static_cast<std::uint64_t>(traj), 0, 1);
        const double r = invert_radial_table(table, u01[0]);
        const double ct = 2.0 * u01[1] - 1.0;
        const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
        const double phi = kTwoPi * u23[0];
        FourVector p{std::sqrt(init->mass * init->mass + r * r), r * st * std::cos(phi),
                     r * st * std::sin(phi), r * ct};
        if (moving) p = from_bath.apply(p);
        return PhasePoint::make(FourVector{}, p);
    }

    FourVector bath_frame(const FourVector& p) const {
        return moving ? to_bath.apply(p) : p;
    }
};

struct StepCounters {
    std::int64_t rejected = 0;
    int max_halvings = 0;
};

/// One step of size ds, retried as two half steps with fresh noise when
/// the update leaves the forward cone. Attempts are keyed by their node
/// in the halving tree (root 1, children 2n and 2n+1), so the draw
/// sequence does not depend on threading or on other trajectories.
PhasePoint advance_node(const PhasePoint& state, const BathParams& bath, double ds,
                        const SimConfig& config, std::int64_t traj, std::uint32_t step,
                        std::uint32_t node, int depth, StepCounters& counters) {
    const auto n01 =
        Philox::normal2(config.seed, static_cast<std::uint64_t>(traj), step, 4 * node);
    const auto n23 =
        Philox::normal2(config.seed, static_cast<std::uint64_t>(traj), step, 4 * node + 1);
    const std::array<double, 3> xi{n01[0], n01[1], n23[0]};
    try {
        return em_step(state, bath, ds, xi, config.projection, config.advection);
    } catch (const InvariantViolation&) {
        if (depth >= kMaxHalvings)
            throw ConvergenceError("trajectory " + std::to_string(traj) + ", step " +
                                   std::to_string(step) +
                                   ": still off the mass shell after " +
                                   std::to_string(kMaxHalvings) +
                                   " halvings; reduce dstep");
        ++counters.rejected;
        counters.max_halvings = std::max(counters.max_halvings, depth + 1);
        const PhasePoint mid =
            advance_node(state, bath, 0.5 * ds, config, traj, step, 2 * node, depth + 1, counters);
        return advance_node(mid, bath, 0.5 * ds, config, traj, step, 2 * node + 1, depth + 1,
                            counters);
    }
}

std::vector<std::int64_t> record_steps(const SimConfig& config) {
    std::vector<std::int64_t> rec{0};
    for (std::int64_t t = config.output_every; t < config.steps; t += config.output_every)
        rec.push_back(t);
    rec.push_back(config.steps);
    return rec;
}

/// Automatic histogram range: the stationary-profile span at the bath
/// temperature, widened to cover a delta start.
double auto_pmax(const InitialDistribution& init, const BathParams& bath,
                 const EnsembleSetup& setup) {
    const double m =
        init.kind == InitialDistribution::Kind::thermal ? init.mass : init.point.mass;
    const double emax = m + 40.0 / bath.beta;
    const double rspan = std::sqrt(emax * emax - m * m);
    const int n = 1024;
    double peak = 0.0;
    int ipeak = 0;
    for (int i = 1; i <= n; ++i) {
        const double v = shell_density(i * rspan / n, m, bath.beta, 1);
        if (v > peak) {
            peak = v;
            ipeak = i;
        }
    }
    double out = rspan;
    for (int i = ipeak; i <= n; ++i) {
        if (shell_density(i * rspan / n, m, bath.beta, 1) < 1e-8 * peak) {
            out = i * rspan / n;
            break;
        }
    }
    if (init.kind == InitialDistribution::Kind::delta)
        out = std::max(out, 1.3 * setup.bath_frame(init.point.p).spatial_norm());
    return out;
}

} // namespace

PhasePoint PhasePoint::make(const FourVector& x, const FourVector& p) {
    const double p2 = dot(p, p);
    if (!(p2 > 0.0)) throw InvariantViolation("phase point needs a timelike momentum");
    PhasePoint s;
    s.x = x;
    s.p = p;
    s.mass = std::sqrt(p2);
    return s;
}

void PhasePoint::validate() const {
    const double p2 = dot(p, p);
    if (!(p2 > 0.0)) throw InvariantViolation("phase point needs a timelike momentum");
    if (!(std::abs(mass * mass - p2) <= 1e-12 * p2))
        throw InvariantViolation("phase point mass cache disagrees with p.p");
}

void SimConfig::validate() const {
    if (!(dstep > 0.0)) throw ConfigError("dstep must be positive");
    if (steps < 1) throw ConfigError("steps must be at least 1");
    if (steps > 0xffffffffLL) throw ConfigError("steps exceeds the 32-bit step keying");
    if (ensemble < 1) throw ConfigError("ensemble must be at least 1");
    if (output_every < 1) throw ConfigError("output_every must be at least 1");
    if (threads < 1) throw ConfigError("threads must be at least 1");
    if (radial_bins < 4) throw ConfigError("radial_bins must be at least 4");
    if (cartesian_bins < 2) throw ConfigError("cartesian_bins must be at least 2");
    if (histogram_pmax < 0.0) throw ConfigError("histogram_pmax must be nonnegative");
}

FourVector drift_closed_form(const FourVector& p, const BathParams& bath) {
    require_timelike(p);
    bath.validate(false);
    const double s = dot(p, p);
    const double y = dot(bath.w, p);
    const double sum = bath.epsilon + bath.pi_eps;
    const FourVector pw = bath.w - p * (y / s);

    // Divergence of the diffusion tensor, worked out once from the
    // contracted form; the finite-difference route in `diffusion` is
    // the oracle for this expression.
    FourVector out = pw * (2.0 * sum * y / s) +
                     p * ((sum * (1.0 + 2.0 * y * y / s) - 6.0 * bath.pi_eps) / s);
    const double fric = bath.friction_sign == FrictionSign::flux_zero
                            ? bath.beta * (bath.epsilon - bath.pi_eps)
                            : -bath.lambda;
    return out + pw * fric;
}

NoiseChannels noise_channels(const FourVector& p, const BathParams& bath) {
    require_timelike(p);
    bath.validate(false);
    const double s = dot(p, p);
    const double y = dot(bath.w, p);
    const double lam_par = bath.epsilon - bath.pi_eps;
    const double lam_perp = (bath.epsilon + bath.pi_eps) * y * y / s - 2.0 * bath.pi_eps;
    const FourVector u = p * (1.0 / std::sqrt(s));

    // Channel frame: along the projected bath velocity when it exists.
    // Near the comoving axis that direction comes out of a cancelling
    // subtraction, but there the two weights coincide to the same
    // order, so any orthonormal triad orthogonal to p serves; switch
    // well before the cancellation can tilt the frame.
    const FourVector pw = bath.w - p * (y / s);
    const double q2 = -dot(pw, pw);
    const FourVector n1 = q2 > 1e-12 * (y * y / s) ? pw * (1.0 / std::sqrt(q2))
                                                   : spacelike_unit_orthogonal(u);
    FourVector e2, e3;
    transverse_pair(u, n1, e2, e3);

    NoiseChannels nc;
    const auto push = [&nc](double lam, const FourVector& dir) {
        if (lam > 0.0) nc.columns[static_cast<std::size_t>(nc.rank++)] = dir * std::sqrt(2.0 * lam);
    };
    push(lam_par, n1);
    push(lam_perp, e2);
    push(lam_perp, e3);
    return nc;
}

PhasePoint em_step(const PhasePoint& state, const BathParams& bath, double ds,
                   const std::array<double, 3>& noise, Projection projection,
                   Advection advection) {
    state.validate();
    bath.validate(false);
    if (!(ds > 0.0)) throw ConfigError("em_step needs ds > 0");

    const FourVector drift = drift_closed_form(state.p, bath);
    const NoiseChannels nc = noise_channels(state.p, bath);
    const double amp = std::sqrt(bath.tau_c * ds);

    FourVector pn = state.p + drift * (bath.tau_c * ds);
    for (int l = 0; l < nc.rank; ++l)
        pn += nc.columns[static_cast<std::size_t>(l)] * (amp * noise[static_cast<std::size_t>(l)]);

    PhasePoint out;
    out.x = state.x + (advection == Advection::velocity
                           ? state.p * (ds / std::sqrt(dot(state.p, state.p)))
                           : state.p * ds);
    out.mass = state.mass;

    if (!(dot(pn, pn) > 0.0))
        throw InvariantViolation("momentum update left the forward cone; halve the step");

    switch (projection) {
        case Projection::resolve_p0: {
            const double sp2 = pn[1] * pn[1] + pn[2] * pn[2] + pn[3] * pn[3];
            const double p0 = std::sqrt(state.mass * state.mass + sp2);
            out.p = FourVector{state.p[0] < 0.0 ? -p0 : p0, pn[1], pn[2], pn[3]};
            break;
        }
        case Projection::rescale_spatial: {
            const double sp2 = pn[1] * pn[1] + pn[2] * pn[2] + pn[3] * pn[3];
            const double target = pn[0] * pn[0] - state.mass * state.mass;
            if (target < 0.0 || (target > 0.0 && sp2 == 0.0))
                throw InvariantViolation(
                    "no spatial rescaling reaches the mass shell; halve the step");
            const double f = sp2 > 0.0 ? std::sqrt(target / sp2) : 0.0;
            out.p = FourVector{pn[0], f * pn[1], f * pn[2], f * pn[3]};
            break;
        }
        case Projection::off:
            out.p = pn;
            out.mass = std::sqrt(dot(pn, pn));
            break;
    }
    return out;
}

double RadialHistogram::total() const {
    return std::accumulate(counts.begin(), counts.end(), 0.0);
}

InitialDistribution InitialDistribution::at(const PhasePoint& start) {
    InitialDistribution d;
    d.kind = Kind::delta;
    d.point = start;
    return d;
}

InitialDistribution InitialDistribution::thermal(double mass, double beta, int energy_power) {
    InitialDistribution d;
    d.kind = Kind::thermal;
    d.mass = mass;
    d.beta = beta;
    d.energy_power = energy_power;
    return d;
}

EnsembleResult run_ensemble(const SimConfig& config, const BathParams& bath,
                            const InitialDistribution& init) {
    config.validate();
    bath.validate(false);
    const EnsembleSetup setup(init, bath);

    const std::vector<std::int64_t> rec = record_steps(config);
    const int n_rec = static_cast<int>(rec.size());
    const double pmax =
        config.histogram_pmax > 0.0 ? config.histogram_pmax : auto_pmax(init, bath, setup);
    const int nrad = config.radial_bins;
    const int ncart = config.cartesian_bins;

    struct ChunkAcc {
        std::vector<double> rec;     // per record: kScalars sums then kScalars sum-squares
        std::vector<double> rec_max; // per record: max |shell drift|
        std::vector<double> radial;
        std::vector<double> cart;
        double radial_of = 0.0;
        double cart_of = 0.0;
        std::int64_t rejected = 0;
        int max_halvings = 0;
    };
    ChunkAcc zero;
    zero.rec.assign(static_cast<std::size_t>(n_rec) * 2 * kScalars, 0.0);
    zero.rec_max.assign(static_cast<std::size_t>(n_rec), 0.0);
    zero.radial.assign(static_cast<std::size_t>(nrad), 0.0);
    zero.cart.assign(static_cast<std::size_t>(ncart) * ncart * ncart, 0.0);

    const auto per_chunk = [&](std::int64_t b, std::int64_t e, ChunkAcc& acc) {
        for (std::int64_t r = b; r < e; ++r) {
            PhasePoint st = setup.initial_state(config.seed, r);
            const double m0sq = st.mass * st.mass;
            StepCounters counters;
            int ri = 0;

            const auto record = [&](const PhasePoint& sp) {
                const FourVector pb = setup.bath_frame(sp.p);
                const double drift = (dot(sp.p, sp.p) - m0sq) / m0sq;
                const double scal[kScalars] = {sp.x[0], pb[0],  pb[1], pb[2],
                                               pb[3],   pb.spatial_norm(), drift};
                double* row = &acc.rec[static_cast<std::size_t>(ri) * 2 * kScalars];
                for (int k = 0; k < kScalars; ++k) {
                    row[k] += scal[k];
                    row[kScalars + k] += scal[k] * scal[k];
                }
                acc.rec_max[static_cast<std::size_t>(ri)] =
                    std::max(acc.rec_max[static_cast<std::size_t>(ri)], std::abs(drift));
                ++ri;
            };

            record(st);
            for (std::int64_t t = 1; t <= config.steps; ++t) {
                st = advance_node(st, bath, config.dstep, config, r,
                                  static_cast<std::uint32_t>(t), 1, 0, counters);
                if (t == rec[static_cast<std::size_t>(ri)]) record(st);
            }

            const FourVector pb = setup.bath_frame(st.p);
            const double rr = pb.spatial_norm();
            if (rr < pmax)
                acc.radial[static_cast<std::size_t>(rr / pmax * nrad)] += 1.0;
            else
                acc.radial_of += 1.0;
            bool inside = true;
            int idx = 0;
            for (int axdim = 3; axdim >= 1; --axdim) {
                const double cthis = (pb[axdim] + pmax) / (2.0 * pmax);
                if (!(cthis >= 0.0) || cthis >= 1.0) {
                    inside = false;
                    break;
                }
                idx = idx * ncart + static_cast<int>(cthis * ncart);
            }
            if (inside)
                acc.cart[static_cast<std::size_t>(idx)] += 1.0;
            else
                acc.cart_of += 1.0;

            acc.rejected += counters.rejected;
            acc.max_halvings = std::max(acc.max_halvings, counters.max_halvings);
        }
    };
    const auto merge = [](ChunkAcc& into, const ChunkAcc& part) {
        for (std::size_t i = 0; i < into.rec.size(); ++i) into.rec[i] += part.rec[i];
        for (std::size_t i = 0; i < into.rec_max.size(); ++i)
            into.rec_max[i] = std::max(into.rec_max[i], part.rec_max[i]);
        for (std::size_t i = 0; i < into.radial.size(); ++i) into.radial[i] += part.radial[i];
        for (std::size_t i = 0; i < into.cart.size(); ++i) into.cart[i] += part.cart[i];
        into.radial_of += part.radial_of;
        into.cart_of += part.cart_of;
        into.rejected += part.rejected;
        into.max_halvings = std::max(into.max_halvings, part.max_halvings);
    };

    const std::int64_t chunk = (config.ensemble + 255) / 256;
    const ChunkAcc total = chunked_reduce<ChunkAcc>(config.ensemble, chunk, config.threads,
                                                    zero, per_chunk, merge);

    EnsembleResult out;
    out.config = config;
    out.bath = bath;
    out.trajectories = config.ensemble;
    out.rejected_steps = total.rejected;
    out.max_halvings = total.max_halvings;

    const double n = static_cast<double>(config.ensemble);
    out.moments.resize(static_cast<std::size_t>(n_rec));
    for (int i = 0; i < n_rec; ++i) {
        MomentRecord& mr = out.moments[static_cast<std::size_t>(i)];
        mr.step = rec[static_cast<std::size_t>(i)];
        mr.s = static_cast<double>(mr.step) * config.dstep;
        const double* row = &total.rec[static_cast<std::size_t>(i) * 2 * kScalars];
        double mean[kScalars], se[kScalars];
        for (int k = 0; k < kScalars; ++k) {
            mean[k] = row[k] / n;
            const double var = n > 1.5 ? (row[kScalars + k] - n * mean[k] * mean[k]) / (n - 1.0)
                                       : 0.0;
            se[k] = var > 0.0 ? std::sqrt(var / n) : 0.0;
        }
        mr.mean_x0 = mean[0];
        for (int k = 0; k < 4; ++k) {
            mr.mean_p[static_cast<std::size_t>(k)] = mean[k + 1];
            mr.se_p[static_cast<std::size_t>(k)] = se[k + 1];
        }
        mr.mean_abs_p = mean[5];
        mr.se_abs_p = se[5];
        mr.mean_shell_drift = mean[6];
        mr.max_shell_drift = total.rec_max[static_cast<std::size_t>(i)];
    }

    out.radial.p_max = pmax;
    out.radial.counts = total.radial;
    out.radial.overflow = total.radial_of;
    out.cartesian.p_max = pmax;
    out.cartesian.bins = ncart;
    out.cartesian.counts = total.cart;
    out.cartesian.overflow = total.cart_of;

    if (total.radial_of > 1e-3 * n)
        out.warnings.push_back("histogram overflow fraction " +
                               std::to_string(total.radial_of / n) +
                               "; widen histogram_pmax");
    if (total.rejected > 0)
        out.warnings.push_back(std::to_string(total.rejected) +
                               " step attempts were rejected and halved");
    return out;
}

std::vector<TrajectorySample> simulate_trajectory(const SimConfig& config,
                                                  const BathParams& bath,
                                                  const InitialDistribution& init,
                                                  std::int64_t index) {
    config.validate();
    bath.validate(false);
    if (index < 0) throw ConfigError("trajectory index must be nonnegative");
    const EnsembleSetup setup(init, bath);
    const std::vector<std::int64_t> rec = record_steps(config);

    std::vector<TrajectorySample> out;
    out.reserve(rec.size());
    PhasePoint st = setup.initial_state(config.seed, index);
    StepCounters counters;
    std::size_t ri = 0;
    out.push_back(TrajectorySample{0.0, 0, st});
    ++ri;
    for (std::int64_t t = 1; t <= config.steps; ++t) {
        st = advance_node(st, bath, config.dstep, config, index,
                          static_cast<std::uint32_t>(t), 1, 0, counters);
        if (t == rec[ri]) {
            out.push_back(TrajectorySample{static_cast<double>(t) * config.dstep, t, st});
            ++ri;
        }
    }
    return out;
}

namespace {

/// Normalized per-bin masses of the candidate family at this beta;
/// 3-point Simpson per bin. Returns false when the family carries no
/// mass on the histogram support.
bool model_masses(double pmax, int nb, double m, double beta, int energy_power,
                  std::vector<double>& out) {
    out.assign(static_cast<std::size_t>(nb), 0.0);
    const double dr = pmax / nb;
    double tot = 0.0;
    for (int i = 0; i < nb; ++i) {
        const double a = i * dr;
        const double v = dr / 6.0 *
                         (shell_density(a, m, beta, energy_power) +
                          4.0 * shell_density(a + 0.5 * dr, m, beta, energy_power) +
                          shell_density(a + dr, m, beta, energy_power));
        out[static_cast<std::size_t>(i)] = v;
        tot += v;
    }
    if (!(tot > 0.0)) return false;
    for (double& v : out) v /= tot;
    return true;
}

} // namespace

StationarityReport stationarity_distance(const RadialHistogram& hist, double mass,
                                         const BathParams& bath) {
    if (!(mass > 0.0)) throw ConfigError("stationarity fit needs a positive mass");
    bath.validate(false);
    if (hist.counts.empty() || !(hist.p_max > 0.0) || !(hist.total() > 0.0))
        throw ConfigError("stationarity fit needs a populated histogram");

    const double total = hist.total();
    const int nb = static_cast<int>(hist.counts.size());
    std::vector<double> q(hist.counts.size());
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = hist.counts[i] / total;

    StationarityReport rep;
    rep.effective_samples = total;
    rep.low_confidence = total < 1e4;

    std::vector<double> model;
    const auto l1_at = [&](double beta, int energy_power) {
        if (!model_masses(hist.p_max, nb, mass, beta, energy_power, model)) return 2.0;
        double d = 0.0;
        for (int i = 0; i < nb; ++i) d += std::abs(q[static_cast<std::size_t>(i)] -
                                                   model[static_cast<std::size_t>(i)]);
        return d;
    };

    const auto fit = [&](int energy_power, double& dist, double& beta_fit) {
        const double lo = bath.beta / 8.0;
        const double hi = bath.beta * 8.0;
        const double gr = 0.6180339887498949;
        double a = lo, b = hi;
        double c = b - gr * (b - a), d = a + gr * (b - a);
        double fc = l1_at(c, energy_power), fd = l1_at(d, energy_power);
        for (int it = 0; it < 90; ++it) {
            if (fc < fd) {
                b = d;
                d = c;
                fd = fc;
                c = b - gr * (b - a);
                fc = l1_at(c, energy_power);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + gr * (b - a);
                fd = l1_at(d, energy_power);
            }
        }
        beta_fit = 0.5 * (a + b);
        dist = l1_at(beta_fit, energy_power);
        if (beta_fit < lo * 1.02 || beta_fit > hi / 1.02) rep.bracket_edge = true;
    };
    fit(1, rep.distance, rep.beta_fit);
    fit(0, rep.distance_d3p, rep.beta_fit_d3p);
    return rep;
}

} // namespace rtd
