#include "rtd/randomfield.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>

#include <Eigen/Dense>

#include "rtd/diffusion.hpp"
#include "rtd/errors.hpp"
#include "rtd/kernels/philox.hpp"
#include "rtd/parallel.hpp"

namespace rtd {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

// Packed component index of the ordered pair (a, b), a < b, in the
// kernel layout 01, 02, 03, 12, 13, 23.
constexpr int kPairIndex[4][4] = {
    {-1, 0, 1, 2}, {0, -1, 3, 4}, {1, 3, -1, 5}, {2, 4, 5, -1}};

void require_unit_timelike(const FourVector& w, const char* who) {
    if (!(w[0] > 0.0) || std::abs(dot(w, w) - 1.0) > 1e-12)
        throw FrameError(std::string(who) + ": w must be future-pointing with w.w = 1");
}

double eta_low(int a, int b) {
    if (a != b) return 0.0;
    return a == 0 ? 1.0 : -1.0;
}

// Draws |k| from the tabulated radial mass: locate the bin holding the
// target cumulative mass, then solve the per-bin quadratic (the density
// is linear inside a bin). The stable root form works for any sign of
// the slope and degrades gracefully to the linear solution.
double invert_radial_cdf(const std::vector<double>& kk, const std::vector<double>& vv,
                         const std::vector<double>& cc, double u) {
    const double target = u * cc.back();
    auto it = std::upper_bound(cc.begin(), cc.end(), target);
    std::size_t j = (it == cc.begin()) ? 0 : static_cast<std::size_t>(it - cc.begin()) - 1;
    if (j >= cc.size() - 1) j = cc.size() - 2;
    const double dk = kk[j + 1] - kk[j];
    const double v0 = vv[j];
    const double slope_half = 0.5 * (vv[j + 1] - vv[j]) / dk;
    const double rem = std::max(0.0, target - cc[j]);
    const double disc = std::max(0.0, v0 * v0 + 4.0 * slope_half * rem);
    const double den = v0 + std::sqrt(disc);
    const double xloc = (den > 0.0) ? std::clamp(2.0 * rem / den, 0.0, dk) : 0.0;
    return kk[j] + xloc;
}

struct PhaseDeriv {
    FourVector dx, dp;
};

PhaseDeriv lorentz_flow(const FieldRealization& f, const FourVector& x, const FourVector& p) {
    const FourVector u = p * (1.0 / std::sqrt(dot(p, p)));
    const Tensor2 F = field_strength(f, x);
    FourVector force_low;
    for (int mu = 0; mu < 4; ++mu) {
        double s = 0.0;
        for (int nu = 0; nu < 4; ++nu) s += F(mu, nu) * u[nu];
        force_low[mu] = s;
    }
    return {u, raise(force_low)};
}

void rk4_step(const FieldRealization& f, FourVector& x, FourVector& p, double dt) {
    const PhaseDeriv k1 = lorentz_flow(f, x, p);
    const PhaseDeriv k2 = lorentz_flow(f, x + k1.dx * (0.5 * dt), p + k1.dp * (0.5 * dt));
    const PhaseDeriv k3 = lorentz_flow(f, x + k2.dx * (0.5 * dt), p + k2.dp * (0.5 * dt));
    const PhaseDeriv k4 = lorentz_flow(f, x + k3.dx * dt, p + k3.dp * dt);
    const double c = dt / 6.0;
    x += (k1.dx + (k2.dx + k3.dx) * 2.0 + k4.dx) * c;
    p += (k1.dp + (k2.dp + k3.dp) * 2.0 + k4.dp) * c;
}

// Force of one field evaluation on the unit worldline tangent, from the
// packed six-component form straight to a contravariant vector.
FourVector force_from_packed(const double fc[kFieldComponents], const FourVector& u) {
    FourVector low;
    for (int c = 0; c < kFieldComponents; ++c) {
        const int a = kComponentRow[c], b = kComponentCol[c];
        low[a] += fc[c] * u[b];
        low[b] -= fc[c] * u[a];
    }
    return raise(low);
}

// The four tensor structures an isotropic coincident covariance can
// carry, all indices lowered. The first is the metric-pair structure
// the wedge construction produces; the others are the candidates the
// fit should reject.
double s1_structure(const FourVector& kl, int m, int n, int s, int r) {
    return eta_low(m, s) * kl[n] * kl[r] - eta_low(m, r) * kl[n] * kl[s] +
           eta_low(n, r) * kl[m] * kl[s] - eta_low(n, s) * kl[m] * kl[r];
}

double s2_structure(const FourVector& wl, const FourVector& kl, int m, int n, int s, int r) {
    return eta_low(m, s) * wl[n] * kl[r] - eta_low(m, r) * wl[n] * kl[s] +
           eta_low(n, r) * wl[m] * kl[s] - eta_low(n, s) * wl[m] * kl[r];
}

double s3_structure(const FourVector& wl, int m, int n, int s, int r) {
    return eta_low(m, s) * wl[n] * wl[r] - eta_low(m, r) * wl[n] * wl[s] +
           eta_low(n, r) * wl[m] * wl[s] - eta_low(n, s) * wl[m] * wl[r];
}

int levi_civita(int a, int b, int c, int d) {
    const int p[4] = {a, b, c, d};
    int sign = 1;
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j) {
            if (p[i] == p[j]) return 0;
            if (p[i] > p[j]) sign = -sign;
        }
    return sign;
}

} // namespace

void FieldRealization::perturb_coefficient(std::size_t mode, int component, double d_cos,
                                           double d_sin) {
    if (mode >= pack_.size() || component < 0 || component >= kFieldComponents)
        throw ConfigError("perturb_coefficient: mode or component out of range");
    pack_.bc[component][mode] += d_cos;
    pack_.bs[component][mode] += d_sin;
}

ModeSampler::ModeSampler(const SpectralDensity& g, int n_modes) : g_(g), n_(n_modes) {
    if (n_ < 1) throw ConfigError("ModeSampler: need at least one mode");

    if (g_.has_continuum()) {
        // The sampled continuum is the piecewise-linear interpolant of
        // kappa^2 g on a uniform grid; its own trapezoid mass normalizes
        // the weights, so the sampled measure is exactly normalized and
        // the interpolation bias is second order in the grid spacing.
        const double cut = g_.radial_cutoff();
        const int nodes = 4097;
        cdf_k_.resize(nodes);
        pdf_v_.resize(nodes);
        cdf_c_.assign(nodes, 0.0);
        for (int i = 0; i < nodes; ++i) {
            const double k = cut * static_cast<double>(i) / (nodes - 1);
            const double kq = std::max(k, cut * 1e-10); // keep a finite k -> 0 limit
            double v = kq * kq * g_.radial_density(kq);
            if (!std::isfinite(v) || v < 0.0) v = 0.0;
            cdf_k_[i] = k;
            pdf_v_[i] = v;
        }
        for (int i = 1; i < nodes; ++i)
            cdf_c_[i] =
                cdf_c_[i - 1] + 0.5 * (pdf_v_[i - 1] + pdf_v_[i]) * (cdf_k_[i] - cdf_k_[i - 1]);
        z_cont_ = 4.0 * kPi * cdf_c_.back();
    }

    z_total_ = z_cont_;
    for (const ShellAtom& a : g_.atoms()) {
        z_total_ += a.weight;
        atom_cum_.push_back(z_total_);
    }
    if (!(z_total_ > 0.0))
        throw InvariantViolation("ModeSampler: spectral density carries zero total mass");

    const FourVector& ax = g_.axis();
    if (ax[1] != 0.0 || ax[2] != 0.0 || ax[3] != 0.0) {
        boosted_ = true;
        lab_from_axis_ = Boost::to_rest_of(ax).inverse();
    }
}

FieldRealization ModeSampler::sample(std::uint64_t seed, std::uint64_t realization) const {
    FieldRealization out;
    out.seed_ = seed;
    out.index_ = realization;
    out.modes_.reserve(static_cast<std::size_t>(n_));
    out.pack_.reserve(static_cast<std::size_t>(n_));

    const double omega = z_total_ / static_cast<double>(n_);
    const double sqw = std::sqrt(omega);

    for (int m = 0; m < n_; ++m) {
        const std::uint32_t ms = static_cast<std::uint32_t>(m);
        const auto pick = Philox::uniform2(seed, realization, ms, 0);
        const auto ang = Philox::uniform2(seed, realization, ms, 1);

        // Component choice: continuum by radial inverse CDF, else the
        // atom holding the target cumulative mass.
        double s = 0.0, kmag = 0.0, k0a = 0.0;
        const double target = pick[0] * z_total_;
        if (target < z_cont_ || atom_cum_.empty()) {
            kmag = invert_radial_cdf(cdf_k_, pdf_v_, cdf_c_, pick[1]);
            k0a = kmag;
        } else {
            auto it = std::upper_bound(atom_cum_.begin(), atom_cum_.end(), target);
            std::size_t j = static_cast<std::size_t>(it - atom_cum_.begin());
            if (j >= atom_cum_.size()) j = atom_cum_.size() - 1;
            const ShellAtom& a = g_.atoms()[j];
            s = a.s;
            k0a = a.sigma;
            kmag = std::sqrt(std::max(0.0, a.sigma * a.sigma - a.s));
        }

        // Isotropic direction in the axis frame.
        const double ct = 2.0 * ang[0] - 1.0;
        const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
        const double ph = kTwoPi * ang[1];
        const double nh[3] = {st * std::cos(ph), st * std::sin(ph), ct};
        FourVector k_ax{k0a, kmag * nh[0], kmag * nh[1], kmag * nh[2]};

        // Transverse spatial pair perpendicular to the direction, seeded
        // from the coordinate axis least aligned with it.
        int hmin = 0;
        for (int i = 1; i < 3; ++i)
            if (std::abs(nh[i]) < std::abs(nh[hmin])) hmin = i;
        double h[3] = {0.0, 0.0, 0.0};
        h[hmin] = 1.0;
        double e1[3] = {h[1] * nh[2] - h[2] * nh[1], h[2] * nh[0] - h[0] * nh[2],
                        h[0] * nh[1] - h[1] * nh[0]};
        const double e1n = std::sqrt(e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]);
        for (double& v : e1) v /= e1n;
        const double e2[3] = {nh[1] * e1[2] - nh[2] * e1[1], nh[2] * e1[0] - nh[0] * e1[2],
                              nh[0] * e1[1] - nh[1] * e1[0]};

        const int npol = (s > 0.0) ? 3 : 2;
        std::array<FourVector, 3> e_ax{};
        e_ax[0] = FourVector{0.0, e1[0], e1[1], e1[2]};
        e_ax[1] = FourVector{0.0, e2[0], e2[1], e2[2]};
        if (npol == 3) {
            // Longitudinal polarization of a massive shell: unit
            // spacelike, orthogonal to k, aligned with the direction.
            const double rs = std::sqrt(s);
            e_ax[2] = FourVector{kmag / rs, (k0a / rs) * nh[0], (k0a / rs) * nh[1],
                                 (k0a / rs) * nh[2]};
        }

        FieldMode md;
        md.k = boosted_ ? lab_from_axis_.apply(k_ax) : k_ax;
        md.npol = npol;
        md.weight = omega;

        const FourVector kl = lower(md.k);
        double bc[kFieldComponents] = {0, 0, 0, 0, 0, 0};
        double bs[kFieldComponents] = {0, 0, 0, 0, 0, 0};
        for (int L = 0; L < npol; ++L) {
            md.e[L] = boosted_ ? lab_from_axis_.apply(e_ax[L]) : e_ax[L];
            const auto nr = Philox::normal2(seed, realization, ms, 2 + static_cast<std::uint32_t>(L));
            md.c_re[L] = 0.5 * nr[0];
            md.c_im[L] = 0.5 * nr[1];
            const FourVector el = lower(md.e[L]);
            for (int c = 0; c < kFieldComponents; ++c) {
                const int a = kComponentRow[c], b = kComponentCol[c];
                const double wedge = kl[a] * el[b] - kl[b] * el[a];
                bc[c] -= sqw * nr[1] * wedge;
                bs[c] -= sqw * nr[0] * wedge;
            }
        }

        const double karr[4] = {md.k[0], md.k[1], md.k[2], md.k[3]};
        out.pack_.push_mode(karr, bc, bs);
        out.modes_.push_back(md);

        double csum = 0.0;
        for (int c = 0; c < kFieldComponents; ++c) csum += std::abs(bc[c]) + std::abs(bs[c]);
        out.coeff_scale_ += csum;
        out.deriv_scale_ += csum * md.k.max_abs();
    }
    return out;
}

FieldRealization sample_modes(const SpectralDensity& g, int n_modes, std::uint64_t seed,
                              std::uint64_t realization) {
    return ModeSampler(g, n_modes).sample(seed, realization);
}

Tensor2 field_strength(const FieldRealization& f, const FourVector& x) {
    const double xx[4] = {x[0], x[1], x[2], x[3]};
    double fc[kFieldComponents];
    field_sum(f.view(), xx, fc);
    Tensor2 F;
    for (int c = 0; c < kFieldComponents; ++c) {
        F(kComponentRow[c], kComponentCol[c]) = fc[c];
        F(kComponentCol[c], kComponentRow[c]) = -fc[c];
    }
    return F;
}

double bianchi_residual(const FieldRealization& f, const FourVector& x) {
    static constexpr int kTriples[4][3] = {{1, 2, 3}, {0, 2, 3}, {0, 1, 3}, {0, 1, 2}};
    const ModeView v = f.view();
    double acc[4] = {0.0, 0.0, 0.0, 0.0};
    for (std::size_t m = 0; m < v.n; ++m) {
        const double phi =
            v.k0[m] * x[0] - v.kx[m] * x[1] - v.ky[m] * x[2] - v.kz[m] * x[3];
        const double cp = std::cos(phi), sp = std::sin(phi);
        double d[kFieldComponents];
        for (int c = 0; c < kFieldComponents; ++c) d[c] = -v.bc[c][m] * sp + v.bs[c][m] * cp;
        const double klow[4] = {v.k0[m], -v.kx[m], -v.ky[m], -v.kz[m]};
        for (int t = 0; t < 4; ++t) {
            const int a = kTriples[t][0], b = kTriples[t][1], c3 = kTriples[t][2];
            acc[t] += d[kPairIndex[b][c3]] * klow[a] - d[kPairIndex[a][c3]] * klow[b] +
                      d[kPairIndex[a][b]] * klow[c3];
        }
    }
    double r = 0.0;
    for (double t : acc) r = std::max(r, std::abs(t));
    return r;
}

Trajectory liouville_trajectory(const FieldRealization& f, const FourVector& x0,
                                const FourVector& p0, double tau_max, int steps) {
    if (steps < 1) throw ConfigError("liouville_trajectory: steps must be >= 1");
    if (!is_future_timelike(p0))
        throw InvariantViolation("liouville_trajectory: initial momentum must be future timelike");

    Trajectory tr;
    tr.x.reserve(static_cast<std::size_t>(steps) + 1);
    tr.p.reserve(static_cast<std::size_t>(steps) + 1);
    tr.x.push_back(x0);
    tr.p.push_back(p0);

    const double pp0 = dot(p0, p0);
    const double dt = tau_max / steps;
    FourVector x = x0, p = p0;
    double prev = pp0;
    for (int i = 0; i < steps; ++i) {
        rk4_step(f, x, p, dt);
        const double pp = dot(p, p);
        if (!(pp > 0.0))
            throw InvariantViolation(
                "liouville_trajectory: momentum left the timelike cone; refine the step");
        tr.mass2_rel_drift = std::max(tr.mass2_rel_drift, std::abs(pp - pp0) / pp0);
        tr.per_step_rel_drift = std::max(tr.per_step_rel_drift, std::abs(pp - prev) / pp0);
        prev = pp;
        tr.x.push_back(x);
        tr.p.push_back(p);
    }
    tr.refine = tr.per_step_rel_drift > 1e-6;
    return tr;
}

KuboEstimate kubo_alpha_estimate(const SpectralDensity& g, const FourVector& p,
                                 const FourVector& w, double tau, int ensembles,
                                 std::uint64_t seed, bool allow_large_tau, int n_modes,
                                 int rk_steps, int threads) {
    if (ensembles < 1) throw ConfigError("kubo_alpha_estimate: need at least one realization");
    if (rk_steps < 1) throw ConfigError("kubo_alpha_estimate: need at least one integrator step");
    if (!(tau > 0.0)) throw ConfigError("kubo_alpha_estimate: tau must be positive");
    if (!is_future_timelike(p))
        throw InvariantViolation("kubo_alpha_estimate: p must be future timelike");
    require_unit_timelike(w, "kubo_alpha_estimate");

    KuboEstimate out;
    out.tau = tau;
    out.realizations = ensembles;
    out.n_modes = n_modes;

    if (!(total_weight(g).value > 0.0)) return out; // null field, increments vanish

    // Correlation time seen by the trajectory: the axis-frame estimate
    // shortened by the Doppler factor of the motion through the bath.
    const double mass = std::sqrt(dot(p, p));
    FourVector pax = p;
    const FourVector& ax = g.axis();
    if (ax[1] != 0.0 || ax[2] != 0.0 || ax[3] != 0.0) pax = Boost::to_rest_of(ax).apply(p);
    const FourVector uax = pax * (1.0 / mass);
    out.tau_corr = correlation_time_estimate(g) / (uax[0] + uax.spatial_norm());
    if (!allow_large_tau && tau > out.tau_corr / 10.0)
        throw ConfigError(
            "kubo_alpha_estimate: tau exceeds a tenth of the correlation time; shrink tau "
            "or pass allow_large_tau to accept the quadratic-window bias");

    const ModeSampler sampler(g, n_modes);
    struct Acc {
        std::array<double, 16> s{}, s2{};
    };
    const double dt = tau / rk_steps;
    const Acc total = chunked_reduce<Acc>(
        ensembles, 1024, threads, Acc{},
        [&](std::int64_t b, std::int64_t e, Acc& acc) {
            for (std::int64_t r = b; r < e; ++r) {
                const FieldRealization f = sampler.sample(seed, static_cast<std::uint64_t>(r));
                FourVector x{0.0, 0.0, 0.0, 0.0};
                FourVector q = p;
                for (int i = 0; i < rk_steps; ++i) rk4_step(f, x, q, dt);
                const FourVector dp = q - p;
                for (int mu = 0; mu < 4; ++mu)
                    for (int nu = 0; nu < 4; ++nu) {
                        const double v = dp[mu] * dp[nu] / (tau * tau);
                        acc.s[4 * mu + nu] += v;
                        acc.s2[4 * mu + nu] += v * v;
                    }
            }
        },
        [](Acc& into, const Acc& part) {
            for (int i = 0; i < 16; ++i) {
                into.s[i] += part.s[i];
                into.s2[i] += part.s2[i];
            }
        });

    const double n = static_cast<double>(ensembles);
    for (int mu = 0; mu < 4; ++mu)
        for (int nu = 0; nu < 4; ++nu) {
            const int i = 4 * mu + nu;
            const double mean = total.s[i] / n;
            const double var = std::max(0.0, total.s2[i] / n - mean * mean);
            out.value(mu, nu) = mean;
            out.std_error(mu, nu) = std::sqrt(var / n);
        }
    return out;
}

KuboTimeIntegrated kubo_alpha_time_integrated(const SpectralDensity& g, const FourVector& p,
                                              const FourVector& w, double s_max, int ensembles,
                                              std::uint64_t seed, int n_modes, int s_points,
                                              int threads) {
    if (ensembles < 1)
        throw ConfigError("kubo_alpha_time_integrated: need at least one realization");
    if (!(s_max > 0.0)) throw ConfigError("kubo_alpha_time_integrated: s_max must be positive");
    if (s_points < 2) throw ConfigError("kubo_alpha_time_integrated: need at least two intervals");
    if (s_points % 2 != 0) ++s_points; // composite Simpson wants an even interval count
    if (!is_future_timelike(p))
        throw InvariantViolation("kubo_alpha_time_integrated: p must be future timelike");
    require_unit_timelike(w, "kubo_alpha_time_integrated");

    KuboTimeIntegrated out;
    out.s_max = s_max;
    out.realizations = ensembles;
    if (!(total_weight(g).value > 0.0)) return out;

    const double mass = std::sqrt(dot(p, p));
    const FourVector u = p * (1.0 / mass);
    const int npts = s_points + 1;
    const double hstep = s_max / s_points;
    std::vector<double> wq(static_cast<std::size_t>(npts));
    for (int j = 0; j < npts; ++j) {
        double c = (j == 0 || j == npts - 1) ? 1.0 : (j % 2 == 1 ? 4.0 : 2.0);
        wq[static_cast<std::size_t>(j)] = c * hstep / 3.0;
    }
    // Trapezoid weights over the last tenth of the window, for the
    // truncation-tail share.
    const int jtail = (9 * s_points) / 10;
    std::vector<double> wt(static_cast<std::size_t>(npts), 0.0);
    for (int j = jtail; j < npts; ++j)
        wt[static_cast<std::size_t>(j)] = (j == jtail || j == npts - 1) ? 0.5 * hstep : hstep;

    const ModeSampler sampler(g, n_modes);
    struct Acc {
        std::array<double, 16> s{}, s2{}, tail{};
    };
    const Acc total = chunked_reduce<Acc>(
        ensembles, 256, threads, Acc{},
        [&](std::int64_t b, std::int64_t e, Acc& acc) {
            std::array<double, 16> integ{}, tl{};
            for (std::int64_t r = b; r < e; ++r) {
                const FieldRealization f = sampler.sample(seed, static_cast<std::uint64_t>(r));
                const ModeView view = f.view();
                integ.fill(0.0);
                tl.fill(0.0);
                FourVector v0;
                for (int j = 0; j < npts; ++j) {
                    const double sj = hstep * j;
                    const FourVector xj = u * (-sj);
                    const double xx[4] = {xj[0], xj[1], xj[2], xj[3]};
                    double fc[kFieldComponents];
                    field_sum(view, xx, fc);
                    const FourVector vj = force_from_packed(fc, u);
                    if (j == 0) v0 = vj;
                    const double wj = wq[static_cast<std::size_t>(j)];
                    const double tj = wt[static_cast<std::size_t>(j)];
                    for (int mu = 0; mu < 4; ++mu)
                        for (int nu = 0; nu < 4; ++nu) {
                            const double prod = v0[mu] * vj[nu];
                            integ[4 * mu + nu] += wj * prod;
                            tl[4 * mu + nu] += tj * prod;
                        }
                }
                for (int mu = 0; mu < 4; ++mu)
                    for (int nu = 0; nu < 4; ++nu) {
                        const int ij = 4 * mu + nu;
                        const double sym = 0.5 * (integ[ij] + integ[4 * nu + mu]);
                        acc.s[ij] += sym;
                        acc.s2[ij] += sym * sym;
                        acc.tail[ij] += 0.5 * (tl[ij] + tl[4 * nu + mu]);
                    }
            }
        },
        [](Acc& into, const Acc& part) {
            for (int i = 0; i < 16; ++i) {
                into.s[i] += part.s[i];
                into.s2[i] += part.s2[i];
                into.tail[i] += part.tail[i];
            }
        });

    const double n = static_cast<double>(ensembles);
    double norm_val = 0.0, norm_tail = 0.0;
    for (int mu = 0; mu < 4; ++mu)
        for (int nu = 0; nu < 4; ++nu) {
            const int i = 4 * mu + nu;
            const double mean = total.s[i] / n;
            const double var = std::max(0.0, total.s2[i] / n - mean * mean);
            out.value(mu, nu) = mean;
            out.std_error(mu, nu) = std::sqrt(var / n);
            norm_val += mean * mean;
            const double tmean = total.tail[i] / n;
            norm_tail += tmean * tmean;
        }
    out.tail_fraction = norm_val > 0.0 ? std::sqrt(norm_tail / norm_val) : 0.0;
    out.tail_warning = out.tail_fraction > 0.05;

    // Least-squares ratio against the analytic tensor at this phase
    // point; the integrated correlation collapses onto tau_c * alpha.
    const BathParams bath = bath_from_spectral(g, 1.0, w, 1.0);
    const Tensor2 aref = alpha(p, bath).alpha;
    double num = 0.0, den = 0.0;
    for (int mu = 0; mu < 4; ++mu)
        for (int nu = 0; nu < 4; ++nu) {
            num += out.value(mu, nu) * aref(mu, nu);
            den += aref(mu, nu) * aref(mu, nu);
        }
    out.tau_c = den > 0.0 ? num / den : 0.0;
    return out;
}

CovarianceEstimate covariance_estimate(const SpectralDensity& g, int realizations,
                                       std::uint64_t seed) {
    if (realizations < 1) throw ConfigError("covariance_estimate: need at least one realization");

    const ModeSampler sampler(g, 1);
    const FourVector wl = lower(g.axis());
    const double x0[4] = {0.0, 0.0, 0.0, 0.0};

    CovarianceEstimate out;
    out.samples = realizations;

    // Single-mode realizations keep the four candidate structures
    // identifiable: per draw the conditional mean of F_i F_j is exactly
    // the metric-pair structure of that mode's wave vector, so an
    // ordinary least-squares fit across draws has true coefficients
    // (a1, a0, a2, a3) = (1, 0, 0, 0). Standard errors come from the
    // spread of block-wise refits, which is robust to the correlation
    // between the 36 component pairs sharing one draw.
    const int nblocks = std::min(64, realizations);
    std::vector<Eigen::Matrix4d> bxx(static_cast<std::size_t>(nblocks), Eigen::Matrix4d::Zero());
    std::vector<Eigen::Vector4d> bxy(static_cast<std::size_t>(nblocks), Eigen::Vector4d::Zero());
    Eigen::Matrix4d xx = Eigen::Matrix4d::Zero();
    Eigen::Vector4d xy = Eigen::Vector4d::Zero();
    double dsum[kFieldComponents][kFieldComponents] = {};
    double dsum2[kFieldComponents][kFieldComponents] = {};

    for (int r = 0; r < realizations; ++r) {
        const FieldRealization f = sampler.sample(seed, static_cast<std::uint64_t>(r));
        double fc[kFieldComponents];
        field_sum(f.view(), x0, fc);
        const FieldMode& md = f.modes()[0];
        const FourVector kl = lower(md.k);
        const double om = md.weight;
        const int blk = static_cast<int>((static_cast<std::int64_t>(r) * nblocks) / realizations);

        for (int i = 0; i < kFieldComponents; ++i)
            for (int j = 0; j < kFieldComponents; ++j) {
                const double y = fc[i] * fc[j];
                dsum[i][j] += y;
                dsum2[i][j] += y * y;

                const int mu = kComponentRow[i], nu = kComponentCol[i];
                const int sg = kComponentRow[j], rh = kComponentCol[j];
                Eigen::Vector4d xrow;
                xrow << -om * s1_structure(kl, mu, nu, sg, rh),
                    om * levi_civita(mu, nu, sg, rh), om * s2_structure(wl, kl, mu, nu, sg, rh),
                    om * s3_structure(wl, mu, nu, sg, rh);
                xx.noalias() += xrow * xrow.transpose();
                xy.noalias() += xrow * y;
                bxx[static_cast<std::size_t>(blk)].noalias() += xrow * xrow.transpose();
                bxy[static_cast<std::size_t>(blk)].noalias() += xrow * y;
            }
    }

    const double n = static_cast<double>(realizations);
    for (int i = 0; i < kFieldComponents; ++i)
        for (int j = 0; j < kFieldComponents; ++j) {
            const double mean = dsum[i][j] / n;
            const double var = std::max(0.0, dsum2[i][j] / n - mean * mean);
            out.cov[i][j] = mean;
            out.err[i][j] = std::sqrt(var / n);
        }

    const Eigen::Vector4d theta = xx.ldlt().solve(xy);
    out.a1 = theta[0];
    out.a0 = theta[1];
    out.a2 = theta[2];
    out.a3 = theta[3];

    Eigen::Vector4d bmean = Eigen::Vector4d::Zero();
    std::vector<Eigen::Vector4d> btheta(static_cast<std::size_t>(nblocks));
    for (int b = 0; b < nblocks; ++b) {
        btheta[static_cast<std::size_t>(b)] =
            bxx[static_cast<std::size_t>(b)].ldlt().solve(bxy[static_cast<std::size_t>(b)]);
        bmean += btheta[static_cast<std::size_t>(b)];
    }
    bmean /= static_cast<double>(nblocks);
    Eigen::Vector4d bvar = Eigen::Vector4d::Zero();
    for (int b = 0; b < nblocks; ++b) {
        const Eigen::Vector4d d = btheta[static_cast<std::size_t>(b)] - bmean;
        bvar += d.cwiseProduct(d);
    }
    if (nblocks > 1) {
        bvar /= static_cast<double>(nblocks) * (nblocks - 1);
        out.se_a1 = std::sqrt(bvar[0]);
        out.se_a0 = std::sqrt(bvar[1]);
        out.se_a2 = std::sqrt(bvar[2]);
        out.se_a3 = std::sqrt(bvar[3]);
    }
    return out;
}

double covariance_target(const SpectralDensity& g, int mu, int nu, int sigma, int rho) {
    if (mu < 0 || mu > 3 || nu < 0 || nu > 3 || sigma < 0 || sigma > 3 || rho < 0 || rho > 3)
        throw ConfigError("covariance_target: indices must lie in 0..3");
    const FourVector w = g.axis();
    const double eps = energy_density(g, w).value;
    const double pe = pressure(g, w).value;
    const FourVector wl = lower(w);
    auto T = [&](int a, int b) {
        return eps * wl[a] * wl[b] - pe * (eta_low(a, b) - wl[a] * wl[b]);
    };
    return -eta_low(mu, sigma) * T(nu, rho) + eta_low(mu, rho) * T(nu, sigma) -
           eta_low(nu, rho) * T(sigma, mu) + eta_low(nu, sigma) * T(mu, rho);
}

} // namespace rtd
