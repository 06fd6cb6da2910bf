#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rtd/diffusion.hpp"
#include "rtd/errors.hpp"
#include "rtd/minkowski.hpp"
#include "rtd/sde.hpp"
#include "rtd/spectral.hpp"

using namespace rtd;

namespace {

const FourVector kRestW{1.0, 0.0, 0.0, 0.0};
const FourVector kOrigin{0.0, 0.0, 0.0, 0.0};

FourVector random_timelike(std::mt19937& rng, double mass_lo = 0.3, double mass_hi = 8.0,
                           double max_rapidity = 2.5) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    double m = mass_lo + uni(rng) * (mass_hi - mass_lo);
    double y = uni(rng) * max_rapidity;
    double ct = 2.0 * uni(rng) - 1.0;
    double ph = 2.0 * 3.14159265358979 * uni(rng);
    double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
    double pr = m * std::sinh(y);
    return {m * std::cosh(y), pr * st * std::cos(ph), pr * st * std::sin(ph), pr * ct};
}

FourVector random_unit_timelike(std::mt19937& rng, double max_rapidity = 1.5) {
    FourVector v = random_timelike(rng, 1.0, 1.0, max_rapidity);
    double n = std::sqrt(dot(v, v));
    return {v[0] / n, v[1] / n, v[2] / n, v[3] / n};
}

BathParams random_bath(std::mt19937& rng, const FourVector& w, bool strict = false) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    double eps = std::pow(10.0, 2.0 * uni(rng) - 1.0);
    double frac = strict ? 0.9 * uni(rng) : uni(rng);
    double pi = eps * frac;
    return BathParams::synthetic(0.5 + uni(rng), eps, pi, uni(rng), 0.2 + uni(rng), w);
}

std::array<double, 3> normal3(std::mt19937& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    return {n(rng), n(rng), n(rng)};
}

/// Composite Simpson rule with n even subintervals.
template <class F>
double simpson(F f, double a, double b, int n) {
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
    return s * h / 3.0;
}

/// Radial density of the stationary family, r^2 exp(-beta(E - m)) / E^k.
double shell_pdf(double r, double m, double beta, int k) {
    const double e = std::sqrt(m * m + r * r);
    const double v = r * r * std::exp(-beta * (e - m));
    return k == 1 ? v / e : v;
}

/// Mean radial momentum of the stationary family with the 1/E weight.
double equilibrium_mean_r(double m, double beta) {
    const double emax = m + 45.0 / beta;
    const double rmax = std::sqrt(emax * emax - m * m);
    const auto num = [&](double r) { return r * shell_pdf(r, m, beta, 1); };
    const auto den = [&](double r) { return shell_pdf(r, m, beta, 1); };
    return simpson(num, 0.0, rmax, 4000) / simpson(den, 0.0, rmax, 4000);
}

/// Histogram whose bin masses follow the stationary family exactly,
/// scaled to the requested total count.
RadialHistogram synthesized_histogram(double pmax, int bins, double m, double beta, int k,
                                      double total) {
    RadialHistogram h;
    h.p_max = pmax;
    h.counts.assign(static_cast<std::size_t>(bins), 0.0);
    const double dr = pmax / bins;
    double sum = 0.0;
    for (int i = 0; i < bins; ++i) {
        const auto f = [&](double r) { return shell_pdf(r, m, beta, k); };
        h.counts[static_cast<std::size_t>(i)] = simpson(f, i * dr, (i + 1) * dr, 16);
        sum += h.counts[static_cast<std::size_t>(i)];
    }
    for (double& c : h.counts) c *= total / sum;
    return h;
}

double sum_abs(const FourVector& v) {
    return std::abs(v[0]) + std::abs(v[1]) + std::abs(v[2]) + std::abs(v[3]);
}

struct MeanSE {
    double mean = 0.0;
    double se = 0.0;
};

MeanSE mean_se(const std::vector<double>& xs) {
    const double n = static_cast<double>(xs.size());
    double s = 0.0;
    for (double x : xs) s += x;
    MeanSE out;
    out.mean = s / n;
    double v = 0.0;
    for (double x : xs) v += (x - out.mean) * (x - out.mean);
    out.se = std::sqrt(v / (n - 1.0) / n);
    return out;
}

} // namespace

TEST_CASE("phase point and config: construction and validation") {
    PhasePoint st = PhasePoint::make({0.1, 0.2, 0.3, 0.4}, {2.0, 0.5, -0.3, 1.0});
    CHECK(st.mass ==
          doctest::Approx(std::sqrt(4.0 - 0.25 - 0.09 - 1.0)).epsilon(1e-15));
    st.validate();
    CHECK_THROWS_AS(PhasePoint::make(kOrigin, {1.0, 2.0, 0.0, 0.0}), InvariantViolation);
    CHECK_THROWS_AS(PhasePoint::make(kOrigin, {1.0, 1.0, 0.0, 0.0}), InvariantViolation);
    st.mass *= 1.0 + 1e-6;
    CHECK_THROWS_AS(st.validate(), InvariantViolation);

    SimConfig good;
    good.validate();
    auto broken = [&](auto mutate) {
        SimConfig c;
        mutate(c);
        CHECK_THROWS_AS(c.validate(), ConfigError);
    };
    broken([](SimConfig& c) { c.dstep = 0.0; });
    broken([](SimConfig& c) { c.steps = 0; });
    broken([](SimConfig& c) { c.steps = (1LL << 32) + 1; });
    broken([](SimConfig& c) { c.ensemble = 0; });
    broken([](SimConfig& c) { c.output_every = 0; });
    broken([](SimConfig& c) { c.threads = 0; });
    broken([](SimConfig& c) { c.radial_bins = 3; });
    broken([](SimConfig& c) { c.cartesian_bins = 1; });
    broken([](SimConfig& c) { c.histogram_pmax = -1.0; });

    // Initial-distribution parameters are checked when a driver starts.
    auto bath = BathParams::synthetic(1.0, 1.0, 0.2, 0.8, 0.5, kRestW);
    SimConfig tiny;
    tiny.steps = 1;
    CHECK_THROWS_AS(run_ensemble(tiny, bath, InitialDistribution::thermal(-1.0, 1.0)),
                    ConfigError);
    CHECK_THROWS_AS(run_ensemble(tiny, bath, InitialDistribution::thermal(1.0, 0.0)),
                    ConfigError);
    CHECK_THROWS_AS(run_ensemble(tiny, bath, InitialDistribution::thermal(1.0, 1.0, 2)),
                    ConfigError);
    CHECK_THROWS_AS(
        simulate_trajectory(tiny, bath, InitialDistribution::thermal(1.0, 1.0), -1),
        ConfigError);
}

TEST_CASE("drift: closed form matches the finite-difference divergence oracle") {
    std::mt19937 rng(41);
    for (int t = 0; t < 150; ++t) {
        FourVector w = (t % 2 == 0) ? kRestW : random_unit_timelike(rng);
        BathParams b = random_bath(rng, w, t % 3 == 0);
        if (t % 4 == 0) b.friction_sign = FrictionSign::reversed;
        FourVector p = random_timelike(rng);

        FourVector closed = drift_closed_form(p, b);
        ItoDrift fd = ito_drift(p, b);
        double scale = 1.0 + sum_abs(fd.total) + sum_abs(fd.divergence);
        for (int mu = 0; mu < 4; ++mu)
            CHECK(std::abs(closed[mu] - fd.total[mu]) <= 10.0 * fd.fd_error + 1e-9 * scale);
    }
}

TEST_CASE("drift: null bath, comoving momentum, friction signs") {
    auto free = BathParams::synthetic(1.0, 0.0, 0.0, 0.0, 1.0, kRestW);
    FourVector d0 = drift_closed_form({1.7, 0.4, -0.2, 0.9}, free);
    for (int mu = 0; mu < 4; ++mu) CHECK(d0[mu] == 0.0);

    // A comoving particle feels no friction and a drift purely along p.
    std::mt19937 rng(42);
    FourVector w = random_unit_timelike(rng);
    double eps = 2.0, pi = 0.5, m = 2.5;
    auto b = BathParams::synthetic(1.3, eps, pi, 1.0, 0.7, w);
    FourVector p = w * m;
    FourVector dc = drift_closed_form(p, b);
    double coeff = 3.0 * (eps - pi) / (m * m);
    for (int mu = 0; mu < 4; ++mu)
        CHECK(dc[mu] == doctest::Approx(coeff * p[mu]).epsilon(1e-10).scale(coeff * m));

    // Opposite friction conventions differ by (beta(eps - pi) + lambda)
    // times the projected bath velocity.
    FourVector q = random_timelike(rng, 1.0, 3.0, 1.2);
    auto bf = BathParams::synthetic(1.3, eps, pi, 0.9, 0.7, w);
    auto br = bf;
    br.friction_sign = FrictionSign::reversed;
    FourVector df = drift_closed_form(q, bf);
    FourVector dr = drift_closed_form(q, br);
    double s = dot(q, q), y = dot(w, q);
    FourVector pw = w - q * (y / s);
    double gap = bf.beta * (eps - pi) + br.lambda;
    for (int mu = 0; mu < 4; ++mu)
        CHECK(df[mu] - dr[mu] ==
              doctest::Approx(gap * pw[mu]).epsilon(1e-11).scale(1.0 + gap * sum_abs(pw)));
}

TEST_CASE("noise channels: factorization, tangency, ranks") {
    std::mt19937 rng(43);
    for (int t = 0; t < 120; ++t) {
        FourVector w = (t % 2 == 0) ? kRestW : random_unit_timelike(rng);
        BathParams b = random_bath(rng, w, true);
        FourVector p = random_timelike(rng, 0.3, 8.0, 2.0);

        NoiseChannels nc = noise_channels(p, b);
        CHECK(nc.rank == 3);
        Tensor2 recon;
        for (int l = 0; l < nc.rank; ++l) {
            const FourVector& c = nc.columns[static_cast<std::size_t>(l)];
            recon = recon + Tensor2::outer(c, c);
            CHECK(std::abs(dot(c, p)) <=
                  tol_scale(c.max_abs() * p.max_abs(), 1e-11));
        }
        Tensor2 target = alpha(p, b).alpha * 2.0;
        CHECK((recon - target).max_abs() <= tol_scale(target.max_abs(), 1e-11));

        // The eigensolver route factors the same tensor.
        NoiseFactor nf = noise_factor(alpha(p, b));
        Tensor2 recon_f;
        for (int l = 0; l < nf.rank; ++l)
            recon_f = recon_f +
                      Tensor2::outer(nf.columns[static_cast<std::size_t>(l)],
                                     nf.columns[static_cast<std::size_t>(l)]);
        CHECK((recon - recon_f).max_abs() <= tol_scale(target.max_abs(), 1e-8));
    }

    // Degenerate spectra: eps = pi drops the longitudinal channel, a
    // null bath drops all of them, and a comoving particle keeps three
    // equal channels.
    std::mt19937 rng2(44);
    FourVector w = random_unit_timelike(rng2);
    FourVector p = random_timelike(rng2, 1.0, 3.0, 1.5);
    auto b_iso = BathParams::synthetic(1.0, 2.0, 2.0, 0.5, 1.0, w);
    CHECK(noise_channels(p, b_iso).rank == 2);
    auto b_null = BathParams::synthetic(1.0, 0.0, 0.0, 0.0, 1.0, w);
    CHECK(noise_channels(p, b_null).rank == 0);

    double eps = 2.2, pi = 0.6, m = 1.9;
    auto b = BathParams::synthetic(1.0, eps, pi, 0.5, 1.0, w);
    NoiseChannels cm = noise_channels(w * m, b);
    CHECK(cm.rank == 3);
    for (int l = 0; l < 3; ++l) {
        double n2 = -dot(cm.columns[static_cast<std::size_t>(l)],
                         cm.columns[static_cast<std::size_t>(l)]);
        CHECK(n2 == doctest::Approx(2.0 * (eps - pi)).epsilon(1e-10));
    }
    NoiseChannels cm_iso = noise_channels(w * m, b_iso);
    CHECK(cm_iso.rank == 0);

    // Just off the comoving axis the factorization stays exact on both
    // sides of the frame switch: the fallback triad below, the
    // projected-velocity frame above.
    for (double delta : {1e-8, 1e-5}) {
        FourVector p_near = w * m;
        p_near[1] += delta;
        NoiseChannels near = noise_channels(p_near, b);
        Tensor2 recon_n;
        for (int l = 0; l < near.rank; ++l)
            recon_n = recon_n + Tensor2::outer(near.columns[static_cast<std::size_t>(l)],
                                               near.columns[static_cast<std::size_t>(l)]);
        Tensor2 target_n = alpha(p_near, b).alpha * 2.0;
        CHECK((recon_n - target_n).max_abs() <= tol_scale(1.0 + target_n.max_abs(), 1e-9));
    }
}

TEST_CASE("em step: free streaming moves x and leaves p untouched") {
    auto free = BathParams::synthetic(1.0, 0.0, 0.0, 0.0, 1.0, kRestW);
    FourVector p{2.6, 1.0, -0.7, 0.5};
    PhasePoint st = PhasePoint::make({0.3, -0.1, 0.0, 0.2}, p);
    const double ds = 0.37;
    const std::array<double, 3> loud{5.0, -3.0, 2.0}; // ignored at rank 0

    PhasePoint off = em_step(st, free, ds, loud, Projection::off, Advection::velocity);
    for (int mu = 0; mu < 4; ++mu) CHECK(off.p[mu] == p[mu]);
    CHECK(off.mass == st.mass);
    double inv_m = 1.0 / std::sqrt(dot(p, p));
    for (int mu = 0; mu < 4; ++mu)
        CHECK(off.x[mu] ==
              doctest::Approx(st.x[mu] + p[mu] * inv_m * ds).epsilon(1e-14));

    PhasePoint res = em_step(st, free, ds, loud, Projection::resolve_p0, Advection::velocity);
    CHECK(std::abs(res.p[0] - p[0]) <= 1e-14 * p[0]);
    for (int mu = 1; mu < 4; ++mu) CHECK(res.p[mu] == p[mu]);

    PhasePoint mom = em_step(st, free, ds, loud, Projection::off, Advection::momentum);
    for (int mu = 0; mu < 4; ++mu)
        CHECK(mom.x[mu] == doctest::Approx(st.x[mu] + p[mu] * ds).epsilon(1e-14));
    // The momentum form advances coordinate time m times faster per
    // unit of the evolution parameter.
    CHECK((mom.x[0] - st.x[0]) / (off.x[0] - st.x[0]) ==
          doctest::Approx(std::sqrt(dot(p, p))).epsilon(1e-12));
}

TEST_CASE("em step: argument and invariant failures") {
    auto bath = BathParams::synthetic(1.0, 1.5, 0.5, 1.0, 0.5, kRestW);
    PhasePoint st = PhasePoint::make(kOrigin, {1.5, 0.3, 0.0, 0.0});
    CHECK_THROWS_AS(em_step(st, bath, 0.0, {0, 0, 0}, Projection::off, Advection::velocity),
                    ConfigError);
    CHECK_THROWS_AS(em_step(st, bath, -0.1, {0, 0, 0}, Projection::off, Advection::velocity),
                    ConfigError);
    PhasePoint stale = st;
    stale.mass *= 1.0 + 1e-6;
    CHECK_THROWS_AS(
        em_step(stale, bath, 0.01, {0, 0, 0}, Projection::off, Advection::velocity),
        InvariantViolation);

    // Friction stiff enough to overshoot the cone in one step must be
    // rejected no matter the noise draw.
    auto stiff = BathParams::synthetic(5.0, 50.0, 0.0, 250.0, 1.0, kRestW);
    PhasePoint light = PhasePoint::make(kOrigin, {std::sqrt(1.0 + 0.05 * 0.05), 1.0, 0.0, 0.0});
    CHECK_THROWS_AS(
        em_step(light, stiff, 1.0, {0, 0, 0}, Projection::resolve_p0, Advection::velocity),
        InvariantViolation);

    // At rest every spatial component vanishes, so no spatial rescale
    // can absorb the energy the drift injects.
    PhasePoint rest = PhasePoint::make(kOrigin, {1.2, 0.0, 0.0, 0.0});
    CHECK_THROWS_AS(
        em_step(rest, bath, 0.01, {0, 0, 0}, Projection::rescale_spatial, Advection::velocity),
        InvariantViolation);
}

TEST_CASE("em step: both shell projections restore the mass shell") {
    std::mt19937 rng(45);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double ds = 0.002;
    for (int t = 0; t < 200; ++t) {
        double m = 1.0 + uni(rng);
        double chi = 0.8 + 0.7 * uni(rng);
        double ct = 2.0 * uni(rng) - 1.0;
        double ph = 2.0 * 3.14159265358979 * uni(rng);
        double st_ = std::sqrt(1.0 - ct * ct);
        double pr = m * std::sinh(chi);
        PhasePoint st = PhasePoint::make(
            kOrigin, {m * std::cosh(chi), pr * st_ * std::cos(ph), pr * st_ * std::sin(ph),
                      pr * ct});
        double eps = 1.0 + 2.0 * uni(rng);
        auto bath = BathParams::synthetic(0.5 + uni(rng), eps, 0.3 * eps, uni(rng),
                                          0.3 + 0.7 * uni(rng),
                                          t % 2 == 0 ? kRestW : random_unit_timelike(rng));
        auto xi = normal3(rng);

        PhasePoint off = em_step(st, bath, ds, xi, Projection::off, Advection::velocity);
        CHECK(std::abs(off.mass * off.mass - dot(off.p, off.p)) <=
              1e-12 * dot(off.p, off.p));
        off.validate();

        PhasePoint res = em_step(st, bath, ds, xi, Projection::resolve_p0, Advection::velocity);
        CHECK(res.mass == st.mass);
        for (int i = 1; i < 4; ++i) CHECK(res.p[i] == off.p[i]);
        CHECK(std::abs(dot(res.p, res.p) - m * m) <= 1e-12 * m * m);

        PhasePoint rsc =
            em_step(st, bath, ds, xi, Projection::rescale_spatial, Advection::velocity);
        CHECK(rsc.mass == st.mass);
        CHECK(rsc.p[0] == off.p[0]);
        CHECK(std::abs(dot(rsc.p, rsc.p) - m * m) <= 1e-12 * m * m);
        double f = 0.0;
        for (int i = 1; i < 4; ++i)
            if (off.p[i] != 0.0) f = rsc.p[i] / off.p[i];
        for (int i = 1; i < 4; ++i)
            CHECK(rsc.p[i] == doctest::Approx(f * off.p[i]).epsilon(1e-12));
    }
}

TEST_CASE("em step: rest-frame single-step moments match the generator") {
    const double m = 1.3, eps = 1.7, pi = 0.5, tau = 0.7, ds = 1e-3;
    auto bath = BathParams::synthetic(1.0, eps, pi, 1.2, tau, kRestW);
    PhasePoint st = PhasePoint::make(kOrigin, {m, 0.0, 0.0, 0.0});

    const int n = 100000;
    std::mt19937 rng(46);
    std::vector<double> d0(n);
    std::array<std::vector<double>, 3> di;
    std::array<std::vector<double>, 6> prods; // xx, yy, zz, xy, xz, yz
    for (auto& v : di) v.resize(n);
    for (auto& v : prods) v.resize(n);
    for (int j = 0; j < n; ++j) {
        PhasePoint out =
            em_step(st, bath, ds, normal3(rng), Projection::resolve_p0, Advection::velocity);
        CHECK(std::abs(dot(out.p, out.p) - m * m) <= 1e-13 * m * m);
        d0[static_cast<std::size_t>(j)] = out.p[0] - m;
        double dp[3] = {out.p[1], out.p[2], out.p[3]};
        for (int i = 0; i < 3; ++i) di[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = dp[i];
        prods[0][static_cast<std::size_t>(j)] = dp[0] * dp[0];
        prods[1][static_cast<std::size_t>(j)] = dp[1] * dp[1];
        prods[2][static_cast<std::size_t>(j)] = dp[2] * dp[2];
        prods[3][static_cast<std::size_t>(j)] = dp[0] * dp[1];
        prods[4][static_cast<std::size_t>(j)] = dp[0] * dp[2];
        prods[5][static_cast<std::size_t>(j)] = dp[1] * dp[2];
    }

    // Spatial covariance 2 tau_c (eps - pi) ds per axis, no cross terms.
    const double cov = 2.0 * tau * (eps - pi) * ds;
    for (int k = 0; k < 3; ++k) {
        MeanSE s = mean_se(prods[static_cast<std::size_t>(k)]);
        CHECK(std::abs(s.mean - cov) <= 5.0 * s.se);
    }
    for (int k = 3; k < 6; ++k) {
        MeanSE s = mean_se(prods[static_cast<std::size_t>(k)]);
        CHECK(std::abs(s.mean) <= 5.0 * s.se);
    }
    for (int i = 0; i < 3; ++i) {
        MeanSE s = mean_se(di[static_cast<std::size_t>(i)]);
        CHECK(std::abs(s.mean) <= 4.0 * s.se);
    }
    // The shell projection converts the spatial spread into the energy
    // gain predicted by the time component of the drift.
    MeanSE s0 = mean_se(d0);
    const double want = 3.0 * tau * (eps - pi) * ds / m;
    CHECK(std::abs(s0.mean - want) <= 5.0 * s0.se + 0.02 * want);
}

TEST_CASE("em step: unprojected shell drift is quadratic in the step") {
    const double m = 1.0, chi = 1.2, tau = 0.3;
    auto bath = BathParams::synthetic(4.0, 2.0, 0.5, 6.0, tau, kRestW);
    PhasePoint st = PhasePoint::make(kOrigin, {m * std::cosh(chi), m * std::sinh(chi), 0.0, 0.0});
    const FourVector drift = ito_drift(st.p, bath).total;
    const double dd = dot(drift, drift);
    const double s0 = dot(st.p, st.p);

    std::mt19937 rng(47);
    for (double h : {0.006, 0.003}) {
        const int n = 1500000;
        std::vector<double> dm(static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j) {
            PhasePoint out =
                em_step(st, bath, h, normal3(rng), Projection::off, Advection::velocity);
            dm[static_cast<std::size_t>(j)] = dot(out.p, out.p) - s0;
        }
        MeanSE s = mean_se(dm);
        const double want = tau * h * tau * h * dd;
        CHECK(std::abs(s.mean - want) <= 5.0 * s.se);
    }
}

TEST_CASE("em step: one-step averages reproduce the generator on smooth functions") {
    struct Obs {
        std::array<double, 4> u, v, q;
        double operator()(const FourVector& p) const {
            double a = 0.0, b = 0.0, c = 0.0;
            for (int mu = 0; mu < 4; ++mu) {
                a += u[static_cast<std::size_t>(mu)] * p[mu];
                b += v[static_cast<std::size_t>(mu)] * p[mu];
                c += q[static_cast<std::size_t>(mu)] * p[mu];
            }
            return a * a * a + std::cos(b) + c * c;
        }
        FourVector grad(const FourVector& p) const {
            double a = 0.0, b = 0.0, c = 0.0;
            for (int mu = 0; mu < 4; ++mu) {
                a += u[static_cast<std::size_t>(mu)] * p[mu];
                b += v[static_cast<std::size_t>(mu)] * p[mu];
                c += q[static_cast<std::size_t>(mu)] * p[mu];
            }
            FourVector g;
            for (int mu = 0; mu < 4; ++mu)
                g[mu] = 3.0 * a * a * u[static_cast<std::size_t>(mu)] -
                        std::sin(b) * v[static_cast<std::size_t>(mu)] +
                        2.0 * c * q[static_cast<std::size_t>(mu)];
            return g;
        }
        Tensor2 hess(const FourVector& p) const {
            double a = 0.0, b = 0.0;
            for (int mu = 0; mu < 4; ++mu) {
                a += u[static_cast<std::size_t>(mu)] * p[mu];
                b += v[static_cast<std::size_t>(mu)] * p[mu];
            }
            Tensor2 h;
            for (int mu = 0; mu < 4; ++mu)
                for (int nu = 0; nu < 4; ++nu)
                    h(mu, nu) = 6.0 * a * u[static_cast<std::size_t>(mu)] *
                                    u[static_cast<std::size_t>(nu)] -
                                std::cos(b) * v[static_cast<std::size_t>(mu)] *
                                    v[static_cast<std::size_t>(nu)] +
                                2.0 * q[static_cast<std::size_t>(mu)] *
                                    q[static_cast<std::size_t>(nu)];
            return h;
        }
    };
    const Obs phi{{0.21, -0.14, 0.10, 0.06}, {0.55, 0.40, -0.31, 0.22},
                  {0.08, 0.31, -0.23, 0.17}};

    const FourVector wmv{std::cosh(0.45), std::sinh(0.45) * 0.6, std::sinh(0.45) * 0.64,
                         std::sinh(0.45) * 0.48};
    struct Point {
        PhasePoint st;
        BathParams bath;
    };
    std::vector<Point> pts;
    pts.push_back({PhasePoint::make(kOrigin, {1.3, 0.0, 0.0, 0.0}),
                   BathParams::synthetic(1.0, 2.0, 0.6, 1.4, 0.4, kRestW)});
    pts.push_back({PhasePoint::make(kOrigin, {1.2 * std::cosh(0.8), 1.2 * std::sinh(0.8), 0.0, 0.0}),
                   BathParams::synthetic(1.0, 2.0, 0.6, 1.4, 0.4, kRestW)});
    pts.push_back({PhasePoint::make(kOrigin,
                                    {1.4 * std::cosh(0.6), 0.0, 1.4 * std::sinh(0.6) * 0.6,
                                     1.4 * std::sinh(0.6) * 0.8}),
                   BathParams::synthetic(1.4, 1.1, 0.3, 1.1, 0.4, wmv)});
    pts.push_back({PhasePoint::make(kOrigin, wmv * 1.7),
                   BathParams::synthetic(0.9, 2.0, 0.5, 1.35, 0.5, wmv)});
    auto rev = BathParams::synthetic(1.1, 1.6, 0.4, 2.0, 0.4, kRestW);
    rev.friction_sign = FrictionSign::reversed;
    pts.push_back({PhasePoint::make(kOrigin, {1.5 * std::cosh(0.7), 0.0, 1.5 * std::sinh(0.7), 0.0}),
                   rev});

    std::mt19937 rng(48);
    const double h1 = 0.008, h2 = 0.004;
    const int n = 200000;
    for (const Point& pt : pts) {
        const FourVector p0 = pt.st.p;
        const double tau = pt.bath.tau_c;
        const Tensor2 a = alpha(p0, pt.bath).alpha;
        const FourVector d = ito_drift(p0, pt.bath).total;
        const FourVector g = phi.grad(p0);
        const Tensor2 hs = phi.hess(p0);

        double lphi = 0.0, lscale = 0.0;
        for (int mu = 0; mu < 4; ++mu) {
            lphi += d[mu] * g[mu];
            lscale += std::abs(d[mu] * g[mu]);
            for (int nu = 0; nu < 4; ++nu) {
                lphi += a(mu, nu) * hs(mu, nu);
                lscale += std::abs(a(mu, nu) * hs(mu, nu));
            }
        }
        lphi *= tau;
        lscale *= tau;

        const double f0 = phi(p0);
        double dg = 0.0;
        for (int mu = 0; mu < 4; ++mu) dg += d[mu] * g[mu];
        std::vector<double> est(static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j) {
            const auto xi = normal3(rng);
            const auto one = [&](double h) {
                PhasePoint out =
                    em_step(pt.st, pt.bath, h, xi, Projection::off, Advection::velocity);
                double lin = 0.0;
                for (int mu = 0; mu < 4; ++mu) lin += g[mu] * (out.p[mu] - p0[mu]);
                return (phi(out.p) - f0 - lin) / h + tau * dg;
            };
            // Same draw at both steps, so the step-halving combination
            // cancels the O(h) error without inflating the variance.
            est[static_cast<std::size_t>(j)] = 2.0 * one(h2) - one(h1);
        }
        MeanSE s = mean_se(est);
        CHECK(std::abs(s.mean - lphi) <= 0.01 * lscale + 4.0 * s.se);
    }
}

TEST_CASE("ensemble: free streaming keeps every momentum record identical") {
    auto free = BathParams::synthetic(1.0, 0.0, 0.0, 0.0, 1.0, kRestW);
    SimConfig cfg;
    cfg.dstep = 0.05;
    cfg.steps = 40;
    cfg.output_every = 10;
    cfg.ensemble = 3000;
    cfg.seed = 11;
    cfg.projection = Projection::off;
    cfg.radial_bins = 24;
    cfg.cartesian_bins = 8;
    EnsembleResult res = run_ensemble(cfg, free, InitialDistribution::thermal(1.0, 1.0));

    REQUIRE(res.moments.size() == 5);
    const MomentRecord& first = res.moments.front();
    for (std::size_t j = 1; j < res.moments.size(); ++j) {
        const MomentRecord& r = res.moments[j];
        for (int k = 0; k < 4; ++k) {
            CHECK(r.mean_p[static_cast<std::size_t>(k)] ==
                  first.mean_p[static_cast<std::size_t>(k)]);
            CHECK(r.se_p[static_cast<std::size_t>(k)] ==
                  first.se_p[static_cast<std::size_t>(k)]);
        }
        CHECK(r.mean_abs_p == first.mean_abs_p);
        CHECK(r.se_abs_p == first.se_abs_p);
        CHECK(r.mean_x0 > res.moments[j - 1].mean_x0);
        CHECK(r.max_shell_drift <= 1e-14);
    }
    CHECK(res.rejected_steps == 0);
    CHECK(res.radial.total() + res.radial.overflow == doctest::Approx(3000.0));
    double cart_total = 0.0;
    for (double c : res.cartesian.counts) cart_total += c;
    CHECK(cart_total + res.cartesian.overflow == doctest::Approx(3000.0));
}

TEST_CASE("ensemble: results do not depend on the thread count") {
    const FourVector wmv{std::cosh(0.4), std::sinh(0.4) * 0.6, std::sinh(0.4) * 0.64,
                         std::sinh(0.4) * 0.48};
    auto bath = BathParams::synthetic(1.2, 1.6, 0.4, 1.44, 0.5, wmv);
    SimConfig cfg;
    cfg.dstep = 0.004;
    cfg.steps = 60;
    cfg.output_every = 20;
    cfg.ensemble = 300;
    cfg.seed = 2024;
    cfg.radial_bins = 16;
    cfg.cartesian_bins = 8;
    cfg.histogram_pmax = 8.0;
    auto init = InitialDistribution::thermal(1.0, 1.2, 0);

    cfg.threads = 1;
    EnsembleResult a = run_ensemble(cfg, bath, init);
    cfg.threads = 3;
    EnsembleResult b = run_ensemble(cfg, bath, init);

    REQUIRE(a.moments.size() == b.moments.size());
    for (std::size_t j = 0; j < a.moments.size(); ++j) {
        for (int k = 0; k < 4; ++k) {
            CHECK(a.moments[j].mean_p[static_cast<std::size_t>(k)] ==
                  b.moments[j].mean_p[static_cast<std::size_t>(k)]);
            CHECK(a.moments[j].se_p[static_cast<std::size_t>(k)] ==
                  b.moments[j].se_p[static_cast<std::size_t>(k)]);
        }
        CHECK(a.moments[j].mean_x0 == b.moments[j].mean_x0);
        CHECK(a.moments[j].mean_abs_p == b.moments[j].mean_abs_p);
        CHECK(a.moments[j].mean_shell_drift == b.moments[j].mean_shell_drift);
        CHECK(a.moments[j].max_shell_drift == b.moments[j].max_shell_drift);
    }
    CHECK(a.radial.counts == b.radial.counts);
    CHECK(a.radial.overflow == b.radial.overflow);
    CHECK(a.cartesian.counts == b.cartesian.counts);
    CHECK(a.rejected_steps == b.rejected_steps);
    CHECK(a.max_halvings == b.max_halvings);

    cfg.seed = 2025;
    EnsembleResult c = run_ensemble(cfg, bath, init);
    CHECK(c.moments.back().mean_abs_p != a.moments.back().mean_abs_p);
}

TEST_CASE("trajectory: agrees with a one-member ensemble and advances the clock") {
    auto bath = BathParams::synthetic(1.2, 1.8, 0.4, 1.68, 0.5, kRestW);
    SimConfig cfg;
    cfg.dstep = 0.004;
    cfg.steps = 120;
    cfg.output_every = 30;
    cfg.ensemble = 1;
    cfg.seed = 5;
    auto init = InitialDistribution::thermal(1.0, 1.2);

    auto traj = simulate_trajectory(cfg, bath, init, 0);
    EnsembleResult res = run_ensemble(cfg, bath, init);
    REQUIRE(traj.size() == res.moments.size());
    for (std::size_t j = 0; j < traj.size(); ++j) {
        CHECK(traj[j].step == res.moments[j].step);
        CHECK(traj[j].s == res.moments[j].s);
        for (int k = 0; k < 4; ++k)
            CHECK(traj[j].state.p[k] == res.moments[j].mean_p[static_cast<std::size_t>(k)]);
        CHECK(traj[j].state.x[0] == res.moments[j].mean_x0);
        if (j > 0) CHECK(traj[j].state.x[0] > traj[j - 1].state.x[0]);
    }
}

TEST_CASE("ensemble: a thermal start under matched friction stays stationary") {
    auto bath = BathParams::synthetic(1.0, 2.0, 0.5, 1.5, 0.3, kRestW);
    SimConfig cfg;
    cfg.dstep = 0.005;
    cfg.steps = 800;
    cfg.output_every = 200;
    cfg.ensemble = 12000;
    cfg.seed = 77;
    cfg.radial_bins = 32;
    cfg.cartesian_bins = 8;
    cfg.histogram_pmax = 10.0;
    EnsembleResult res = run_ensemble(cfg, bath, InitialDistribution::thermal(1.0, 1.0));

    // Deep in the thermal tail the noise amplitude rivals the momentum
    // itself, so a fraction of step attempts is halved; that must stay
    // rare and must not bias the bulk statistics below.
    CHECK(res.rejected_steps > 0);
    CHECK(res.rejected_steps < cfg.steps * cfg.ensemble / 50);
    CHECK(res.max_halvings >= 1);
    CHECK(res.max_halvings <= 6);
    const MomentRecord& first = res.moments.front();
    for (std::size_t j = 1; j < res.moments.size(); ++j) {
        const MomentRecord& r = res.moments[j];
        double se_abs = std::sqrt(r.se_abs_p * r.se_abs_p + first.se_abs_p * first.se_abs_p);
        CHECK(std::abs(r.mean_abs_p - first.mean_abs_p) <= 4.0 * se_abs + 0.01);
        double se_e = std::sqrt(r.se_p[0] * r.se_p[0] + first.se_p[0] * first.se_p[0]);
        CHECK(std::abs(r.mean_p[0] - first.mean_p[0]) <= 4.0 * se_e + 0.015);
        for (std::size_t i = 1; i < 4; ++i)
            CHECK(std::abs(r.mean_p[i]) <= 4.0 * r.se_p[i] + 0.01);
        CHECK(r.mean_shell_drift <= 1e-10);
        CHECK(r.max_shell_drift <= 1e-8);
    }

    StationarityReport rep = stationarity_distance(res.radial, 1.0, bath);
    CHECK(rep.distance <= 0.05);
    CHECK(std::abs(rep.beta_fit - 1.0) <= 0.05);
    CHECK(rep.distance_d3p > rep.distance);
    CHECK(rep.effective_samples > 11000.0);
    CHECK(!rep.low_confidence);
    CHECK(!rep.bracket_edge);
}

TEST_CASE("ensemble: a fast delta start relaxes onto the thermal shell") {
    auto bath = BathParams::synthetic(1.0, 2.0, 0.5, 1.5, 0.3, kRestW);
    SimConfig cfg;
    cfg.dstep = 0.003;
    cfg.steps = 700;
    cfg.output_every = 70;
    cfg.ensemble = 2500;
    cfg.seed = 99;
    cfg.radial_bins = 32;
    cfg.cartesian_bins = 8;
    cfg.histogram_pmax = 10.0;
    PhasePoint start = PhasePoint::make(kOrigin, {std::sqrt(17.0), 4.0, 0.0, 0.0});
    EnsembleResult res = run_ensemble(cfg, bath, InitialDistribution::at(start));

    REQUIRE(res.moments.size() == 11);
    CHECK(res.moments.front().mean_abs_p == doctest::Approx(4.0));
    CHECK(res.moments[1].mean_abs_p < 4.0 - 0.3);
    for (std::size_t j = 0; j + 1 < res.moments.size(); ++j) {
        const MomentRecord& c = res.moments[j];
        const MomentRecord& nx = res.moments[j + 1];
        CHECK(nx.mean_abs_p <= c.mean_abs_p + 3.0 * (c.se_abs_p + nx.se_abs_p) + 0.01);
    }
    const MomentRecord& last = res.moments.back();
    const double req = equilibrium_mean_r(1.0, 1.0);
    CHECK(std::abs(last.mean_abs_p - req) <= 0.12 + 4.0 * last.se_abs_p);
    CHECK(std::abs(last.mean_p[1]) <= 0.1 + 4.0 * last.se_p[1]);

    StationarityReport rep = stationarity_distance(res.radial, 1.0, bath);
    CHECK(rep.distance <= 0.12);
    CHECK(std::abs(rep.beta_fit - 1.0) <= 0.1);
}

TEST_CASE("ensemble: reversed friction pumps energy in and leaves the shell family") {
    // Reversed friction grows energies at a rate ~ E^2 / m^2, a
    // finite-time runaway; the heavy mass keeps the horizon safely
    // below the blowup time of every populated energy.
    auto bath = BathParams::synthetic(1.0, 2.0, 0.5, 1.5, 0.3, kRestW);
    bath.friction_sign = FrictionSign::reversed;
    SimConfig cfg;
    cfg.dstep = 0.0025;
    cfg.output_every = 90;
    cfg.ensemble = 600;
    cfg.seed = 7;
    cfg.radial_bins = 40;
    cfg.cartesian_bins = 8;
    cfg.histogram_pmax = 20.0;
    auto init = InitialDistribution::thermal(2.0, 1.0);

    cfg.steps = 90;
    EnsembleResult shorter = run_ensemble(cfg, bath, init);
    cfg.steps = 180;
    EnsembleResult longer = run_ensemble(cfg, bath, init);

    CHECK(shorter.moments.back().mean_abs_p >
          shorter.moments.front().mean_abs_p + 0.2);
    CHECK(longer.moments.back().mean_abs_p > shorter.moments.back().mean_abs_p + 0.2);

    StationarityReport ds = stationarity_distance(shorter.radial, 2.0, bath);
    StationarityReport dl = stationarity_distance(longer.radial, 2.0, bath);
    CHECK(dl.beta_fit < ds.beta_fit);
    CHECK(ds.beta_fit < 0.95);
    CHECK(dl.distance > 0.1);
}

TEST_CASE("ensemble: oversized steps are halved and reported, or refused") {
    auto stiff = BathParams::synthetic(1.0, 2.5, 0.5, 2.0, 1.0, kRestW);
    SimConfig cfg;
    cfg.dstep = 0.001;
    cfg.steps = 50;
    cfg.output_every = 25;
    cfg.ensemble = 200;
    cfg.seed = 3;
    cfg.radial_bins = 16;
    cfg.cartesian_bins = 8;
    cfg.histogram_pmax = 6.0;
    PhasePoint start = PhasePoint::make(kOrigin, {std::sqrt(1.25), 1.0, 0.0, 0.0});
    EnsembleResult res = run_ensemble(cfg, stiff, InitialDistribution::at(start));
    CHECK(res.rejected_steps > 20);
    CHECK(res.max_halvings >= 1);
    CHECK(res.max_halvings <= 6);
    CHECK(res.moments.back().max_shell_drift <= 1e-8);
    bool mentioned = false;
    for (const std::string& w : res.warnings)
        if (w.find("rejected") != std::string::npos) mentioned = true;
    CHECK(mentioned);

    // Friction stiff enough to overshoot at every halving depth is a
    // configuration error the driver must refuse rather than mask.
    auto runaway = BathParams::synthetic(5.0, 50.0, 0.0, 250.0, 1.0, kRestW);
    SimConfig bad;
    bad.dstep = 1.0;
    bad.steps = 1;
    bad.ensemble = 1;
    PhasePoint light =
        PhasePoint::make(kOrigin, {std::sqrt(1.0 + 0.05 * 0.05), 1.0, 0.0, 0.0});
    CHECK_THROWS_AS(run_ensemble(bad, runaway, InitialDistribution::at(light)),
                    ConvergenceError);
}

TEST_CASE("stationarity fit: recovers synthesized shell data and flags misfits") {
    auto bath = BathParams::synthetic(1.3, 1.0, 0.2, 0.5, 1.0, kRestW);
    RadialHistogram h = synthesized_histogram(9.0, 36, 0.8, 1.3, 1, 2e6);
    StationarityReport rep = stationarity_distance(h, 0.8, bath);
    CHECK(rep.distance <= 2e-3);
    CHECK(std::abs(rep.beta_fit - 1.3) <= 5e-3);
    CHECK(rep.distance_d3p > 0.01);
    CHECK(rep.distance_d3p > 20.0 * rep.distance);
    CHECK(rep.effective_samples == doctest::Approx(2e6));
    CHECK(!rep.low_confidence);
    CHECK(!rep.bracket_edge);

    // The plain-measure family is recovered by its own candidate score.
    RadialHistogram h0 = synthesized_histogram(9.0, 36, 0.8, 1.3, 0, 2e6);
    StationarityReport rep0 = stationarity_distance(h0, 0.8, bath);
    CHECK(rep0.distance_d3p <= 2e-3);
    CHECK(std::abs(rep0.beta_fit_d3p - 1.3) <= 5e-3);
    CHECK(rep0.distance > 0.01);

    RadialHistogram small = synthesized_histogram(9.0, 36, 0.8, 1.3, 1, 150.0);
    CHECK(stationarity_distance(small, 0.8, bath).low_confidence);

    // A population far hotter than the bracket allows pins the fit to
    // the bracket edge, which the report must flag.
    RadialHistogram cold = synthesized_histogram(9.0, 36, 0.8, 0.1, 1, 1e6);
    auto unit_bath = BathParams::synthetic(1.0, 1.0, 0.2, 0.5, 1.0, kRestW);
    CHECK(stationarity_distance(cold, 0.8, unit_bath).bracket_edge);

    RadialHistogram empty;
    empty.p_max = 5.0;
    empty.counts.assign(16, 0.0);
    CHECK_THROWS_AS(stationarity_distance(empty, 1.0, bath), ConfigError);
    CHECK_THROWS_AS(stationarity_distance(h, -1.0, bath), ConfigError);
    RadialHistogram norange;
    norange.counts.assign(16, 1.0);
    CHECK_THROWS_AS(stationarity_distance(norange, 1.0, bath), ConfigError);
}
