#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <string>

#include "rtd/diffusion.hpp"
#include "rtd/equilibrium.hpp"
#include "rtd/errors.hpp"
#include "rtd/minkowski.hpp"

using namespace rtd;

namespace {

const FourVector kRest{1.0, 0.0, 0.0, 0.0};

FourVector random_unit_timelike(std::mt19937& rng, double max_rapidity = 1.5) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double y = uni(rng) * max_rapidity;
    const double ct = 2.0 * uni(rng) - 1.0;
    const double ph = 2.0 * M_PI * uni(rng);
    const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
    const double sh = std::sinh(y);
    return {std::cosh(y), sh * st * std::cos(ph), sh * st * std::sin(ph), sh * ct};
}

FourVector random_on_shell(std::mt19937& rng, double mass, double max_rapidity = 2.0) {
    FourVector u = random_unit_timelike(rng, max_rapidity);
    return mass * u;
}

BathParams random_bath(std::mt19937& rng, const FourVector& w) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double eps = std::pow(10.0, 2.0 * uni(rng) - 1.0);
    const double pi = eps * uni(rng);
    const double beta = 0.4 + 2.0 * uni(rng);
    return BathParams::synthetic(beta, eps, pi, beta * (eps - pi), 1.0, w);
}

Boost random_boost(std::mt19937& rng, double vmax = 0.8) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double v = vmax * uni(rng);
    const double ct = 2.0 * uni(rng) - 1.0;
    const double ph = 2.0 * M_PI * uni(rng);
    const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
    return Boost::from_velocity(v * st * std::cos(ph), v * st * std::sin(ph), v * ct);
}

/// Shell-tangent projection of w, the direction every residual and
/// drift in this module is proportional to.
FourVector tangent_w(const FourVector& p, const FourVector& w) {
    return projector(p).apply_covector(lower(w));
}

} // namespace

TEST_CASE("density follows the exponent and the family validates itself") {
    const BathParams b = BathParams::synthetic(1.7, 2.0, 0.5, 1.7 * 1.5, 0.3, kRest);
    JuttnerParams j = JuttnerParams::from_bath(b);
    CHECK(j.beta == 1.7);
    CHECK(j.gamma == 0.0);
    CHECK(j.norm == 1.0);

    const double m = 1.3;
    const FourVector rest{m, 0.0, 0.0, 0.0};
    CHECK(juttner_density(rest, j) ==
          doctest::Approx(std::exp(-1.7 * m)).epsilon(1e-14));

    // On a fixed shell a nonzero gamma is a constant factor.
    std::mt19937 rng(5);
    JuttnerParams jg = j;
    jg.gamma = 0.8;
    for (int t = 0; t < 20; ++t) {
        const FourVector p = random_on_shell(rng, m);
        CHECK(juttner_density(p, jg) / juttner_density(p, j) ==
              doctest::Approx(std::exp(-0.8 * m * m)).epsilon(1e-12));
    }

    JuttnerParams jn = j;
    jn.norm = 2.5;
    CHECK(juttner_density(rest, jn) == doctest::Approx(2.5 * juttner_density(rest, j)));

    JuttnerParams bad = j;
    bad.beta = 0.0;
    CHECK_THROWS_AS(bad.validate(), InvariantViolation);
    bad = j;
    bad.w = {1.1, 0.0, 0.0, 0.0};
    CHECK_THROWS_AS(bad.validate(), InvariantViolation);
    bad = j;
    bad.w = -kRest;
    CHECK_THROWS_AS(bad.validate(), InvariantViolation);
    bad = j;
    bad.norm = 0.0;
    CHECK_THROWS_AS(bad.validate(), InvariantViolation);
    bad = j;
    bad.gamma = std::nan("");
    CHECK_THROWS_AS(bad.validate(), InvariantViolation);
    CHECK_THROWS_AS(JuttnerParams::from_bath(b, INFINITY), ConfigError);

    // Mismatched parameter blocks are refused before any evaluation.
    JuttnerParams other = j;
    other.beta = 1.8;
    CHECK_THROWS_AS(flux_residual(rest, b, other), ConfigError);
    other = j;
    other.w = random_unit_timelike(rng);
    CHECK_THROWS_AS(flux_residual(rest, b, other), FrameError);
    CHECK_THROWS_AS(reversible_drift({1.0, 2.0, 0.0, 0.0}, b, j), FrameError);
    CHECK_THROWS_AS(flux_residual(rest, b, j, INFINITY), ConfigError);
}

TEST_CASE("density is invariant under a simultaneous boost of momentum and frame") {
    std::mt19937 rng(23);
    for (int t = 0; t < 200; ++t) {
        const FourVector w = random_unit_timelike(rng);
        const BathParams b = random_bath(rng, w);
        JuttnerParams j = JuttnerParams::from_bath(b, t % 2 ? 0.35 : 0.0);
        // Off-shell points are fair game for the density itself.
        FourVector p = random_on_shell(rng, 0.5 + 2.0 * (t % 5));
        if (t % 3 == 0) p[0] *= 1.2;

        const Boost L = random_boost(rng);
        JuttnerParams jb = j;
        jb.w = L.apply(j.w);
        BathParams bb = b;
        bb.w = jb.w;
        CHECK(juttner_density(L.apply(p), jb) ==
              doctest::Approx(juttner_density(p, j)).epsilon(1e-11));
    }
}

TEST_CASE("stationary flux vanishes exactly at the matched friction") {
    std::mt19937 rng(31);
    for (int t = 0; t < 400; ++t) {
        const FourVector w = random_unit_timelike(rng);
        const BathParams b = random_bath(rng, w);
        const JuttnerParams j = JuttnerParams::from_bath(b, -0.4 + 0.2 * (t % 5));
        const FourVector p = random_on_shell(rng, 0.4 + 2.0 * (t % 4));

        const double omega = juttner_density(p, j);
        const double scale =
            b.beta * (b.epsilon - b.pi_eps) * tangent_w(p, w).max_abs() * omega +
            b.beta * b.epsilon * omega * 1e-6;
        CHECK(flux_residual(p, b, j).max_abs() <= 1e-10 * scale);
        CHECK(flux_residual(p, b, j, b.beta * (b.epsilon - b.pi_eps)).max_abs() <=
              1e-10 * scale);
    }
}

TEST_CASE("flux residual is linear in the friction coefficient") {
    std::mt19937 rng(41);
    for (int t = 0; t < 100; ++t) {
        const FourVector w = random_unit_timelike(rng);
        const BathParams b = random_bath(rng, w);
        const JuttnerParams j = JuttnerParams::from_bath(b);
        const FourVector p = random_on_shell(rng, 1.1);
        const double lam = b.beta * (b.epsilon - b.pi_eps);
        const double omega = juttner_density(p, j);
        const FourVector hat = tangent_w(p, w);

        // Ten percent extra friction leaves exactly ten percent of the
        // matched term, pointed against the projected frame vector.
        const FourVector r = flux_residual(p, b, j, 1.1 * lam);
        CHECK((r + 0.1 * lam * omega * hat).max_abs() <=
              1e-10 * (lam * omega * hat.max_abs() + 1e-300));

        // No friction at all leaves the full diffusive term.
        const FourVector r0 = flux_residual(p, b, j, 0.0);
        CHECK((r0 - lam * omega * hat).max_abs() <=
              1e-10 * (lam * omega * hat.max_abs() + 1e-300));
    }

    // Under the reversed convention the friction adds to the diffusive
    // term instead of cancelling it, so no magnitude is stationary.
    for (int t = 0; t < 50; ++t) {
        const FourVector w = random_unit_timelike(rng);
        BathParams b = random_bath(rng, w);
        b.friction_sign = FrictionSign::reversed;
        const JuttnerParams j = JuttnerParams::from_bath(b);
        const FourVector p = random_on_shell(rng, 1.4);
        const double omega = juttner_density(p, j);
        const FourVector hat = tangent_w(p, w);
        const double expect = (b.beta * (b.epsilon - b.pi_eps) + b.lambda) * omega;
        const FourVector r = flux_residual(p, b, j);
        CHECK((r - expect * hat).max_abs() <= 1e-10 * (expect * hat.max_abs() + 1e-300));
    }

    // The degenerate bath epsilon = pi_eps is stationary only with the
    // friction switched off entirely.
    const BathParams flat = BathParams::synthetic(1.0, 1.5, 1.5, 0.0, 1.0, kRest);
    const JuttnerParams jf = JuttnerParams::from_bath(flat);
    std::mt19937 rng2(7);
    const FourVector p = random_on_shell(rng2, 1.0);
    CHECK(flux_residual(p, flat, jf, 0.0).max_abs() <= 1e-12);
    CHECK(flux_residual(p, flat, jf, 1.0).max_abs() > 0.1 * juttner_density(p, jf));
}

TEST_CASE("comoving momenta feel no residual for any friction") {
    std::mt19937 rng(59);
    for (int t = 0; t < 50; ++t) {
        const FourVector w = random_unit_timelike(rng);
        const BathParams b = random_bath(rng, w);
        const JuttnerParams j = JuttnerParams::from_bath(b);
        const double m = 0.5 + 2.0 * (t % 3);
        const FourVector p = m * w;
        const double omega = juttner_density(p, j);
        const double scale = b.beta * b.epsilon * omega * std::max(1.0, m * m);
        CHECK(flux_residual(p, b, j).max_abs() <= 1e-12 * scale);
        CHECK(flux_residual(p, b, j, 17.0 * (t + 1)).max_abs() <= 1e-10 * scale * (t + 1));
        CHECK(reversible_drift(p, b, j).max_abs() <= 1e-12 * b.beta * b.epsilon);
    }
}

TEST_CASE("reversible drift reproduces the friction of the adopted convention") {
    std::mt19937 rng(67);
    for (int t = 0; t < 10000; ++t) {
        const FourVector w = random_unit_timelike(rng);
        const BathParams b = random_bath(rng, w);
        const JuttnerParams j = JuttnerParams::from_bath(b, -0.3 + 0.1 * (t % 7));
        const FourVector p = random_on_shell(rng, 0.3 + 2.5 * (t % 3));

        const FourVector rev = reversible_drift(p, b, j);
        const FourVector fric = friction_drift(p, b);
        const double scale = b.beta * b.epsilon * (1.0 + tangent_w(p, w).max_abs());
        CHECK((rev - fric).max_abs() <= 1e-12 * scale);
    }

    // Reversing the friction sign breaks detailed balance: the applied
    // drift becomes the exact opposite of the reversible one.
    for (int t = 0; t < 100; ++t) {
        const FourVector w = random_unit_timelike(rng);
        BathParams b = random_bath(rng, w);
        b.friction_sign = FrictionSign::reversed;
        const JuttnerParams j = JuttnerParams::from_bath(b);
        const FourVector p = random_on_shell(rng, 1.2);
        const FourVector rev = reversible_drift(p, b, j);
        const FourVector fric = friction_drift(p, b);
        CHECK((rev + fric).max_abs() <= 1e-12 * b.beta * b.epsilon *
                                            (1.0 + tangent_w(p, w).max_abs()));
    }

    // At the bath's own rest point the drift vanishes.
    const BathParams rb = BathParams::synthetic(1.0, 2.0, 0.5, 1.5, 1.0, kRest);
    const JuttnerParams jr = JuttnerParams::from_bath(rb);
    CHECK(reversible_drift({2.0, 0.0, 0.0, 0.0}, rb, jr).max_abs() <= 1e-14);

    // Explicit scaling in beta and in epsilon - pi_eps.
    std::mt19937 rng3(3);
    const FourVector w = random_unit_timelike(rng3);
    const FourVector p = random_on_shell(rng3, 1.5);
    const BathParams b1 = BathParams::synthetic(0.8, 2.0, 0.5, 0.8 * 1.5, 1.0, w);
    const BathParams b2 = BathParams::synthetic(1.6, 2.0, 0.5, 1.6 * 1.5, 1.0, w);
    const BathParams b3 = BathParams::synthetic(0.8, 3.5, 0.5, 0.8 * 3.0, 1.0, w);
    const FourVector d1 = reversible_drift(p, b1, JuttnerParams::from_bath(b1));
    const FourVector d2 = reversible_drift(p, b2, JuttnerParams::from_bath(b2));
    const FourVector d3 = reversible_drift(p, b3, JuttnerParams::from_bath(b3));
    CHECK((d2 - 2.0 * d1).max_abs() <= 1e-12 * d1.max_abs());
    CHECK((d3 - 2.0 * d1).max_abs() <= 1e-12 * d1.max_abs());

    // The shell weight gamma never reaches the drift: alpha kills the
    // momentum direction.
    const FourVector dg =
        reversible_drift(p, b1, JuttnerParams::from_bath(b1, 2.5));
    CHECK((dg - d1).max_abs() <= 1e-11 * (1.0 + d1.max_abs()));
}

TEST_CASE("drifts and residuals transform as vectors under boosts") {
    std::mt19937 rng(73);
    for (int t = 0; t < 100; ++t) {
        const FourVector w = random_unit_timelike(rng, 1.0);
        const BathParams b = random_bath(rng, w);
        const JuttnerParams j = JuttnerParams::from_bath(b);
        const FourVector p = random_on_shell(rng, 1.0, 1.5);
        const Boost L = random_boost(rng, 0.6);

        BathParams bb = b;
        bb.w = L.apply(w);
        const JuttnerParams jb = JuttnerParams::from_bath(bb);
        const FourVector rev = reversible_drift(L.apply(p), bb, jb);
        const FourVector want = L.apply(reversible_drift(p, b, j));
        CHECK((rev - want).max_abs() <= 1e-10 * (1.0 + want.max_abs()));

        const double lam = 0.7 * b.beta * (b.epsilon - b.pi_eps);
        const FourVector res = flux_residual(L.apply(p), bb, jb, lam);
        const FourVector wres = L.apply(flux_residual(p, b, j, lam));
        CHECK((res - wres).max_abs() <= 1e-10 * (1.0 + wres.max_abs()));
    }
}

TEST_CASE("shell moments match independent quadrature and their limits") {
    CHECK(juttner_moment(1.0, 2.0, 0) == 1.0);
    CHECK(juttner_moment(0.3, 5.0, 0, 0) == 1.0);

    // Frozen references from 40-digit quadrature; the first is also
    // the modified Bessel ratio 3 m K2(beta m) / (beta K1(beta m)).
    CHECK(juttner_moment(1.0, 2.0, 2) ==
          doctest::Approx(2.7214616381456842).epsilon(1e-12));
    CHECK(juttner_moment(1.3, 0.9, 3) ==
          doctest::Approx(50.340865181835183).epsilon(1e-12));
    CHECK(juttner_moment(0.8, 5.0, 4, 0) ==
          doctest::Approx(1.3732130064219225).epsilon(1e-12));
    CHECK(juttner_moment(2.0, 0.7, 1) ==
          doctest::Approx(3.7646094336985842).epsilon(1e-12));

    // The two measures disagree by a clear margin at moderate beta m,
    // which is what makes the stationary-profile fits discriminating.
    CHECK(juttner_moment(1.0, 2.0, 2, 0) ==
          doctest::Approx(3.8267616079766155).epsilon(1e-12));
    CHECK(juttner_moment(1.0, 2.0, 2, 1) / juttner_moment(1.0, 2.0, 2, 0) < 0.75);

    // Deep nonrelativistic baths recover equipartition: <p^2>/(2m)
    // approaches (3/2)/beta, with the known 1.5/(beta m) correction
    // shrinking tenfold per tenfold in beta.
    const double k200 = juttner_moment(1.0, 200.0, 2) / 2.0;
    const double k2000 = juttner_moment(1.0, 2000.0, 2) / 2.0;
    CHECK(juttner_moment(1.0, 200.0, 2) ==
          doctest::Approx(0.015112639926450136).epsilon(1e-12));
    CHECK(juttner_moment(1.0, 2000.0, 2) ==
          doctest::Approx(0.0015011251405547336).epsilon(1e-12));
    CHECK(std::abs(k200 * 200.0 / 1.5 - 1.0) < 0.01);
    CHECK(std::abs(k2000 * 2000.0 / 1.5 - 1.0) < 0.001);
    CHECK(std::abs(k200 * 200.0 / 1.5 - 1.0) >
          5.0 * std::abs(k2000 * 2000.0 / 1.5 - 1.0));

    // Ultrarelativistic limit of the plain measure: <p> -> 3/beta.
    CHECK(juttner_moment(0.001, 1.0, 1, 0) ==
          doctest::Approx(3.0000002499987299).epsilon(1e-10));
    CHECK(std::abs(juttner_moment(0.001, 1.0, 1, 0) / 3.0 - 1.0) < 1e-6);

    CHECK_THROWS_AS(juttner_moment(0.0, 1.0, 2), ConfigError);
    CHECK_THROWS_AS(juttner_moment(1.0, 0.0, 2), ConfigError);
    CHECK_THROWS_AS(juttner_moment(1.0, 1.0, -1), ConfigError);
    CHECK_THROWS_AS(juttner_moment(1.0, 1.0, 65), ConfigError);
    CHECK_THROWS_AS(juttner_moment(1.0, 1.0, 2, 2), ConfigError);

    // A temperature beyond float range starves the quadrature and the
    // failure is flagged rather than returned as garbage.
    CHECK_THROWS_AS(juttner_moment(1.0, 1e300, 2), ConvergenceError);
    CHECK_THROWS_AS(juttner_moment(1.0, 1e-300, 2), ConvergenceError);
}
