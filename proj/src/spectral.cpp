#include "rtd/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "rtd/errors.hpp"

namespace rtd {
namespace {

using GK = boost::math::quadrature::gauss_kronrod<double, 15>;

constexpr double kTwoPi = 6.28318530717958647692528676656;

/// Bose occupation n(x) = 1/(e^x - 1); underflows cleanly to zero.
double bose_occupation(double x) {
    if (x > 700.0) return 0.0;
    return 1.0 / std::expm1(x);
}

void require_unit_timelike(const FourVector& w) {
    if (!(w[0] > 0.0)) throw FrameError("bath velocity must be future-directed");
    if (std::abs(dot(w, w) - 1.0) > 1e-12)
        throw FrameError("bath velocity must be unit timelike (w.w = 1)");
}

/// Argument x beyond which x^3 n(x) has decayed below 1e-16 of its peak.
/// Computed once by bisection; the peak sits at the Wien point.
double planck_cutoff_argument() {
    auto h = [](double x) { return x * x * x * bose_occupation(x); };
    const double xpeak = 2.82143937212;
    const double target = 1e-16 * h(xpeak);
    double lo = xpeak, hi = 60.0;
    while (h(hi) > target) hi *= 1.5;
    for (int i = 0; i < 200; ++i) {
        double mid = 0.5 * (lo + hi);
        (h(mid) > target ? lo : hi) = mid;
    }
    return hi;
}

void accumulate(QuadResult& into, double scale, double value, double err, bool ok) {
    into.value += scale * value;
    into.error += std::abs(scale) * err;
    into.converged = into.converged && ok;
}

/// Integral of kappa^power * g(kappa) over the continuum window, split at
/// the table breakpoints so the piecewise-linear case is captured exactly.
QuadResult radial_moment(const SpectralDensity& g, int power) {
    QuadResult q;
    if (!g.has_continuum()) return q;

    std::vector<double> pts;
    pts.push_back(0.0);
    for (double b : g.radial_breakpoints()) pts.push_back(b);
    pts.push_back(g.radial_cutoff());

    auto f = [&](double k) {
        if (!(k > 0.0)) return 0.0;
        double v = g.radial_density(k);
        if (!std::isfinite(v)) return 0.0;
        double kp = k * k;
        if (power == 4) kp *= k * k;
        return kp * v;
    };
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        if (!(pts[i + 1] > pts[i])) continue;
        double err = 0.0;
        double v = GK::integrate(f, pts[i], pts[i + 1], 12, 1e-10, &err);
        accumulate(q, 1.0, v, err, true);
    }
    q.converged = q.error <= 1e-8 * std::max(std::abs(q.value), 1e-30) + 1e-14;
    return q;
}

/// The bath velocity as seen from the rest frame of the density's axis.
FourVector to_axis_frame(const SpectralDensity& g, const FourVector& w) {
    const FourVector& a = g.axis();
    if (a[1] == 0.0 && a[2] == 0.0 && a[3] == 0.0) return w;
    return Boost::to_rest_of(a).apply(w);
}

} // namespace

SpectralDensity SpectralDensity::planck(double beta, double normalization) {
    if (!(beta > 0.0)) throw InvariantViolation("planck density needs beta > 0");
    if (!(normalization >= 0.0)) throw InvariantViolation("spectral density must be nonnegative");
    SpectralDensity g;
    g.kind_ = Continuum::planck;
    g.beta_ = beta;
    g.norm_ = normalization;
    return g;
}

SpectralDensity SpectralDensity::monochromatic(double k0, double weight) {
    if (!(k0 > 0.0)) throw InvariantViolation("monochromatic density needs k0 > 0");
    return shell_atoms({ShellAtom{0.0, k0, weight}});
}

SpectralDensity SpectralDensity::custom_table(std::vector<std::pair<double, double>> samples) {
    if (samples.size() < 2) throw InvariantViolation("radial table needs at least two samples");
    SpectralDensity g;
    g.kind_ = Continuum::table;
    g.tab_k_.reserve(samples.size());
    g.tab_g_.reserve(samples.size());
    double prev = -1.0;
    for (auto& [k, val] : samples) {
        if (!(k >= 0.0) || !(k > prev))
            throw InvariantViolation("radial table nodes must be ascending and nonnegative");
        if (!(val >= 0.0)) throw InvariantViolation("spectral density must be nonnegative");
        g.tab_k_.push_back(k);
        g.tab_g_.push_back(val);
        prev = k;
    }
    return g;
}

SpectralDensity SpectralDensity::shell_atoms(std::vector<ShellAtom> atoms) {
    SpectralDensity g;
    for (const ShellAtom& a : atoms) {
        if (!(a.s >= 0.0)) throw InvariantViolation("shell atoms must lie on the forward cone (s >= 0)");
        if (!(a.weight >= 0.0)) throw InvariantViolation("spectral density must be nonnegative");
        if (a.sigma * a.sigma < a.s * (1.0 - 1e-12))
            throw InvariantViolation("shell frequency below its mass shell (sigma < sqrt(s))");
    }
    g.atoms_ = std::move(atoms);
    return g;
}

SpectralDensity SpectralDensity::boosted(const Boost& lambda) const {
    SpectralDensity g = *this;
    g.axis_ = lambda.apply(axis_);
    return g;
}

double SpectralDensity::radial_density(double kmag) const {
    switch (kind_) {
        case Continuum::none:
            return 0.0;
        case Continuum::planck:
            if (!(kmag > 0.0)) return std::numeric_limits<double>::infinity();
            return norm_ / (kmag * std::expm1(std::min(beta_ * kmag, 700.0)));
        case Continuum::table: {
            if (kmag < tab_k_.front() || kmag > tab_k_.back()) return 0.0;
            auto it = std::upper_bound(tab_k_.begin(), tab_k_.end(), kmag);
            if (it == tab_k_.begin()) return tab_g_.front();
            if (it == tab_k_.end()) return tab_g_.back();
            std::size_t hi = static_cast<std::size_t>(it - tab_k_.begin());
            double t = (kmag - tab_k_[hi - 1]) / (tab_k_[hi] - tab_k_[hi - 1]);
            return (1.0 - t) * tab_g_[hi - 1] + t * tab_g_[hi];
        }
    }
    return 0.0;
}

double SpectralDensity::radial_cutoff() const {
    switch (kind_) {
        case Continuum::none:
            return 0.0;
        case Continuum::planck: {
            static const double xcut = planck_cutoff_argument();
            return xcut / beta_;
        }
        case Continuum::table:
            return tab_k_.back();
    }
    return 0.0;
}

std::vector<double> SpectralDensity::radial_breakpoints() const {
    if (kind_ != Continuum::table) return {};
    std::vector<double> pts;
    for (std::size_t i = 0; i + 1 < tab_k_.size(); ++i)
        if (tab_k_[i] > 0.0) pts.push_back(tab_k_[i]);
    return pts;
}

QuadResult energy_density(const SpectralDensity& g, const FourVector& w) {
    require_unit_timelike(w);
    FourVector wp = to_axis_frame(g, w);
    double c0 = wp[0];
    double u = wp.spatial_norm();

    QuadResult out;
    if (g.has_continuum()) {
        QuadResult i4 = radial_moment(g, 4);
        double angular = kTwoPi * (2.0 * c0 * c0 + (2.0 / 3.0) * u * u);
        accumulate(out, angular, i4.value, i4.error, i4.converged);
    }
    for (const ShellAtom& a : g.atoms()) {
        double kap2 = std::max(0.0, a.sigma * a.sigma - a.s);
        out.value += a.weight * (a.sigma * a.sigma * c0 * c0 + kap2 * u * u / 3.0);
    }
    return out;
}

QuadResult pressure(const SpectralDensity& g, const FourVector& w) {
    QuadResult e = energy_density(g, w);
    double mass_term = 0.0;
    for (const ShellAtom& a : g.atoms()) mass_term += a.weight * a.s;
    QuadResult p;
    p.value = (e.value - mass_term) / 3.0;
    p.error = e.error / 3.0;
    p.converged = e.converged;
    return p;
}

QuadResult total_weight(const SpectralDensity& g) {
    QuadResult out;
    if (g.has_continuum()) {
        QuadResult i2 = radial_moment(g, 2);
        accumulate(out, 2.0 * kTwoPi, i2.value, i2.error, i2.converged);
    }
    for (const ShellAtom& a : g.atoms()) out.value += a.weight;
    return out;
}

double correlation_time_estimate(const SpectralDensity& g) {
    QuadResult z = total_weight(g);
    QuadResult e = energy_density(g, g.axis());
    if (!(e.value > 0.0))
        throw InvariantViolation("correlation time undefined for an empty spectral density");
    return std::sqrt(z.value / e.value);
}

BoseCurrent bose_current(double beta, const FourVector& w, double normalization) {
    if (!(beta > 0.0)) throw InvariantViolation("bose current needs beta > 0");
    require_unit_timelike(w);
    double c0 = w[0];
    double u = w.spatial_norm();

    // Polar axis along the spatial part of w; the occupation depends on
    // the Doppler factor c0 - u*mu alone, so the azimuth is already
    // integrated out and the current has only time and axis components.
    double inner_rel = 0.0;
    auto inner = [&](double mu) {
        double dop = c0 - u * mu;
        double cut = 60.0 / (beta * dop);
        double err = 0.0;
        double v = GK::integrate(
            [&](double k) { return k * k * bose_occupation(beta * dop * k); }, 0.0, cut, 10,
            1e-10, &err);
        if (v != 0.0) inner_rel = std::max(inner_rel, err / std::abs(v));
        return v;
    };

    double err0 = 0.0, errp = 0.0;
    double j0 = GK::integrate([&](double mu) { return inner(mu); }, -1.0, 1.0, 10, 1e-10, &err0);
    double jp = GK::integrate([&](double mu) { return mu * inner(mu); }, -1.0, 1.0, 10, 1e-10, &errp);

    BoseCurrent out;
    double scale = -kTwoPi * normalization;
    out.current[0] = scale * j0;
    if (u > 1e-15) {
        for (int i = 1; i < 4; ++i) out.current[i] = scale * jp * w[i] / u;
    }

    double mag = 0.0;
    for (int m = 0; m < 4; ++m) mag += out.current[m] * out.current[m];
    mag = std::sqrt(mag);
    out.quad.value = mag;
    out.quad.error = std::abs(scale) * (err0 + std::abs(errp)) + inner_rel * mag;
    out.quad.converged = out.quad.error <= 1e-6 * std::max(mag, 1e-30);

    // Least-squares fit of J = -(3r/2) w over the four components.
    double jw = 0.0, ww = 0.0;
    for (int m = 0; m < 4; ++m) {
        jw += out.current[m] * w[m];
        ww += w[m] * w[m];
    }
    out.r = -(2.0 / 3.0) * jw / ww;
    double res2 = 0.0;
    for (int m = 0; m < 4; ++m) {
        double d = out.current[m] + 1.5 * out.r * w[m];
        res2 += d * d;
    }
    out.residual = mag > 0.0 ? std::sqrt(res2) / mag : 0.0;
    if (out.residual > 1e-6)
        throw InvariantViolation("bose current is not parallel to the bath velocity");
    return out;
}

BathParams BathParams::synthetic(double beta, double epsilon, double pi_eps, double lambda,
                                 double tau_c, const FourVector& w) {
    BathParams b;
    b.beta = beta;
    b.epsilon = epsilon;
    b.pi_eps = pi_eps;
    b.lambda = lambda;
    b.tau_c = tau_c;
    b.w = w;
    b.validate(false);
    return b;
}

void BathParams::validate(bool spectral_origin) const {
    if (!(beta > 0.0)) throw InvariantViolation("bath needs beta > 0");
    if (!(tau_c > 0.0)) throw InvariantViolation("bath needs tau_c > 0");
    if (!(lambda >= 0.0)) throw InvariantViolation("bath needs lambda >= 0");
    require_unit_timelike(w);
    double tol = tol_scale(std::max(std::abs(epsilon), 1.0), 1e-9);
    if (pi_eps < -tol) throw InvariantViolation("bath pressure must be nonnegative");
    double bound = spectral_origin ? 3.0 * pi_eps : pi_eps;
    if (epsilon < bound - tol)
        throw InvariantViolation(spectral_origin
                                     ? "spectral bath violates epsilon >= 3 pi"
                                     : "bath violates epsilon >= pi");
}

BathParams bath_from_spectral(const SpectralDensity& g, double beta, const FourVector& w,
                              double tau_c) {
    QuadResult e = energy_density(g, w);
    QuadResult p = pressure(g, w);
    BathParams b;
    b.beta = beta;
    b.epsilon = e.value;
    b.pi_eps = std::max(p.value, 0.0);
    if (b.epsilon < b.pi_eps)
        throw InvariantViolation("invalid bath: energy density below pressure");
    b.lambda = beta * (b.epsilon - b.pi_eps);
    b.tau_c = tau_c;
    b.w = w;
    b.validate(true);
    return b;
}

} // namespace rtd
