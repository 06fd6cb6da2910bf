#include "rtd/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "rtd/errors.hpp"

namespace rtd {
namespace {

void require_timelike_momentum(const FourVector& p) {
    if (!(dot(p, p) > 0.0))
        throw InvariantViolation("momentum must be timelike (p.p > 0)");
}

/// alpha = P C P contracted out by hand:
///   alpha = (2 pi - (eps+pi)(w.p)^2/p.p) P - (eps+pi) (Pw) x (Pw).
/// The contracted form avoids the roundoff blowup of the literal triple
/// product at high rapidity; equality with P C P is covered by tests.
/// No construction-time checks here; used by the finite-difference
/// divergence where they would dominate cost.
Tensor2 raw_alpha(const FourVector& p, const BathParams& bath) {
    double p2 = dot(p, p);
    double wp = dot(bath.w, p);
    double sum = bath.epsilon + bath.pi_eps;
    Tensor2 P = projector(p);
    FourVector pw = bath.w - p * (wp / p2);
    Tensor2 out = P * (2.0 * bath.pi_eps - sum * wp * wp / p2);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) out(i, j) -= sum * pw[i] * pw[j];
    return out;
}

Eigen::Matrix4d to_eigen(const Tensor2& t) {
    Eigen::Matrix4d m;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) m(i, j) = t(i, j);
    return m;
}

} // namespace

Tensor2 projector(const FourVector& p) {
    require_timelike_momentum(p);
    double p2 = dot(p, p);
    Tensor2 P = Tensor2::metric();
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) P(i, j) -= p[i] * p[j] / p2;
    return P;
}

Tensor2 c_tensor(const FourVector& p, const BathParams& bath) {
    require_timelike_momentum(p);
    bath.validate(false);
    double p2 = dot(p, p);
    double wp = dot(bath.w, p);
    FourVector wl = lower(bath.w);
    double sum = bath.epsilon + bath.pi_eps;
    double diag = 2.0 * bath.pi_eps - sum * wp * wp / p2;
    Tensor2 C = Tensor2::metric() * diag; // covariant eta has the same components
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) C(i, j) -= sum * wl[i] * wl[j];
    return C;
}

DiffusionTensor alpha(const FourVector& p, const BathParams& bath) {
    DiffusionTensor d{raw_alpha(p, bath), p, bath.w, bath};
    const Tensor2& a = d.alpha;
    double scale = a.max_abs();

    // Degeneracy along p, judged relative to the magnitudes that enter
    // the contraction before cancellation (the boost-amplified entries),
    // so the check stays meaningful at high rapidity.
    double p2 = dot(p, p);
    double wp = dot(bath.w, p);
    FourVector pw = bath.w - p * (wp / p2);
    double sum = bath.epsilon + bath.pi_eps;
    double pre = std::abs(2.0 * bath.pi_eps - sum * wp * wp / p2) * projector(p).max_abs() +
                 sum * pw.max_abs() * pw.max_abs() + scale;
    FourVector residual = a.apply_covector(lower(p));
    double tol = tol_scale(pre * p.max_abs(), 1e-12);
    if (residual.max_abs() > tol)
        throw InvariantViolation("diffusion tensor lost its degeneracy along p");

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(to_eigen(a));
    if (es.eigenvalues().minCoeff() < -1e-10 * std::max(scale, 1e-300))
        throw InvariantViolation("diffusion tensor component matrix is indefinite");
    return d;
}

double quadratic_form(const FourVector& a, const FourVector& p, const BathParams& bath) {
    DiffusionTensor d = alpha(p, bath);
    FourVector al = lower(a);
    return d.alpha.contract(al, al);
}

FourVector friction_drift(const FourVector& p, const BathParams& bath) {
    bath.validate(false);
    Tensor2 P = projector(p);
    FourVector pw = P.apply_covector(lower(bath.w));
    double s = bath.friction_sign == FrictionSign::flux_zero
                   ? bath.beta * (bath.epsilon - bath.pi_eps)
                   : -bath.lambda;
    return s * pw;
}

ItoDrift ito_drift(const FourVector& p, const BathParams& bath, double h) {
    require_timelike_momentum(p);
    if (h <= 0.0) h = 1e-4 * std::max(1.0, p.max_abs());

    auto divergence_at = [&](double step) {
        FourVector d{};
        for (int nu = 0; nu < 4; ++nu) {
            FourVector pp = p, pm = p;
            pp[nu] += step;
            pm[nu] -= step;
            if (!(dot(pp, pp) > 0.0) || !(dot(pm, pm) > 0.0))
                throw InvariantViolation(
                    "finite-difference step crosses the light cone; reduce h");
            Tensor2 ap = raw_alpha(pp, bath);
            Tensor2 am = raw_alpha(pm, bath);
            for (int mu = 0; mu < 4; ++mu)
                d[mu] += (ap(nu, mu) - am(nu, mu)) / (2.0 * step);
        }
        return d;
    };

    FourVector dh = divergence_at(h);
    FourVector dh2 = divergence_at(0.5 * h);

    ItoDrift out;
    for (int mu = 0; mu < 4; ++mu) {
        out.divergence[mu] = (4.0 * dh2[mu] - dh[mu]) / 3.0;
        out.fd_error = std::max(out.fd_error, std::abs(dh2[mu] - dh[mu]) / 3.0);
    }
    out.friction = friction_drift(p, bath);
    out.total = out.divergence + out.friction;
    out.step_warning = out.fd_error > 1e-6 * std::max(out.total.max_abs(), 1e-30);
    return out;
}

NoiseFactor noise_factor(const DiffusionTensor& d) {
    Eigen::Matrix4d m = to_eigen(d.alpha) * 2.0;
    double scale = m.cwiseAbs().maxCoeff();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(m);

    NoiseFactor nf;
    nf.min_eigenvalue = es.eigenvalues().minCoeff();
    if (nf.min_eigenvalue < -1e-8 * scale)
        throw InvariantViolation("noise factorization of an indefinite diffusion tensor");

    // Largest channel first; eigenvector signs pinned for determinism.
    for (int idx = 3; idx >= 0; --idx) {
        double ev = es.eigenvalues()(idx);
        if (ev < 1e-12 * scale) {
            ++nf.clamped;
            continue;
        }
        Eigen::Vector4d v = es.eigenvectors().col(idx);
        int imax = 0;
        for (int i = 1; i < 4; ++i)
            if (std::abs(v(i)) > std::abs(v(imax))) imax = i;
        if (v(imax) < 0.0) v = -v;
        double amp = std::sqrt(ev);
        FourVector col{amp * v(0), amp * v(1), amp * v(2), amp * v(3)};
        if (nf.rank < 3) nf.columns[nf.rank] = col;
        ++nf.rank;
    }
    if (nf.rank > 3)
        throw InvariantViolation("diffusion tensor has more than three noise channels");
    return nf;
}

} // namespace rtd
