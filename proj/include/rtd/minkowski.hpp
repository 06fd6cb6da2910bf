#pragma once

#include <array>
#include <cmath>
#include <string>

#include "rtd/errors.hpp"

namespace rtd {

/// Metric signature is (+,-,-,-) with c = 1. All stored components are
/// contravariant; use lower()/raise() when a covariant tuple is needed.

/// Comparison scale for entry-wise checks: relative to the largest
/// magnitude in play, with an absolute floor so that all-zero data
/// still compares cleanly.
inline double tol_scale(double max_abs_entry, double rel) {
    return std::max(1e-14, rel * max_abs_entry);
}

class FourVector {
public:
    constexpr FourVector() : c_{0.0, 0.0, 0.0, 0.0} {}
    constexpr FourVector(double t, double x, double y, double z) : c_{t, x, y, z} {}

    double& operator[](int mu) { return c_[mu]; }
    constexpr double operator[](int mu) const { return c_[mu]; }

    constexpr double t() const { return c_[0]; }
    constexpr double x() const { return c_[1]; }
    constexpr double y() const { return c_[2]; }
    constexpr double z() const { return c_[3]; }

    FourVector operator+(const FourVector& o) const {
        return {c_[0] + o.c_[0], c_[1] + o.c_[1], c_[2] + o.c_[2], c_[3] + o.c_[3]};
    }
    FourVector operator-(const FourVector& o) const {
        return {c_[0] - o.c_[0], c_[1] - o.c_[1], c_[2] - o.c_[2], c_[3] - o.c_[3]};
    }
    FourVector operator*(double s) const {
        return {s * c_[0], s * c_[1], s * c_[2], s * c_[3]};
    }
    FourVector operator-() const { return {-c_[0], -c_[1], -c_[2], -c_[3]}; }
    FourVector& operator+=(const FourVector& o) {
        for (int mu = 0; mu < 4; ++mu) c_[mu] += o.c_[mu];
        return *this;
    }

    /// Euclidean magnitude of the spatial part.
    double spatial_norm() const {
        return std::sqrt(c_[1] * c_[1] + c_[2] * c_[2] + c_[3] * c_[3]);
    }
    /// Largest absolute component.
    double max_abs() const {
        double m = 0.0;
        for (double v : c_) m = std::max(m, std::abs(v));
        return m;
    }

private:
    std::array<double, 4> c_;
};

inline FourVector operator*(double s, const FourVector& v) { return v * s; }

/// Minkowski inner product a^mu b_mu = a^0 b^0 - a.b.
inline double dot(const FourVector& a, const FourVector& b) {
    return a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3];
}

/// Component tuple of the lowered vector: (a_0, a_1, a_2, a_3) = (a^0, -a^i).
inline FourVector lower(const FourVector& a) { return {a[0], -a[1], -a[2], -a[3]}; }

/// Inverse of lower(); flips the spatial signs back.
inline FourVector raise(const FourVector& a) { return {a[0], -a[1], -a[2], -a[3]}; }

inline bool is_timelike(const FourVector& a) { return dot(a, a) > 0.0; }
inline bool is_future_timelike(const FourVector& a) {
    return dot(a, a) > 0.0 && a[0] > 0.0;
}

/// Rank-2 tensor with both indices contravariant unless the call site
/// states otherwise. Row-major storage, t(mu, nu) = T^{mu nu}.
class Tensor2 {
public:
    Tensor2() : m_{} {}

    static Tensor2 zero() { return Tensor2(); }
    static Tensor2 identity() {
        Tensor2 t;
        for (int i = 0; i < 4; ++i) t(i, i) = 1.0;
        return t;
    }
    /// Component matrix of the metric (same for both index positions).
    static Tensor2 metric() {
        Tensor2 t;
        t(0, 0) = 1.0;
        t(1, 1) = t(2, 2) = t(3, 3) = -1.0;
        return t;
    }
    /// Outer product a^mu b^nu.
    static Tensor2 outer(const FourVector& a, const FourVector& b) {
        Tensor2 t;
        for (int mu = 0; mu < 4; ++mu)
            for (int nu = 0; nu < 4; ++nu) t(mu, nu) = a[mu] * b[nu];
        return t;
    }

    double& operator()(int mu, int nu) { return m_[4 * mu + nu]; }
    double operator()(int mu, int nu) const { return m_[4 * mu + nu]; }

    Tensor2 operator+(const Tensor2& o) const {
        Tensor2 t;
        for (int i = 0; i < 16; ++i) t.m_[i] = m_[i] + o.m_[i];
        return t;
    }
    Tensor2 operator-(const Tensor2& o) const {
        Tensor2 t;
        for (int i = 0; i < 16; ++i) t.m_[i] = m_[i] - o.m_[i];
        return t;
    }
    Tensor2 operator*(double s) const {
        Tensor2 t;
        for (int i = 0; i < 16; ++i) t.m_[i] = s * m_[i];
        return t;
    }

    /// Plain matrix product of component matrices.
    Tensor2 matmul(const Tensor2& o) const {
        Tensor2 t;
        for (int i = 0; i < 4; ++i)
            for (int k = 0; k < 4; ++k) {
                const double a = (*this)(i, k);
                for (int j = 0; j < 4; ++j) t(i, j) += a * o(k, j);
            }
        return t;
    }

    Tensor2 transpose() const {
        Tensor2 t;
        for (int mu = 0; mu < 4; ++mu)
            for (int nu = 0; nu < 4; ++nu) t(nu, mu) = (*this)(mu, nu);
        return t;
    }

    /// T^{mu nu} v_nu for a covariant tuple v (as produced by lower()).
    FourVector apply_covector(const FourVector& v_low) const {
        FourVector r;
        for (int mu = 0; mu < 4; ++mu) {
            double s = 0.0;
            for (int nu = 0; nu < 4; ++nu) s += (*this)(mu, nu) * v_low[nu];
            r[mu] = s;
        }
        return r;
    }

    /// Full contraction a_mu b_nu T^{mu nu} with covariant tuples a, b.
    double contract(const FourVector& a_low, const FourVector& b_low) const {
        double s = 0.0;
        for (int mu = 0; mu < 4; ++mu)
            for (int nu = 0; nu < 4; ++nu) s += a_low[mu] * (*this)(mu, nu) * b_low[nu];
        return s;
    }

    /// Trace against the metric: eta_{mu nu} T^{mu nu}.
    double metric_trace() const {
        return (*this)(0, 0) - (*this)(1, 1) - (*this)(2, 2) - (*this)(3, 3);
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : m_) m = std::max(m, std::abs(v));
        return m;
    }

    double max_asymmetry() const {
        double m = 0.0;
        for (int mu = 0; mu < 4; ++mu)
            for (int nu = mu + 1; nu < 4; ++nu)
                m = std::max(m, std::abs((*this)(mu, nu) - (*this)(nu, mu)));
        return m;
    }

    Tensor2 symmetrized() const {
        Tensor2 t;
        for (int mu = 0; mu < 4; ++mu)
            for (int nu = 0; nu < 4; ++nu)
                t(mu, nu) = 0.5 * ((*this)(mu, nu) + (*this)(nu, mu));
        return t;
    }

private:
    std::array<double, 16> m_;
};

/// Proper orthochronous Lorentz transformation. Despite the name the
/// class holds any matrix satisfying Lambda^T eta Lambda = eta with
/// Lambda^0_0 >= 1, so compositions (which pick up Wigner rotations)
/// stay representable. Construction validates the isometry defect
/// against a 1e-12 entry-wise tolerance.
class Boost {
public:
    /// Identity transformation.
    Boost();

    /// Wraps an explicit matrix Lambda^mu_nu; validates it.
    explicit Boost(const Tensor2& lambda);

    /// Pure boost with velocity beta = (vx, vy, vz), |beta| < 1.
    static Boost from_velocity(double vx, double vy, double vz);

    /// Pure boost taking the timelike future-pointing w to
    /// (sqrt(w.w), 0, 0, 0). Throws FrameError otherwise.
    static Boost to_rest_of(const FourVector& w);

    /// (Lambda v)^mu = Lambda^mu_nu v^nu.
    FourVector apply(const FourVector& v) const { return matrixed_apply(v); }

    /// Lambda T Lambda^T for a fully contravariant T.
    Tensor2 transform_tensor(const Tensor2& t) const;

    /// Composition: (*this) after other.
    Boost compose(const Boost& other) const;

    Boost inverse() const;

    const Tensor2& matrix() const { return lambda_; }

    /// Largest entry of Lambda^T eta Lambda - eta; zero for an exact isometry.
    double isometry_defect() const;

private:
    FourVector matrixed_apply(const FourVector& v) const {
        FourVector r;
        for (int mu = 0; mu < 4; ++mu) {
            double s = 0.0;
            for (int nu = 0; nu < 4; ++nu) s += lambda_(mu, nu) * v[nu];
            r[mu] = s;
        }
        return r;
    }

    Tensor2 lambda_;
};

} // namespace rtd
