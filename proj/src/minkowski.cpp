#include "rtd/minkowski.hpp"

#include <sstream>

namespace rtd {

namespace {

void validate_lorentz(const Tensor2& lambda) {
    const Tensor2 eta = Tensor2::metric();
    const Tensor2 defect = lambda.transpose().matmul(eta).matmul(lambda) - eta;
    const double scale = std::max(1.0, lambda.max_abs());
    if (defect.max_abs() > tol_scale(scale * scale, 1e-12)) {
        std::ostringstream os;
        os << "Lorentz matrix fails Lambda^T eta Lambda = eta by " << defect.max_abs();
        throw InvariantViolation(os.str());
    }
    if (lambda(0, 0) < 1.0 - 1e-12)
        throw InvariantViolation("Lorentz matrix is not orthochronous (Lambda^0_0 < 1)");
}

} // namespace

Boost::Boost() : lambda_(Tensor2::identity()) {}

Boost::Boost(const Tensor2& lambda) : lambda_(lambda) { validate_lorentz(lambda_); }

Boost Boost::from_velocity(double vx, double vy, double vz) {
    const double v2 = vx * vx + vy * vy + vz * vz;
    if (v2 >= 1.0) throw FrameError("boost velocity must satisfy |v| < 1");
    const double gamma = 1.0 / std::sqrt(1.0 - v2);
    const double v[3] = {vx, vy, vz};

    Tensor2 m = Tensor2::identity();
    m(0, 0) = gamma;
    for (int i = 0; i < 3; ++i) {
        m(0, i + 1) = -gamma * v[i];
        m(i + 1, 0) = -gamma * v[i];
    }
    // gamma^2/(1+gamma) = (gamma-1)/v^2, written without the 0/0 at v = 0.
    const double proj = gamma * gamma / (1.0 + gamma);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m(i + 1, j + 1) = (i == j ? 1.0 : 0.0) + proj * v[i] * v[j];
    return Boost(m);
}

Boost Boost::to_rest_of(const FourVector& w) {
    const double w2 = dot(w, w);
    if (!(w2 > 0.0))
        throw FrameError("rest frame requires a timelike vector (w.w > 0)");
    if (!(w[0] > 0.0))
        throw FrameError("rest frame requires a future-pointing vector (w^0 > 0)");
    return from_velocity(w[1] / w[0], w[2] / w[0], w[3] / w[0]);
}

Tensor2 Boost::transform_tensor(const Tensor2& t) const {
    return lambda_.matmul(t).matmul(lambda_.transpose());
}

Boost Boost::compose(const Boost& other) const {
    return Boost(lambda_.matmul(other.lambda_));
}

Boost Boost::inverse() const {
    // Lambda^{-1} = eta Lambda^T eta holds for every Lorentz matrix.
    const Tensor2 eta = Tensor2::metric();
    return Boost(eta.matmul(lambda_.transpose()).matmul(eta));
}

double Boost::isometry_defect() const {
    const Tensor2 eta = Tensor2::metric();
    return (lambda_.transpose().matmul(eta).matmul(lambda_) - eta).max_abs();
}

} // namespace rtd
