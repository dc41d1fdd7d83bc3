#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "rvgal/estimators.hpp"
#include "rvgal/model.hpp"
#include "rvgal/rng.hpp"

namespace rvgal::testing {

inline GroupData random_group(ModelKind kind, std::size_t n, std::size_t p, Rng& rng, std::string id = "g") {
    GroupData g;
    g.group_id = std::move(id);
    const auto ni = static_cast<Eigen::Index>(n);
    const auto pi = static_cast<Eigen::Index>(p);
    g.X.resize(ni, pi);
    g.y.resize(ni);
    g.z.resize(ni);
    for (Eigen::Index j = 0; j < ni; ++j) {
        for (Eigen::Index k = 0; k < pi; ++k) g.X(j, k) = rng.normal();
        if (kind == ModelKind::LinearMixed) {
            g.z(j) = rng.normal();
            g.y(j) = 2.0 * rng.normal();
        } else {
            g.z(j) = 1.0;
            g.y(j) = rng.uniform() < 0.5 ? 1.0 : 0.0;
        }
    }
    return g;
}

/// Uniform point with beta in [-2, 2] and log-variances in [-1.5, 1].
inline Vector random_theta(const ThetaLayout& layout, Rng& rng) {
    Vector t(static_cast<Eigen::Index>(layout.dim()));
    for (Eigen::Index k = 0; k < t.size(); ++k) {
        t(k) = static_cast<std::size_t>(k) < layout.n_fixed ? -2.0 + 4.0 * rng.uniform() : -1.5 + 2.5 * rng.uniform();
    }
    return t;
}

inline double fd_step(double x) { return 1e-5 * std::max(1.0, std::abs(x)); }

inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x) {
    Vector g(x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double h = fd_step(x(k));
        Vector a = x, b = x;
        a(k) += h;
        b(k) -= h;
        g(k) = (f(a) - f(b)) / (2.0 * h);
    }
    return g;
}

/// Central differences of an analytic gradient.
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& g, const Vector& x) {
    Matrix J(x.size(), x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double h = fd_step(x(k));
        Vector a = x, b = x;
        a(k) += h;
        b(k) -= h;
        J.col(k) = (g(a) - g(b)) / (2.0 * h);
    }
    return J;
}

/// Largest entrywise |a - b| / max(1, |b|).
inline double max_rel_err(const Matrix& a, const Matrix& b) {
    return ((a - b).array().abs() / b.array().abs().max(1.0)).maxCoeff();
}

/// Delta-method standard errors of the self-normalized Fisher and Louis estimates.
struct EstimatorErrors {
    Vector grad_se;
    Matrix hess_se;
};

inline EstimatorErrors estimator_standard_errors(ModelKind kind, const GroupData& group, const Theta& theta,
                                                 const WeightedAlphaSamples& s, const Vector& g_hat,
                                                 const Matrix& h_hat) {
    const auto d = static_cast<Eigen::Index>(theta.dim());
    const Matrix m_hat = h_hat + g_hat * g_hat.transpose();
    Vector gvar = Vector::Zero(d);
    Matrix hvar = Matrix::Zero(d, d);
    for (Eigen::Index i = 0; i < s.alphas.size(); ++i) {
        const double w = s.norm_weights(i);
        if (w == 0.0) continue;
        const Vector gs = joint_grad(kind, group, s.alphas(i), theta);
        const Matrix ms = gs * gs.transpose() + joint_hessian(kind, group, s.alphas(i), theta);
        const Vector dg = gs - g_hat;
        const Matrix psi = (ms - m_hat) - dg * g_hat.transpose() - g_hat * dg.transpose();
        gvar += w * w * dg.cwiseAbs2();
        hvar += w * w * psi.cwiseAbs2();
    }
    return {gvar.cwiseSqrt(), hvar.cwiseSqrt()};
}

}  // namespace rvgal::testing
