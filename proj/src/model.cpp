#include "rvgal/model.hpp"

#include <cmath>
#include <unordered_set>

#include "rvgal/error.hpp"

namespace rvgal {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void require_finite(const Vector& v, const char* what) {
    if (!v.allFinite()) {
        throw InvalidInput(std::string(what) + " contains non-finite entries");
    }
}

void check_theta_for(ModelKind kind, const GroupData& group, const Theta& theta) {
    const auto& layout = theta.layout();
    const auto expected = ThetaLayout::for_model(kind, group.n_fixed());
    if (!(layout == expected)) {
        throw InvalidInput("theta layout does not match model " + std::string(to_string(kind)) +
                           " with p = " + std::to_string(group.n_fixed()));
    }
    group.validate(kind);
}

struct LmmMarginal {
    Matrix sigma_inv;
    Vector resid;  // y - X beta
    Vector v;      // sigma^{-1} resid
    double logdet = 0.0;
    double var_alpha = 0.0;
    double var_eps = 0.0;
};

LmmMarginal lmm_marginal(const GroupData& group, const Theta& theta) {
    check_theta_for(ModelKind::LinearMixed, group, theta);
    const auto p = static_cast<Eigen::Index>(group.n_fixed());
    const auto n = static_cast<Eigen::Index>(group.size());
    LmmMarginal m;
    m.var_alpha = std::exp(theta[group.n_fixed()]);
    m.var_eps = std::exp(theta[group.n_fixed() + 1]);
    Matrix sigma = m.var_alpha * group.z * group.z.transpose();
    sigma.diagonal().array() += m.var_eps;
    Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() != Eigen::Success) {
        throw NumericalError("marginal covariance of group " + group.group_id +
                             " is not positive definite");
    }
    m.sigma_inv = llt.solve(Matrix::Identity(n, n));
    m.resid = group.y - group.X * theta.values().head(p);
    m.v = m.sigma_inv * m.resid;
    m.logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    return m;
}

}  // namespace

std::string_view to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::LinearMixed: return "lmm";
        case ModelKind::LogisticMixed: return "logistic";
    }
    return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
    if (name == "lmm" || name == "linear") return ModelKind::LinearMixed;
    if (name == "logistic") return ModelKind::LogisticMixed;
    throw InvalidInput("unknown model '" + std::string(name) + "' (expected lmm or logistic)");
}

ThetaLayout ThetaLayout::for_model(ModelKind kind, std::size_t n_fixed) {
    ThetaLayout layout;
    layout.n_fixed = n_fixed;
    switch (kind) {
        case ModelKind::LinearMixed: layout.variance_names = {"phi_alpha", "phi_eps"}; break;
        case ModelKind::LogisticMixed: layout.variance_names = {"phi_tau"}; break;
    }
    return layout;
}

std::size_t ThetaLayout::index_of(std::string_view name) const {
    for (std::size_t k = 0; k < variance_names.size(); ++k) {
        if (variance_names[k] == name) return n_fixed + k;
    }
    throw InvalidInput("no parameter named '" + std::string(name) + "'");
}

std::vector<std::string> ThetaLayout::parameter_names() const {
    std::vector<std::string> names;
    names.reserve(dim());
    for (std::size_t k = 0; k < n_fixed; ++k) names.push_back("beta_" + std::to_string(k + 1));
    names.insert(names.end(), variance_names.begin(), variance_names.end());
    return names;
}

Theta::Theta(Vector values, ThetaLayout layout) : values_(std::move(values)), layout_(std::move(layout)) {
    if (layout_.dim() == 0) throw InvalidInput("theta layout has dimension 0");
    std::unordered_set<std::string> seen(layout_.variance_names.begin(), layout_.variance_names.end());
    if (seen.size() != layout_.variance_names.size()) {
        throw InvalidInput("theta layout has duplicate variance names");
    }
    if (static_cast<std::size_t>(values_.size()) != layout_.dim()) {
        throw InvalidInput("theta has " + std::to_string(values_.size()) + " entries, layout expects " +
                           std::to_string(layout_.dim()));
    }
    require_finite(values_, "theta");
}

void GroupData::validate(ModelKind kind) const {
    const auto n = y.size();
    if (n < 1) throw InvalidInput("group " + group_id + " is empty");
    if (X.rows() != n || z.size() != n) {
        throw InvalidInput("group " + group_id + " has mismatched row counts (y " + std::to_string(n) +
                           ", X " + std::to_string(X.rows()) + ", z " + std::to_string(z.size()) + ")");
    }
    if (kind == ModelKind::LogisticMixed) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (y(j) != 0.0 && y(j) != 1.0) {
                throw InvalidInput("group " + group_id + " has non-binary response " + std::to_string(y(j)));
            }
        }
    }
}

bool GroupData::operator==(const GroupData& other) const {
    return group_id == other.group_id && y.size() == other.y.size() && X.rows() == other.X.rows() &&
           X.cols() == other.X.cols() && z.size() == other.z.size() && y == other.y && X == other.X &&
           z == other.z;
}

double sigmoid(double eta) {
    if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
    const double e = std::exp(eta);
    return e / (1.0 + e);
}

double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

std::size_t alpha_variance_index(ModelKind, std::size_t n_fixed) { return n_fixed; }

double lmm_partial_loglik(const GroupData& group, const Theta& theta) {
    const auto m = lmm_marginal(group, theta);
    const auto n = static_cast<double>(group.size());
    return -0.5 * n * kLog2Pi - 0.5 * m.logdet - 0.5 * m.resid.dot(m.v);
}

Vector lmm_exact_grad(const GroupData& group, const Theta& theta) {
    const auto m = lmm_marginal(group, theta);
    const auto p = static_cast<Eigen::Index>(group.n_fixed());
    Vector g(p + 2);
    g.head(p) = group.X.transpose() * m.v;
    // dSigma/dphi_alpha = s_a z z^T, dSigma/dphi_eps = s_e I
    const double zv = group.z.dot(m.v);
    const double z_sinv_z = group.z.dot(m.sigma_inv * group.z);
    g(p) = -0.5 * m.var_alpha * z_sinv_z + 0.5 * m.var_alpha * zv * zv;
    g(p + 1) = -0.5 * m.var_eps * m.sigma_inv.trace() + 0.5 * m.var_eps * m.v.squaredNorm();
    return g;
}

Matrix lmm_exact_hessian(const GroupData& group, const Theta& theta) {
    const auto m = lmm_marginal(group, theta);
    const auto p = static_cast<Eigen::Index>(group.n_fixed());
    const Matrix& si = m.sigma_inv;

    // A_k = Sigma^{-1} dSigma/dphi_k; the second derivatives d2Sigma/dphi_k^2 equal dSigma/dphi_k
    // and the mixed one is zero.
    const Matrix d_alpha = m.var_alpha * group.z * group.z.transpose();
    const Matrix a_alpha = si * d_alpha;
    const Matrix a_eps = m.var_eps * si;
    const Matrix* a[2] = {&a_alpha, &a_eps};

    Matrix h = Matrix::Zero(p + 2, p + 2);
    const Matrix xt_si = group.X.transpose() * si;
    h.topLeftCorner(p, p) = -xt_si * group.X;

    for (int k = 0; k < 2; ++k) {
        // d/dphi_k of X^T Sigma^{-1} r = -X^T Sigma^{-1} dSigma_k Sigma^{-1} r
        h.block(0, p + k, p, 1) = -group.X.transpose() * ((*a[k]) * m.v);
        h.block(p + k, 0, 1, p) = h.block(0, p + k, p, 1).transpose();
    }
    for (int k = 0; k < 2; ++k) {
        for (int l = k; l < 2; ++l) {
            // G_kl = -A_k A_l + Sigma^{-1} d2Sigma_kl
            // H_kl = -(A_k A_l + A_l A_k) Sigma^{-1} + Sigma^{-1} d2Sigma_kl Sigma^{-1}
            Matrix g_kl = -(*a[k]) * (*a[l]);
            Matrix h_kl = -((*a[k]) * (*a[l]) + (*a[l]) * (*a[k])) * si;
            if (k == l) {
                g_kl += *a[k];
                h_kl += (*a[k]) * si;
            }
            const double value = -0.5 * g_kl.trace() + 0.5 * m.resid.dot(h_kl * m.resid);
            h(p + k, p + l) = value;
            h(p + l, p + k) = value;
        }
    }
    return h;
}

JointDensity::JointDensity(ModelKind kind, const GroupData& group, const Vector& theta)
    : kind_(kind), group_(group), n_fixed_(group.n_fixed()) {
    dim_ = ThetaLayout::for_model(kind, n_fixed_).dim();
    if (static_cast<std::size_t>(theta.size()) != dim_) {
        throw InvalidInput("theta dimension " + std::to_string(theta.size()) + " does not match model dimension " +
                           std::to_string(dim_));
    }
    xb_ = group.X * theta.head(static_cast<Eigen::Index>(n_fixed_));
    alpha_log_var_ = theta(static_cast<Eigen::Index>(n_fixed_));
    alpha_var_ = std::exp(alpha_log_var_);
    if (kind == ModelKind::LinearMixed) {
        eps_log_var_ = theta(static_cast<Eigen::Index>(n_fixed_ + 1));
        eps_var_ = std::exp(eps_log_var_);
    }
}

double JointDensity::prior_logpdf(double alpha) const {
    return -0.5 * kLog2Pi - 0.5 * alpha_log_var_ - 0.5 * alpha * alpha / alpha_var_;
}

double JointDensity::conditional_loglik(double alpha) const {
    const auto n = group_.y.size();
    double acc = 0.0;
    if (kind_ == ModelKind::LinearMixed) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const double r = group_.y(j) - xb_(j) - group_.z(j) * alpha;
            acc += r * r;
        }
        return -0.5 * static_cast<double>(n) * (kLog2Pi + eps_log_var_) - 0.5 * acc / eps_var_;
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        const double eta = xb_(j) + group_.z(j) * alpha;
        // y log pi + (1-y) log(1-pi) = -softplus(-eta) or -softplus(eta)
        acc -= group_.y(j) == 1.0 ? softplus(-eta) : softplus(eta);
    }
    return acc;
}

void JointDensity::grad(double alpha, Eigen::Ref<Vector> g) const {
    const auto n = group_.y.size();
    const auto p = static_cast<Eigen::Index>(n_fixed_);
    const auto& X = group_.X;
    g.setZero();
    if (kind_ == ModelKind::LinearMixed) {
        double rr = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            const double r = group_.y(j) - xb_(j) - group_.z(j) * alpha;
            rr += r * r;
            for (Eigen::Index k = 0; k < p; ++k) g(k) += X(j, k) * r;
        }
        const double inv_eps = 1.0 / eps_var_;
        g.head(p) *= inv_eps;
        g(p) = -0.5 + 0.5 * alpha * alpha / alpha_var_;
        g(p + 1) = -0.5 * static_cast<double>(n) + 0.5 * rr * inv_eps;
        return;
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        const double resid = group_.y(j) - sigmoid(xb_(j) + group_.z(j) * alpha);
        for (Eigen::Index k = 0; k < p; ++k) g(k) += X(j, k) * resid;
    }
    g(p) = -0.5 + 0.5 * alpha * alpha / alpha_var_;
}

void JointDensity::grad_hess(double alpha, Eigen::Ref<Vector> g, Eigen::Ref<Matrix> h) const {
    const auto n = group_.y.size();
    const auto p = static_cast<Eigen::Index>(n_fixed_);
    const auto& X = group_.X;
    g.setZero();
    h.setZero();
    if (kind_ == ModelKind::LinearMixed) {
        double rr = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            const double r = group_.y(j) - xb_(j) - group_.z(j) * alpha;
            rr += r * r;
            for (Eigen::Index k = 0; k < p; ++k) {
                g(k) += X(j, k) * r;
                for (Eigen::Index l = 0; l <= k; ++l) h(k, l) -= X(j, k) * X(j, l);
            }
        }
        const double inv_eps = 1.0 / eps_var_;
        g.head(p) *= inv_eps;
        g(p) = -0.5 + 0.5 * alpha * alpha / alpha_var_;
        g(p + 1) = -0.5 * static_cast<double>(n) + 0.5 * rr * inv_eps;
        for (Eigen::Index k = 0; k < p; ++k) {
            for (Eigen::Index l = 0; l <= k; ++l) {
                h(k, l) *= inv_eps;
                h(l, k) = h(k, l);
            }
            // beta-phi_eps block: -X^T r / s_e, which is minus the beta gradient
            h(k, p + 1) = -g(k);
            h(p + 1, k) = -g(k);
        }
        h(p, p) = -0.5 * alpha * alpha / alpha_var_;
        h(p + 1, p + 1) = -0.5 * rr * inv_eps;
        return;
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        const double eta = xb_(j) + group_.z(j) * alpha;
        const double resid = group_.y(j) - sigmoid(eta);
        // exp(-|eta|) / (1 + exp(-|eta|))^2 == pi (1 - pi)
        const double e = std::exp(-std::abs(eta));
        const double curv = e / ((1.0 + e) * (1.0 + e));
        for (Eigen::Index k = 0; k < p; ++k) {
            g(k) += X(j, k) * resid;
            const double xk = curv * X(j, k);
            for (Eigen::Index l = 0; l <= k; ++l) h(k, l) -= xk * X(j, l);
        }
    }
    for (Eigen::Index k = 0; k < p; ++k) {
        for (Eigen::Index l = 0; l < k; ++l) h(l, k) = h(k, l);
    }
    g(p) = -0.5 + 0.5 * alpha * alpha / alpha_var_;
    h(p, p) = -0.5 * alpha * alpha / alpha_var_;
}

double conditional_loglik(ModelKind kind, const GroupData& group, double alpha, const Theta& theta) {
    check_theta_for(kind, group, theta);
    if (!std::isfinite(alpha)) throw InvalidInput("alpha is not finite");
    return JointDensity(kind, group, theta.values()).conditional_loglik(alpha);
}

double alpha_prior_logpdf(ModelKind kind, double alpha, const Theta& theta) {
    const double log_var = theta[alpha_variance_index(kind, theta.layout().n_fixed)];
    return -0.5 * kLog2Pi - 0.5 * log_var - 0.5 * alpha * alpha * std::exp(-log_var);
}

double joint_loglik(ModelKind kind, const GroupData& group, double alpha, const Theta& theta) {
    check_theta_for(kind, group, theta);
    if (!std::isfinite(alpha)) throw InvalidInput("alpha is not finite");
    const JointDensity jd(kind, group, theta.values());
    return jd.conditional_loglik(alpha) + jd.prior_logpdf(alpha);
}

Vector joint_grad(ModelKind kind, const GroupData& group, double alpha, const Theta& theta) {
    check_theta_for(kind, group, theta);
    if (!std::isfinite(alpha)) throw InvalidInput("alpha is not finite");
    const JointDensity jd(kind, group, theta.values());
    Vector g(static_cast<Eigen::Index>(jd.dim()));
    jd.grad(alpha, g);
    return g;
}

Matrix joint_hessian(ModelKind kind, const GroupData& group, double alpha, const Theta& theta) {
    check_theta_for(kind, group, theta);
    if (!std::isfinite(alpha)) throw InvalidInput("alpha is not finite");
    const JointDensity jd(kind, group, theta.values());
    const auto d = static_cast<Eigen::Index>(jd.dim());
    Vector g(d);
    Matrix h(d, d);
    jd.grad_hess(alpha, g, h);
    return h;
}

Vector sample_alpha_prior(ModelKind kind, const Theta& theta, std::size_t count, Rng& rng) {
    if (count < 1) throw InvalidInput("sample count must be at least 1");
    const double sd = std::exp(0.5 * theta[alpha_variance_index(kind, theta.layout().n_fixed)]);
    Vector draws(static_cast<Eigen::Index>(count));
    for (auto& a : draws) a = sd * rng.normal();
    return draws;
}

}  // namespace rvgal
