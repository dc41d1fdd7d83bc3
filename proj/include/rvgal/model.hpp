#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "rvgal/rng.hpp"

namespace rvgal {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class ModelKind { LinearMixed, LogisticMixed };

std::string_view to_string(ModelKind kind);
/// Accepts "lmm"/"linear" and "logistic"; throws InvalidInput otherwise.
ModelKind parse_model_kind(std::string_view name);

/// Ordering of the flat parameter vector: fixed effects first, then the
/// log-variance parameters.
struct ThetaLayout {
    std::size_t n_fixed = 0;
    std::vector<std::string> variance_names;

    static ThetaLayout for_model(ModelKind kind, std::size_t n_fixed);

    std::size_t dim() const { return n_fixed + variance_names.size(); }
    /// Index of the named variance parameter; throws if absent.
    std::size_t index_of(std::string_view name) const;
    /// beta_1..beta_p followed by the variance names.
    std::vector<std::string> parameter_names() const;

    bool operator==(const ThetaLayout&) const = default;
};

/// Parameter vector on the unconstrained scale (variance entries are log sigma^2).
class Theta {
public:
    Theta(Vector values, ThetaLayout layout);

    const Vector& values() const { return values_; }
    const ThetaLayout& layout() const { return layout_; }
    std::size_t dim() const { return layout_.dim(); }
    double operator[](std::size_t k) const { return values_(static_cast<Eigen::Index>(k)); }

private:
    Vector values_;
    ThetaLayout layout_;
};

/// One group's responses and designs.
struct GroupData {
    std::string group_id;
    Vector y;
    Matrix X;  // n_i x p
    Vector z;  // random-effect covariate, all ones for a random intercept

    std::size_t size() const { return static_cast<std::size_t>(y.size()); }
    std::size_t n_fixed() const { return static_cast<std::size_t>(X.cols()); }

    /// Throws InvalidInput on ragged rows, empty groups or non-binary logistic responses.
    void validate(ModelKind kind) const;

    bool operator==(const GroupData& other) const;
};

// Closed-form linear mixed model partial likelihood, log p(y_i | theta).
double lmm_partial_loglik(const GroupData& group, const Theta& theta);
Vector lmm_exact_grad(const GroupData& group, const Theta& theta);
Matrix lmm_exact_hessian(const GroupData& group, const Theta& theta);

// Joint density log p(y_i, alpha_i | theta) and its theta-derivatives.
double joint_loglik(ModelKind kind, const GroupData& group, double alpha, const Theta& theta);
Vector joint_grad(ModelKind kind, const GroupData& group, double alpha, const Theta& theta);
Matrix joint_hessian(ModelKind kind, const GroupData& group, double alpha, const Theta& theta);

/// log p(y_i | alpha_i, theta); the importance log-weight under the prior proposal.
double conditional_loglik(ModelKind kind, const GroupData& group, double alpha, const Theta& theta);
/// log p(alpha_i | theta).
double alpha_prior_logpdf(ModelKind kind, double alpha, const Theta& theta);

/// i.i.d. draws from the random-effect prior N(0, exp(phi)).
Vector sample_alpha_prior(ModelKind kind, const Theta& theta, std::size_t count, Rng& rng);

/// Index of the random-effect log-variance inside theta.
std::size_t alpha_variance_index(ModelKind kind, std::size_t n_fixed);

/// Numerically stable logistic function.
double sigmoid(double eta);
/// log(1 + exp(x)) without overflow.
double softplus(double x);

/// Joint density of one group bound to a fixed theta.
///
/// Caches X*beta and the variance transforms so per-alpha evaluations cost
/// O(n_i * p). This is the interface the importance-sampling estimators run
/// against; it writes into caller-owned buffers and does not allocate.
class JointDensity {
public:
    JointDensity(ModelKind kind, const GroupData& group, const Vector& theta);

    ModelKind kind() const { return kind_; }
    std::size_t dim() const { return dim_; }
    double alpha_variance() const { return alpha_var_; }

    double conditional_loglik(double alpha) const;
    double prior_logpdf(double alpha) const;

    /// Gradient and Hessian of log p(y_i, alpha | theta); both outputs must be sized.
    void grad_hess(double alpha, Eigen::Ref<Vector> grad, Eigen::Ref<Matrix> hess) const;
    void grad(double alpha, Eigen::Ref<Vector> grad) const;

private:
    ModelKind kind_;
    const GroupData& group_;
    std::size_t n_fixed_;
    std::size_t dim_;
    Vector xb_;
    double alpha_var_;
    double alpha_log_var_;
    double eps_var_ = 1.0;
    double eps_log_var_ = 0.0;
};

}  // namespace rvgal
