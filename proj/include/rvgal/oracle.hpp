#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "rvgal/model.hpp"
#include "rvgal/rvgal.hpp"

namespace rvgal {

/// Gauss-Hermite rule for integrals of f(x) exp(-x^2) (physicists' convention).
struct QuadratureRule {
    Vector nodes;
    Vector weights;
    std::size_t order = 0;
};

/// Nodes and weights for 1 <= order <= 200.
QuadratureRule gauss_hermite(std::size_t order);

/// log of the integral of p(y_i | alpha, theta) N(alpha; 0, sigma^2) over alpha.
double quadrature_partial_loglik(ModelKind kind, const GroupData& group, const Theta& theta,
                                 const QuadratureRule& rule);

/// How full_log_posterior integrates out each group's random effect.
enum class LikelihoodRoute { Quadrature, ClosedFormLmm };

/// Sum of per-group log-likelihoods plus the Gaussian prior log-density,
/// dropping the posterior normalizing constant.
double full_log_posterior(ModelKind kind, std::span<const GroupData> data, const Vector& prior_mean,
                          const Matrix& prior_cov, const Theta& theta, const QuadratureRule& rule,
                          LikelihoodRoute route = LikelihoodRoute::Quadrature);

/// Caches the prior factorization so repeated evaluations inside a sampler stay cheap.
class LogPosterior {
public:
    LogPosterior(ModelKind kind, std::span<const GroupData> data, Vector prior_mean, const Matrix& prior_cov,
                 QuadratureRule rule, LikelihoodRoute route = LikelihoodRoute::Quadrature);

    double operator()(const Vector& theta) const;
    std::size_t dim() const { return layout_.dim(); }
    const ThetaLayout& layout() const { return layout_; }

private:
    ModelKind kind_;
    std::span<const GroupData> data_;
    Vector prior_mean_;
    Matrix prior_prec_;
    double prior_log_norm_ = 0.0;
    QuadratureRule rule_;
    LikelihoodRoute route_;
    ThetaLayout layout_;
};

struct McmcOutput {
    Matrix draws;  // n_kept x d, unconstrained scale
    double acceptance_rate = 0.0;  // post burn-in
    double burnin_acceptance_rate = 0.0;
    std::size_t n_burnin = 0;
    double proposal_scale = 0.0;  // final s^2 multiplier
};

struct RwmOptions {
    /// Initial proposal covariance; identity * 0.01 when empty.
    Matrix initial_cov;
    double target_acceptance = 0.234;
};

/// Adaptive random-walk Metropolis. The proposal covariance s^2 * Sigma_hat
/// adapts only during burn-in (empirical covariance of the chain so far,
/// Robbins-Monro on log s toward the target acceptance) and is frozen
/// afterwards, so the kept draws come from a fixed Metropolis kernel.
McmcOutput rwm_sample(const std::function<double(const Vector&)>& log_target, const Vector& init,
                      std::size_t n_iter, std::size_t n_burnin, Rng& rng, const RwmOptions& options = {});

struct ComparisonReport {
    std::vector<std::string> names;
    Vector mean_q;
    Vector mean_mcmc;
    Vector sd_q;
    Vector sd_mcmc;
    Vector standardized_gap;  // |mean_q - mean_mcmc| / sd_mcmc
    Vector sd_ratio;          // sd_q / sd_mcmc
    double symmetric_kl = 0.0;

    bool passes(double max_gap, double sd_ratio_lo, double sd_ratio_hi) const;
};

/// Compares a Gaussian approximation with sampler draws. Requires at least 100 draws.
ComparisonReport compare_gaussian_vs_samples(const VariationalState& state, const Matrix& draws,
                                             std::vector<std::string> names = {});
ComparisonReport compare_gaussian_vs_samples(const VariationalState& state, const McmcOutput& mcmc,
                                             std::vector<std::string> names = {});

/// Sample mean and covariance of the rows of `draws`.
std::pair<Vector, Matrix> sample_moments(const Matrix& draws);

}  // namespace rvgal
