#pragma once

#include <cstddef>
#include <functional>

#include "rvgal/model.hpp"

namespace rvgal {

/// Importance draws of a group's random effect with their weights.
struct WeightedAlphaSamples {
    Vector alphas;
    Vector log_weights;   // unnormalized
    Vector norm_weights;  // sums to one
    double ess = 0.0;

    std::size_t size() const { return static_cast<std::size_t>(alphas.size()); }
};

/// Importance-sampled gradient and Hessian of log p(y_i | theta).
struct GradHessEstimate {
    Vector grad;
    Matrix hessian;
    double ess = 0.0;
    std::size_t s_alpha = 0;
};

/// Alternative importance distribution for alpha. When absent the
/// random-effect prior is used and the log-weights reduce to the conditional
/// log-likelihood.
struct AlphaProposal {
    std::function<double(Rng&)> draw;
    std::function<double(double)> log_density;
};

/// Softmax of log-weights and the effective sample size 1 / sum(w^2).
/// Throws EstimatorDegenerate when every log-weight is -inf or NaN.
std::pair<Vector, double> normalize_log_weights(const Vector& log_weights);

WeightedAlphaSamples draw_weighted_alphas(ModelKind kind, const GroupData& group, const Theta& theta,
                                          std::size_t s_alpha, Rng& rng,
                                          const AlphaProposal* proposal = nullptr);

/// Fisher's identity: sum_s w_s * grad log p(y_i, alpha_s | theta).
Vector fisher_gradient(ModelKind kind, const GroupData& group, const Theta& theta,
                       const WeightedAlphaSamples& samples);

/// Louis' identity evaluated on the same weighted samples as the gradient:
/// -(g g^T - sum_s w_s (g_s g_s^T + H_s)).
Matrix louis_hessian(ModelKind kind, const GroupData& group, const Theta& theta,
                     const WeightedAlphaSamples& samples, const Vector& grad_estimate);

/// Fused draw + Fisher + Louis pass over one set of prior draws. Produces the
/// same values as draw_weighted_alphas followed by fisher_gradient and
/// louis_hessian on an identical rng stream, with no per-sample allocation.
GradHessEstimate estimate_grad_hess(const JointDensity& density, std::size_t s_alpha, Rng& rng);

}  // namespace rvgal
