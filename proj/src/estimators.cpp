#include "rvgal/estimators.hpp"

#include <cmath>
#include <limits>

#include "rvgal/error.hpp"

namespace rvgal {

namespace {

void check_samples(const WeightedAlphaSamples& s) {
    if (s.size() < 1) throw InvalidInput("weighted samples are empty");
    if (s.log_weights.size() != s.alphas.size() || s.norm_weights.size() != s.alphas.size()) {
        throw InvalidInput("weighted samples have mismatched lengths");
    }
}

// Lower triangle of sum_s w_s (g_s g_s^T + H_s) is accumulated into `second`.
void accumulate_second_moment(double w, const Vector& g, const Matrix& h, Matrix& second) {
    const auto d = g.size();
    for (Eigen::Index k = 0; k < d; ++k) {
        const double wg = w * g(k);
        for (Eigen::Index l = 0; l <= k; ++l) second(k, l) += wg * g(l) + w * h(k, l);
    }
}

Matrix finish_louis(const Matrix& second, const Vector& grad) {
    const auto d = grad.size();
    Matrix out(d, d);
    for (Eigen::Index k = 0; k < d; ++k) {
        for (Eigen::Index l = 0; l <= k; ++l) {
            const double v = second(k, l) - grad(k) * grad(l);
            out(k, l) = v;
            out(l, k) = v;
        }
    }
    return out;
}

}  // namespace

std::pair<Vector, double> normalize_log_weights(const Vector& log_weights) {
    if (log_weights.size() < 1) throw InvalidInput("no log-weights to normalize");
    double max_lw = -std::numeric_limits<double>::infinity();
    for (double lw : log_weights) {
        if (std::isnan(lw)) throw EstimatorDegenerate("log-weight is NaN");
        max_lw = std::max(max_lw, lw);
    }
    if (!std::isfinite(max_lw)) {
        throw EstimatorDegenerate("all importance log-weights are -inf or +inf");
    }
    Vector w(log_weights.size());
    double total = 0.0;
    for (Eigen::Index s = 0; s < w.size(); ++s) {
        w(s) = std::exp(log_weights(s) - max_lw);
        total += w(s);
    }
    w /= total;
    const double ess = 1.0 / w.squaredNorm();
    return {std::move(w), ess};
}

WeightedAlphaSamples draw_weighted_alphas(ModelKind kind, const GroupData& group, const Theta& theta,
                                          std::size_t s_alpha, Rng& rng, const AlphaProposal* proposal) {
    if (s_alpha < 1) throw InvalidInput("s_alpha must be at least 1");
    // conditional_loglik validates layout and group once
    (void)conditional_loglik(kind, group, 0.0, theta);
    const JointDensity density(kind, group, theta.values());

    WeightedAlphaSamples out;
    const auto n = static_cast<Eigen::Index>(s_alpha);
    out.alphas.resize(n);
    out.log_weights.resize(n);
    if (proposal == nullptr) {
        const double sd = std::sqrt(density.alpha_variance());
        for (auto& a : out.alphas) a = sd * rng.normal();
        for (Eigen::Index s = 0; s < n; ++s) out.log_weights(s) = density.conditional_loglik(out.alphas(s));
    } else {
        for (auto& a : out.alphas) a = proposal->draw(rng);
        for (Eigen::Index s = 0; s < n; ++s) {
            const double a = out.alphas(s);
            out.log_weights(s) = density.conditional_loglik(a) + density.prior_logpdf(a) - proposal->log_density(a);
        }
    }
    try {
        std::tie(out.norm_weights, out.ess) = normalize_log_weights(out.log_weights);
    } catch (const EstimatorDegenerate& e) {
        throw EstimatorDegenerate(std::string(e.what()) + " in group " + group.group_id, group.group_id);
    }
    return out;
}

Vector fisher_gradient(ModelKind kind, const GroupData& group, const Theta& theta,
                       const WeightedAlphaSamples& samples) {
    check_samples(samples);
    (void)conditional_loglik(kind, group, 0.0, theta);
    const JointDensity density(kind, group, theta.values());
    const auto d = static_cast<Eigen::Index>(density.dim());
    Vector g(d);
    Vector acc = Vector::Zero(d);
    for (Eigen::Index s = 0; s < samples.alphas.size(); ++s) {
        const double w = samples.norm_weights(s);
        if (w == 0.0) continue;
        density.grad(samples.alphas(s), g);
        acc += w * g;
    }
    return acc;
}

Matrix louis_hessian(ModelKind kind, const GroupData& group, const Theta& theta,
                     const WeightedAlphaSamples& samples, const Vector& grad_estimate) {
    check_samples(samples);
    (void)conditional_loglik(kind, group, 0.0, theta);
    const JointDensity density(kind, group, theta.values());
    const auto d = static_cast<Eigen::Index>(density.dim());
    if (grad_estimate.size() != d) throw InvalidInput("gradient estimate has the wrong dimension");
    Vector g(d);
    Matrix h(d, d);
    Matrix second = Matrix::Zero(d, d);
    for (Eigen::Index s = 0; s < samples.alphas.size(); ++s) {
        const double w = samples.norm_weights(s);
        if (w == 0.0) continue;
        density.grad_hess(samples.alphas(s), g, h);
        accumulate_second_moment(w, g, h, second);
    }
    return finish_louis(second, grad_estimate);
}

GradHessEstimate estimate_grad_hess(const JointDensity& density, std::size_t s_alpha, Rng& rng) {
    if (s_alpha < 1) throw InvalidInput("s_alpha must be at least 1");
    const auto n = static_cast<Eigen::Index>(s_alpha);
    const auto d = static_cast<Eigen::Index>(density.dim());

    Vector alphas(n);
    Vector log_w(n);
    const double sd = std::sqrt(density.alpha_variance());
    for (auto& a : alphas) a = sd * rng.normal();
    for (Eigen::Index s = 0; s < n; ++s) log_w(s) = density.conditional_loglik(alphas(s));
    auto [w, ess] = normalize_log_weights(log_w);

    GradHessEstimate est;
    est.grad = Vector::Zero(d);
    est.s_alpha = s_alpha;
    est.ess = ess;
    Vector g(d);
    Matrix h(d, d);
    Matrix second = Matrix::Zero(d, d);
    for (Eigen::Index s = 0; s < n; ++s) {
        if (w(s) == 0.0) continue;
        density.grad_hess(alphas(s), g, h);
        est.grad += w(s) * g;
        accumulate_second_moment(w(s), g, h, second);
    }
    est.hessian = finish_louis(second, est.grad);
    return est;
}

}  // namespace rvgal
