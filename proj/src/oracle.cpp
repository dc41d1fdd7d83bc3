#include "rvgal/oracle.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "rvgal/error.hpp"

namespace rvgal {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double log_sum_exp(const Vector& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

double gaussian_logpdf(const Vector& x, const Vector& mean, const Matrix& precision, double log_norm) {
    const Vector d = x - mean;
    return log_norm - 0.5 * d.dot(precision * d);
}

}  // namespace

QuadratureRule gauss_hermite(std::size_t order) {
    if (order < 1 || order > 200) throw InvalidInput("Gauss-Hermite order must be in [1, 200]");
    const auto n = static_cast<Eigen::Index>(order);

    // Golub-Welsch: eigenvalues of the symmetric Jacobi matrix give the nodes.
    Matrix jacobi = Matrix::Zero(n, n);
    for (Eigen::Index k = 1; k < n; ++k) {
        jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(static_cast<double>(k) / 2.0);
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(jacobi, Eigen::EigenvaluesOnly);
    Vector nodes = eig.eigenvalues();

    // Newton polish with orthonormal Hermite polynomials; weight = 2 / p_n'(x)^2.
    const double pim4 = std::pow(std::numbers::pi, -0.25);
    Vector weights(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double x = nodes(i);
        double dp = 0.0;
        for (int it = 0; it < 10; ++it) {
            double p1 = pim4;
            double p2 = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                const double p3 = p2;
                p2 = p1;
                const double jd = static_cast<double>(j);
                p1 = x * std::sqrt(2.0 / (jd + 1.0)) * p2 - std::sqrt(jd / (jd + 1.0)) * p3;
            }
            dp = std::sqrt(2.0 * static_cast<double>(n)) * p2;
            const double step = p1 / dp;
            x -= step;
            if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(x))) break;
        }
        nodes(i) = x;
        weights(i) = 2.0 / (dp * dp);
    }
    // enforce exact symmetry about zero
    for (Eigen::Index i = 0; i < n / 2; ++i) {
        const Eigen::Index j = n - 1 - i;
        const double x = 0.5 * (nodes(j) - nodes(i));
        const double w = 0.5 * (weights(i) + weights(j));
        nodes(i) = -x;
        nodes(j) = x;
        weights(i) = weights(j) = w;
    }
    if (n % 2 == 1) nodes(n / 2) = 0.0;
    return {std::move(nodes), std::move(weights), order};
}

namespace {

// log p(y_i, alpha | theta) with its first two alpha derivatives
struct AlphaSlice {
    double value;
    double d1;
    double d2;
};

class AlphaIntegrand {
public:
    AlphaIntegrand(ModelKind kind, const GroupData& group, const Theta& theta)
        : kind_(kind), group_(group), density_(kind, group, theta.values()) {
        xb_ = group.X * theta.values().head(static_cast<Eigen::Index>(group.n_fixed()));
        if (kind == ModelKind::LinearMixed) eps_var_ = std::exp(theta[theta.layout().index_of("phi_eps")]);
    }

    double alpha_variance() const { return density_.alpha_variance(); }

    double value(double alpha) const { return density_.conditional_loglik(alpha) + density_.prior_logpdf(alpha); }

    AlphaSlice at(double alpha) const {
        const double value = this->value(alpha);
        double d1 = -alpha / alpha_variance();
        double d2 = -1.0 / alpha_variance();
        for (Eigen::Index j = 0; j < group_.y.size(); ++j) {
            const double z = group_.z(j);
            const double eta = xb_(j) + z * alpha;
            if (kind_ == ModelKind::LinearMixed) {
                d1 += z * (group_.y(j) - eta) / eps_var_;
                d2 -= z * z / eps_var_;
            } else {
                const double p = sigmoid(eta);
                d1 += z * (group_.y(j) - p);
                d2 -= z * z * p * (1.0 - p);
            }
        }
        return {value, d1, d2};
    }

private:
    ModelKind kind_;
    const GroupData& group_;
    JointDensity density_;
    Vector xb_;
    double eps_var_ = 1.0;
};

// Damped Newton ascent; the integrand is log-concave in alpha for both models.
double integrand_mode(const AlphaIntegrand& f) {
    double alpha = 0.0;
    AlphaSlice cur = f.at(alpha);
    for (int it = 0; it < 200; ++it) {
        double step = -cur.d1 / cur.d2;
        AlphaSlice next = f.at(alpha + step);
        int halvings = 0;
        while (!(next.value >= cur.value) && halvings < 60) {
            step *= 0.5;
            next = f.at(alpha + step);
            ++halvings;
        }
        if (!(next.value >= cur.value)) break;
        alpha += step;
        cur = next;
        if (std::abs(step) <= 1e-13 * std::max(1.0, std::abs(alpha)) + 1e-300) break;
    }
    return alpha;
}

}  // namespace

double quadrature_partial_loglik(ModelKind kind, const GroupData& group, const Theta& theta,
                                 const QuadratureRule& rule) {
    // validates layout and group
    (void)conditional_loglik(kind, group, 0.0, theta);
    const AlphaIntegrand f(kind, group, theta);

    // Nodes are centred at the integrand's mode and scaled by its curvature there.
    const double mode = integrand_mode(f);
    const AlphaSlice peak = f.at(mode);
    const double curvature = -peak.d2;
    if (!std::isfinite(mode) || !(curvature > 0.0) || !std::isfinite(curvature)) {
        throw NumericalError("quadrature integrand has no finite mode for group " + group.group_id);
    }
    const double scale = std::sqrt(2.0 / curvature);
    Vector terms(rule.nodes.size());
    for (Eigen::Index k = 0; k < rule.nodes.size(); ++k) {
        const double u = rule.nodes(k);
        terms(k) = std::log(rule.weights(k)) + u * u + f.value(mode + scale * u);
    }
    const double value = log_sum_exp(terms) + std::log(scale);
    if (!std::isfinite(value)) {
        throw NumericalError("quadrature integrand is not finite for group " + group.group_id);
    }
    return value;
}

LogPosterior::LogPosterior(ModelKind kind, std::span<const GroupData> data, Vector prior_mean, const Matrix& prior_cov,
                           QuadratureRule rule, LikelihoodRoute route)
    : kind_(kind), data_(data), prior_mean_(std::move(prior_mean)), rule_(std::move(rule)), route_(route) {
    if (route_ == LikelihoodRoute::ClosedFormLmm && kind_ != ModelKind::LinearMixed) {
        throw InvalidInput("the closed-form likelihood route needs the linear mixed model");
    }
    const auto d = prior_mean_.size();
    if (prior_cov.rows() != d || prior_cov.cols() != d) throw InvalidInput("prior covariance has the wrong shape");
    Eigen::LLT<Matrix> llt(prior_cov);
    if (llt.info() != Eigen::Success) throw InvalidInput("prior covariance is not positive definite");
    prior_prec_ = llt.solve(Matrix::Identity(d, d));
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    prior_log_norm_ = -0.5 * static_cast<double>(d) * kLog2Pi - 0.5 * logdet;
    // Infer p from the prior dimension so an empty dataset still has a layout.
    const std::size_t n_var = kind_ == ModelKind::LinearMixed ? 2 : 1;
    if (static_cast<std::size_t>(d) <= n_var) throw InvalidInput("prior dimension too small for the model");
    layout_ = ThetaLayout::for_model(kind_, static_cast<std::size_t>(d) - n_var);
    for (const auto& g : data_) {
        if (g.n_fixed() != layout_.n_fixed) throw InvalidInput("group " + g.group_id + " has the wrong column count");
        g.validate(kind_);
    }
}

double LogPosterior::operator()(const Vector& theta_values) const {
    const Theta theta(theta_values, layout_);
    double total = gaussian_logpdf(theta_values, prior_mean_, prior_prec_, prior_log_norm_);
    for (const auto& g : data_) {
        total += route_ == LikelihoodRoute::ClosedFormLmm ? lmm_partial_loglik(g, theta)
                                                           : quadrature_partial_loglik(kind_, g, theta, rule_);
    }
    return total;
}

double full_log_posterior(ModelKind kind, std::span<const GroupData> data, const Vector& prior_mean,
                          const Matrix& prior_cov, const Theta& theta, const QuadratureRule& rule,
                          LikelihoodRoute route) {
    const LogPosterior target(kind, data, prior_mean, prior_cov, rule, route);
    if (!(theta.layout() == target.layout())) throw InvalidInput("theta layout does not match the prior dimension");
    return target(theta.values());
}

McmcOutput rwm_sample(const std::function<double(const Vector&)>& log_target, const Vector& init,
                      std::size_t n_iter, std::size_t n_burnin, Rng& rng, const RwmOptions& options) {
    if (n_iter <= n_burnin) throw InvalidInput("n_iter must exceed n_burnin");
    const auto d = init.size();
    if (d < 1) throw InvalidInput("initial point is empty");
    double current_lp = log_target(init);
    if (std::isnan(current_lp)) throw InvalidInput("log target is NaN at the initial point");
    if (!std::isfinite(current_lp)) throw InvalidInput("log target is not finite at the initial point");

    Matrix base_cov = options.initial_cov.size() == 0
                          ? Matrix(Matrix::Identity(d, d) * (0.01 / static_cast<double>(d)))
                          : options.initial_cov;
    if (base_cov.rows() != d || base_cov.cols() != d) throw InvalidInput("initial proposal covariance has the wrong shape");
    Matrix chol = Eigen::LLT<Matrix>(base_cov).matrixL();
    double log_scale = 0.0;  // log of the s^2 multiplier
    const double dd = static_cast<double>(d);
    const std::size_t warmup = n_burnin / 2;
    const std::size_t min_history = std::max<std::size_t>(200, 20 * static_cast<std::size_t>(d));

    // running moments of the chain (Welford); restarted once half way through burn-in
    Vector run_mean = Vector::Zero(d);
    Matrix run_m2 = Matrix::Zero(d, d);
    std::size_t run_n = 0;
    bool using_empirical = false;

    auto refresh_proposal = [&] {
        Matrix emp = run_m2 / static_cast<double>(run_n - 1);
        emp.diagonal().array() += 1e-12 * std::max(1.0, emp.diagonal().maxCoeff());
        Eigen::LLT<Matrix> llt(emp);
        if (llt.info() != Eigen::Success) return;
        if (!using_empirical) log_scale = std::log(2.38 * 2.38 / dd);
        using_empirical = true;
        chol = llt.matrixL();
    };

    McmcOutput out;
    out.n_burnin = n_burnin;
    out.draws.resize(static_cast<Eigen::Index>(n_iter - n_burnin), d);
    Vector x = init;
    Vector proposal(d);
    Vector xi(d);
    std::size_t accepted_burn = 0;
    std::size_t accepted_kept = 0;

    for (std::size_t t = 0; t < n_iter; ++t) {
        const bool adapting = t < n_burnin;
        for (auto& v : xi) v = rng.normal();
        proposal = x + std::exp(0.5 * log_scale) * (chol * xi);
        double lp = -std::numeric_limits<double>::infinity();
        try {
            lp = log_target(proposal);
        } catch (const Error&) {
            // outside the support of the target
        }
        const double log_ratio = std::isnan(lp) ? -std::numeric_limits<double>::infinity() : lp - current_lp;
        const double u = rng.uniform();
        const bool accept = std::log(u) < log_ratio;
        if (accept) {
            x = proposal;
            current_lp = lp;
        }
        if (adapting) {
            accepted_burn += accept ? 1 : 0;
            const double acc_prob = log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
            log_scale += std::pow(static_cast<double>(t) + 1.0, -0.6) * (acc_prob - options.target_acceptance);

            if (t == warmup) {
                run_mean.setZero();
                run_m2.setZero();
                run_n = 0;
            }
            ++run_n;
            const Vector delta = x - run_mean;
            run_mean += delta / static_cast<double>(run_n);
            run_m2 += delta * (x - run_mean).transpose();
            if (run_n >= min_history && run_n % 50 == 0) refresh_proposal();
        } else {
            accepted_kept += accept ? 1 : 0;
            out.draws.row(static_cast<Eigen::Index>(t - n_burnin)) = x.transpose();
        }
    }
    out.acceptance_rate = static_cast<double>(accepted_kept) / static_cast<double>(n_iter - n_burnin);
    out.burnin_acceptance_rate = n_burnin > 0 ? static_cast<double>(accepted_burn) / static_cast<double>(n_burnin) : 0.0;
    out.proposal_scale = std::exp(log_scale);
    return out;
}

std::pair<Vector, Matrix> sample_moments(const Matrix& draws) {
    const auto n = draws.rows();
    if (n < 2) throw InvalidInput("need at least two draws for moments");
    Vector mean = draws.colwise().mean().transpose();
    const Matrix centered = draws.rowwise() - mean.transpose();
    Matrix cov = centered.transpose() * centered / static_cast<double>(n - 1);
    return {std::move(mean), std::move(cov)};
}

bool ComparisonReport::passes(double max_gap, double sd_ratio_lo, double sd_ratio_hi) const {
    for (Eigen::Index k = 0; k < standardized_gap.size(); ++k) {
        if (!(standardized_gap(k) < max_gap)) return false;
        if (!(sd_ratio(k) > sd_ratio_lo && sd_ratio(k) < sd_ratio_hi)) return false;
    }
    return true;
}

ComparisonReport compare_gaussian_vs_samples(const VariationalState& state, const Matrix& draws,
                                             std::vector<std::string> names) {
    if (draws.rows() < 100) throw InvalidInput("comparison needs at least 100 kept draws");
    if (static_cast<std::size_t>(draws.cols()) != state.dim()) {
        throw InvalidInput("draw dimension " + std::to_string(draws.cols()) + " does not match state dimension " +
                           std::to_string(state.dim()));
    }
    auto [mean, cov] = sample_moments(draws);
    ComparisonReport r;
    r.names = std::move(names);
    if (r.names.empty()) {
        for (std::size_t k = 0; k < state.dim(); ++k) r.names.push_back("theta_" + std::to_string(k + 1));
    }
    r.mean_q = state.mean;
    r.mean_mcmc = mean;
    r.sd_q = state.marginal_sd();
    r.sd_mcmc = cov.diagonal().array().sqrt();
    r.standardized_gap = (r.mean_q - r.mean_mcmc).array().abs() / r.sd_mcmc.array();
    r.sd_ratio = r.sd_q.array() / r.sd_mcmc.array();
    r.symmetric_kl = symmetric_kl(state, VariationalState::from_covariance(mean, cov));
    return r;
}

ComparisonReport compare_gaussian_vs_samples(const VariationalState& state, const McmcOutput& mcmc,
                                             std::vector<std::string> names) {
    return compare_gaussian_vs_samples(state, mcmc.draws, std::move(names));
}

}  // namespace rvgal
