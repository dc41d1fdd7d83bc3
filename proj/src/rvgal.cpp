#include "rvgal/rvgal.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "rvgal/estimators.hpp"

namespace rvgal {

namespace {

using Clock = std::chrono::steady_clock;

Matrix lower_cholesky(const Matrix& spd, const char* what) {
    Eigen::LLT<Matrix> llt(spd);
    if (llt.info() != Eigen::Success) throw InvalidInput(std::string(what) + " is not positive definite");
    return llt.matrixL();
}

// Factor the updated precision, adding diagonal jitter when needed.
Eigen::LLT<Matrix> factor_with_jitter(const Matrix& precision, const RvgalConfig& cfg, std::size_t iteration,
                                      std::size_t& jitter_events) {
    Eigen::LLT<Matrix> llt(precision);
    auto ok = [&llt] { return llt.info() == Eigen::Success && llt.matrixLLT().allFinite(); };
    if (ok()) return llt;
    const double scale = std::abs(precision.diagonal().mean());
    Matrix jittered = precision;
    for (std::size_t t = 0; t < cfg.jitter_max_tries; ++t) {
        ++jitter_events;
        jittered = precision;
        jittered.diagonal().array() += cfg.jitter_base * scale * std::pow(10.0, static_cast<double>(t));
        llt.compute(jittered);
        if (ok()) return llt;
    }
    throw NonPdPrecision("updated precision is not positive definite after " + std::to_string(cfg.jitter_max_tries) +
                             " jitter attempts at iteration " + std::to_string(iteration),
                         iteration);
}

// Shared by plain and tempered updates; `scale` is 1 or 1/K.
VariationalState scaled_update(const ExpectationFn& expectation, const VariationalState& state, double scale,
                               const RvgalConfig& cfg, Rng& rng, std::size_t iteration, StepInfo& info) {
    Expectation e = expectation(state, rng);
    const auto d = state.mean.size();
    if (e.grad.size() != d || e.hessian.rows() != d || e.hessian.cols() != d) {
        throw InvalidInput("expectation has the wrong dimension");
    }
    if (!e.grad.allFinite() || !e.hessian.allFinite()) {
        throw NumericalError("non-finite gradient or Hessian estimate at iteration " + std::to_string(iteration));
    }
    const Matrix hess = 0.5 * (e.hessian + e.hessian.transpose());
    const Matrix precision = state.precision() - scale * hess;
    auto llt = factor_with_jitter(precision, cfg, iteration, info.jitter_events);

    VariationalState next;
    next.prec_chol = llt.matrixL();
    next.mean = state.mean + scale * llt.solve(e.grad);
    next.iteration = state.iteration;
    if (!std::isnan(e.min_ess)) {
        info.min_ess = std::isnan(info.min_ess) ? e.min_ess : std::min(info.min_ess, e.min_ess);
    }
    return next;
}

ExpectationFn model_expectation(ModelKind kind, const GroupData& group, const RvgalConfig& cfg, DerivMode mode) {
    if (mode == DerivMode::ExactLmm && kind != ModelKind::LinearMixed) {
        throw InvalidInput("exact derivatives are only available for the linear mixed model");
    }
    return [kind, &group, &cfg, mode](const VariationalState& s, Rng& rng) {
        return expected_grad_hess(kind, group, s, cfg, rng, mode);
    };
}

}  // namespace

VariationalState VariationalState::from_covariance(const Vector& mean, const Matrix& cov, std::size_t iteration) {
    if (cov.rows() != mean.size() || cov.cols() != mean.size()) throw InvalidInput("covariance has the wrong shape");
    const Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success || !cov.allFinite()) throw InvalidInput("covariance is not positive definite");
    const Matrix precision = llt.solve(Matrix::Identity(cov.rows(), cov.cols()));
    return from_precision(mean, 0.5 * (precision + precision.transpose()), iteration);
}

VariationalState VariationalState::from_precision(const Vector& mean, const Matrix& precision, std::size_t iteration) {
    if (precision.rows() != mean.size() || precision.cols() != mean.size()) {
        throw InvalidInput("precision has the wrong shape");
    }
    VariationalState s{mean, lower_cholesky(precision, "precision"), iteration};
    s.validate();
    return s;
}

Matrix VariationalState::precision() const { return prec_chol * prec_chol.transpose(); }

Matrix VariationalState::covariance() const {
    const auto d = prec_chol.rows();
    // (L L^T)^{-1} = L^{-T} L^{-1}
    const Matrix linv = prec_chol.triangularView<Eigen::Lower>().solve(Matrix::Identity(d, d));
    return linv.transpose() * linv;
}

Vector VariationalState::marginal_sd() const { return covariance().diagonal().array().sqrt(); }

double VariationalState::log_det_precision() const { return 2.0 * prec_chol.diagonal().array().log().sum(); }

Vector VariationalState::sample(Rng& rng) const {
    Vector xi(mean.size());
    for (auto& x : xi) x = rng.normal();
    prec_chol.transpose().triangularView<Eigen::Upper>().solveInPlace(xi);
    return mean + xi;
}

void VariationalState::validate() const {
    if (mean.size() == 0) throw InvalidInput("variational state has dimension 0");
    if (prec_chol.rows() != mean.size() || prec_chol.cols() != mean.size()) {
        throw InvalidInput("precision factor has the wrong shape");
    }
    if (!mean.allFinite()) throw InvalidInput("variational mean is not finite");
    if (!prec_chol.allFinite() || (prec_chol.diagonal().array() <= 0.0).any()) {
        throw InvalidInput("precision factor must have a strictly positive diagonal");
    }
}

bool VariationalState::operator==(const VariationalState& other) const {
    return iteration == other.iteration && mean.size() == other.mean.size() && mean == other.mean &&
           prec_chol == other.prec_chol;
}

void RvgalConfig::validate() const {
    if (s_theta < 1) throw InvalidInput("s_theta must be at least 1");
    if (s_alpha < 1) throw InvalidInput("s_alpha must be at least 1");
    if (k_steps < 1) throw InvalidInput("k_steps must be at least 1");
    if (!(jitter_base > 0.0) || !std::isfinite(jitter_base)) throw InvalidInput("jitter_base must be positive");
}

Expectation expected_grad_hess(ModelKind kind, const GroupData& group, const VariationalState& state,
                               const RvgalConfig& cfg, Rng& rng, DerivMode mode) {
    cfg.validate();
    const auto d = static_cast<Eigen::Index>(state.dim());
    const auto layout = ThetaLayout::for_model(kind, group.n_fixed());
    if (layout.dim() != state.dim()) throw InvalidInput("state dimension does not match the model");
    if (mode == DerivMode::ExactLmm && kind != ModelKind::LinearMixed) {
        throw InvalidInput("exact derivatives are only available for the linear mixed model");
    }
    group.validate(kind);

    // All theta draws come first, then one word seeds the alpha stream, so both
    // derivative modes see the same theta samples for a given seed.
    std::vector<Vector> thetas;
    thetas.reserve(cfg.s_theta);
    for (std::size_t l = 0; l < cfg.s_theta; ++l) thetas.push_back(state.sample(rng));
    Rng alpha_rng(rng.next_u64());

    Expectation out{Vector::Zero(d), Matrix::Zero(d, d), std::numeric_limits<double>::quiet_NaN()};
    for (const Vector& theta : thetas) {
        if (mode == DerivMode::ExactLmm) {
            const Theta t(theta, layout);
            out.grad += lmm_exact_grad(group, t);
            out.hessian += lmm_exact_hessian(group, t);
            continue;
        }
        const JointDensity density(kind, group, theta);
        GradHessEstimate est;
        try {
            est = estimate_grad_hess(density, cfg.s_alpha, alpha_rng);
        } catch (const EstimatorDegenerate& e) {
            throw EstimatorDegenerate(std::string(e.what()) + " in group " + group.group_id, group.group_id);
        }
        out.grad += est.grad;
        out.hessian += est.hessian;
        out.min_ess = std::isnan(out.min_ess) ? est.ess : std::min(out.min_ess, est.ess);
    }
    const double inv = 1.0 / static_cast<double>(cfg.s_theta);
    out.grad *= inv;
    out.hessian *= inv;
    out.hessian = 0.5 * (out.hessian + out.hessian.transpose());
    return out;
}

VariationalState rvgal_step(const ExpectationFn& expectation, const VariationalState& state, const RvgalConfig& cfg,
                            Rng& rng, StepInfo* info) {
    cfg.validate();
    StepInfo local{0, std::numeric_limits<double>::quiet_NaN()};
    auto next = scaled_update(expectation, state, 1.0, cfg, rng, state.iteration + 1, local);
    next.iteration = state.iteration + 1;
    if (info) *info = local;
    return next;
}

VariationalState rvgal_tempered_step(
    const ExpectationFn& expectation, const VariationalState& state, const RvgalConfig& cfg, Rng& rng,
    StepInfo* info, const std::function<void(std::size_t, const VariationalState&, const StepInfo&)>& on_substep) {
    cfg.validate();
    const double a = 1.0 / static_cast<double>(cfg.k_steps);
    StepInfo total{0, std::numeric_limits<double>::quiet_NaN()};
    VariationalState current = state;
    for (std::size_t k = 1; k <= cfg.k_steps; ++k) {
        StepInfo sub{0, std::numeric_limits<double>::quiet_NaN()};
        current = scaled_update(expectation, current, a, cfg, rng, state.iteration + 1, sub);
        total.jitter_events += sub.jitter_events;
        if (!std::isnan(sub.min_ess)) {
            total.min_ess = std::isnan(total.min_ess) ? sub.min_ess : std::min(total.min_ess, sub.min_ess);
        }
        if (on_substep) on_substep(k, current, sub);
    }
    current.iteration = state.iteration + 1;
    if (info) *info = total;
    return current;
}

VariationalState rvgal_step(ModelKind kind, const GroupData& group, const VariationalState& state,
                            const RvgalConfig& cfg, Rng& rng, DerivMode mode, StepInfo* info) {
    return rvgal_step(model_expectation(kind, group, cfg, mode), state, cfg, rng, info);
}

VariationalState rvgal_tempered_step(ModelKind kind, const GroupData& group, const VariationalState& state,
                                     const RvgalConfig& cfg, Rng& rng, DerivMode mode, StepInfo* info) {
    return rvgal_tempered_step(model_expectation(kind, group, cfg, mode), state, cfg, rng, info);
}

std::size_t FitTrace::group_records() const {
    std::size_t n = 0;
    for (const auto& r : records) n += r.sub_step == 0 ? 1 : 0;
    return n;
}

bool FitTrace::same_numbers(const FitTrace& other) const {
    if (records.size() != other.records.size() || !(final_state == other.final_state)) return false;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& a = records[i];
        const auto& b = other.records[i];
        const bool ess_equal = (std::isnan(a.min_ess) && std::isnan(b.min_ess)) || a.min_ess == b.min_ess;
        if (a.iteration != b.iteration || a.sub_step != b.sub_step || a.mean != b.mean ||
            a.log_det_precision != b.log_det_precision || !ess_equal || a.jitter_count != b.jitter_count) {
            return false;
        }
    }
    return true;
}

FitTrace rvgal_fit(ModelKind kind, std::span<const GroupData> data, const VariationalState& prior,
                   const RvgalConfig& cfg, DerivMode mode) {
    Rng rng(cfg.seed);
    return rvgal_fit(kind, data, prior, cfg, mode, rng);
}

FitTrace rvgal_fit(ModelKind kind, std::span<const GroupData> data, const VariationalState& state,
                   const RvgalConfig& cfg, DerivMode mode, Rng& rng) {
    if (data.empty()) throw InvalidInput("no groups to fit");
    cfg.validate();
    state.validate();
    if (mode == DerivMode::ExactLmm && kind != ModelKind::LinearMixed) {
        throw InvalidInput("exact derivatives are only available for the linear mixed model");
    }

    FitTrace trace;
    trace.final_state = state;
    trace.records.reserve(data.size());
    VariationalState current = state;
    for (const auto& group : data) {
        const std::size_t iteration = current.iteration + 1;
        const auto start = Clock::now();
        auto elapsed = [&start] {
            return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
        };
        StepInfo info;
        try {
            const auto expectation = model_expectation(kind, group, cfg, mode);
            if (iteration <= cfg.n_temp) {
                auto record_sub = [&](std::size_t k, const VariationalState& s, const StepInfo& sub) {
                    if (!cfg.trace_substeps) return;
                    trace.records.push_back(
                        {iteration, k, s.mean, s.log_det_precision(), sub.min_ess, sub.jitter_events, elapsed()});
                };
                current = rvgal_tempered_step(expectation, current, cfg, rng, &info, record_sub);
            } else {
                current = rvgal_step(expectation, current, cfg, rng, &info);
            }
        } catch (const Error& e) {
            trace.final_state = current;
            throw FitFailure(std::string(e.what()) + " (group " + group.group_id + ")", e.kind(), iteration,
                             std::move(trace));
        }
        trace.records.push_back(
            {iteration, 0, current.mean, current.log_det_precision(), info.min_ess, info.jitter_events, elapsed()});
    }
    trace.final_state = current;
    return trace;
}

double symmetric_kl(const VariationalState& a, const VariationalState& b) {
    if (a.dim() != b.dim()) throw InvalidInput("states have different dimensions");
    const Matrix pa = a.precision();
    const Matrix pb = b.precision();
    const Matrix ca = a.covariance();
    const Matrix cb = b.covariance();
    const Vector delta = a.mean - b.mean;
    const double d = static_cast<double>(a.dim());
    return 0.5 * ((pb * ca).trace() + (pa * cb).trace() + delta.dot((pa + pb) * delta)) - d;
}

}  // namespace rvgal
