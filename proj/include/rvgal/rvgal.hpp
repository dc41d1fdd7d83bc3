#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "rvgal/error.hpp"
#include "rvgal/model.hpp"

namespace rvgal {

/// Gaussian q = N(mean, P) stored through the Cholesky factor of its
/// precision: P^{-1} = L L^T with L lower triangular.
struct VariationalState {
    Vector mean;
    Matrix prec_chol;
    std::size_t iteration = 0;

    static VariationalState from_covariance(const Vector& mean, const Matrix& cov, std::size_t iteration = 0);
    static VariationalState from_precision(const Vector& mean, const Matrix& precision, std::size_t iteration = 0);

    std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
    Matrix precision() const;
    Matrix covariance() const;
    Vector marginal_sd() const;
    double log_det_precision() const;

    /// mean + L^{-T} xi with xi ~ N(0, I); consumes dim() normals.
    Vector sample(Rng& rng) const;

    /// Throws InvalidInput unless the mean is finite and L has a strictly positive diagonal.
    void validate() const;

    bool operator==(const VariationalState& other) const;
};

struct RvgalConfig {
    std::size_t s_theta = 100;  // theta draws per expectation over q
    std::size_t s_alpha = 100;  // importance draws of alpha per theta draw
    std::size_t n_temp = 10;
    std::size_t k_steps = 4;
    double jitter_base = 1e-8;
    std::size_t jitter_max_tries = 6;
    std::uint64_t seed = 0;
    bool trace_substeps = false;

    void validate() const;
};

enum class DerivMode { Estimated, ExactLmm };

/// Monte Carlo expectation of the partial log-likelihood derivatives under q.
struct Expectation {
    Vector grad;
    Matrix hessian;
    double min_ess = 0.0;  // NaN when no importance sampling was involved
};

/// Computes E_q[grad], E_q[hess] for the current state.
using ExpectationFn = std::function<Expectation(const VariationalState&, Rng&)>;

/// Draws cfg.s_theta samples from the state and averages the per-sample
/// gradient and Hessian (importance-sampled, or closed form in ExactLmm mode).
Expectation expected_grad_hess(ModelKind kind, const GroupData& group, const VariationalState& state,
                               const RvgalConfig& cfg, Rng& rng, DerivMode mode = DerivMode::Estimated);

/// Bookkeeping from one (possibly tempered) update.
struct StepInfo {
    std::size_t jitter_events = 0;
    double min_ess = 0.0;
};

/// One R-VGAL update: precision first, then mean through the new factor.
VariationalState rvgal_step(const ExpectationFn& expectation, const VariationalState& state, const RvgalConfig& cfg,
                            Rng& rng, StepInfo* info = nullptr);

/// K sub-updates with gradient and Hessian both scaled by 1/K; every
/// sub-update re-draws from the current sub-state. `on_substep` sees each
/// intermediate state.
VariationalState rvgal_tempered_step(const ExpectationFn& expectation, const VariationalState& state,
                                     const RvgalConfig& cfg, Rng& rng, StepInfo* info = nullptr,
                                     const std::function<void(std::size_t, const VariationalState&, const StepInfo&)>&
                                         on_substep = {});

VariationalState rvgal_step(ModelKind kind, const GroupData& group, const VariationalState& state,
                            const RvgalConfig& cfg, Rng& rng, DerivMode mode = DerivMode::Estimated,
                            StepInfo* info = nullptr);

VariationalState rvgal_tempered_step(ModelKind kind, const GroupData& group, const VariationalState& state,
                                     const RvgalConfig& cfg, Rng& rng, DerivMode mode = DerivMode::Estimated,
                                     StepInfo* info = nullptr);

struct TraceRecord {
    std::size_t iteration = 0;
    std::size_t sub_step = 0;  // 0 for the record closing a group, k for tempering sub-records
    Vector mean;
    double log_det_precision = 0.0;
    double min_ess = 0.0;
    std::size_t jitter_count = 0;
    double elapsed_ms = 0.0;
};

struct FitTrace {
    std::vector<TraceRecord> records;
    VariationalState final_state;

    /// Records with sub_step == 0, one per processed group.
    std::size_t group_records() const;
    /// Equality of everything except wall-clock timings.
    bool same_numbers(const FitTrace& other) const;
};

/// A fit aborted part way; carries the trace up to the failing group.
class FitFailure : public Error {
public:
    FitFailure(const std::string& msg, std::string kind, std::size_t iteration, FitTrace partial)
        : Error(msg), kind_(std::move(kind)), iteration_(iteration), partial_(std::move(partial)) {}
    const char* kind() const noexcept override { return kind_.c_str(); }
    std::size_t iteration() const noexcept { return iteration_; }
    const FitTrace& partial_trace() const noexcept { return partial_; }

private:
    std::string kind_;
    std::size_t iteration_;
    FitTrace partial_;
};

/// Single pass over `data` starting from `prior`, seeded from cfg.seed.
FitTrace rvgal_fit(ModelKind kind, std::span<const GroupData> data, const VariationalState& prior,
                   const RvgalConfig& cfg, DerivMode mode = DerivMode::Estimated);

/// Continues a fit from `state` with a caller-owned rng stream. Iteration
/// numbers continue from state.iteration, so tempering only applies while
/// the global iteration index is within cfg.n_temp.
FitTrace rvgal_fit(ModelKind kind, std::span<const GroupData> data, const VariationalState& state,
                   const RvgalConfig& cfg, DerivMode mode, Rng& rng);

/// Symmetric Kullback-Leibler divergence KL(a||b) + KL(b||a).
double symmetric_kl(const VariationalState& a, const VariationalState& b);

}  // namespace rvgal
