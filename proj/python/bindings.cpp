#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rvgal/data.hpp"
#include "rvgal/error.hpp"
#include "rvgal/estimators.hpp"
#include "rvgal/io.hpp"
#include "rvgal/model.hpp"
#include "rvgal/oracle.hpp"
#include "rvgal/rvgal.hpp"
#include "rvgal/studies.hpp"

namespace py = pybind11;
using namespace rvgal;

namespace {

ModelKind model_of(const std::string& name) { return parse_model_kind(name); }

DerivMode deriv_of(const std::string& name) {
    if (name == "estimated") return DerivMode::Estimated;
    if (name == "exact") return DerivMode::ExactLmm;
    throw InvalidInput("unknown derivative mode '" + name + "' (expected estimated or exact)");
}

Theta theta_for(ModelKind kind, const GroupData& g, const Vector& v) {
    return Theta(v, ThetaLayout::for_model(kind, g.n_fixed()));
}

VariationalState state_of(const Vector& mean, const Matrix& cov) { return VariationalState::from_covariance(mean, cov); }

py::dict report_dict(const ComparisonReport& r) {
    py::dict d;
    d["names"] = r.names;
    d["mean_q"] = r.mean_q;
    d["mean_mcmc"] = r.mean_mcmc;
    d["sd_q"] = r.sd_q;
    d["sd_mcmc"] = r.sd_mcmc;
    d["standardized_gap"] = r.standardized_gap;
    d["sd_ratio"] = r.sd_ratio;
    d["symmetric_kl"] = r.symmetric_kl;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "R-VGAL sequential variational Bayes for generalized linear mixed models";

    auto base = py::register_exception<Error>(m, "RvgalError", PyExc_RuntimeError);
    py::register_exception<InvalidInput>(m, "InvalidInput", base.ptr());
    py::register_exception<SchemaError>(m, "SchemaError", base.ptr());
    py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
    py::register_exception<NonPdPrecision>(m, "NonPdPrecision", base.ptr());
    py::register_exception<FitFailure>(m, "FitFailure", base.ptr());

    py::class_<GroupData>(m, "Group")
        .def(py::init([](std::string id, Vector y, Matrix X, std::optional<Vector> z) {
                 GroupData g{std::move(id), std::move(y), std::move(X), Vector()};
                 g.z = z ? *z : Vector::Ones(g.y.size());
                 return g;
             }),
             py::arg("group_id"), py::arg("y"), py::arg("X"), py::arg("z") = py::none())
        .def_readwrite("group_id", &GroupData::group_id)
        .def_readwrite("y", &GroupData::y)
        .def_readwrite("X", &GroupData::X)
        .def_readwrite("z", &GroupData::z)
        .def("__len__", [](const GroupData& g) { return g.size(); });

    py::class_<Dataset>(m, "Dataset")
        .def_readonly("groups", &Dataset::groups)
        .def_property_readonly("model", [](const Dataset& d) { return std::string(to_string(d.model)); })
        .def_property_readonly("n_rows", &Dataset::n_rows)
        .def_property_readonly("n_fixed", &Dataset::n_fixed)
        .def_property_readonly("random_effects",
                               [](const Dataset& d) -> std::optional<Vector> {
                                   if (const auto* s = std::get_if<SimulatedSource>(&d.provenance)) return s->random_effects;
                                   return std::nullopt;
                               })
        .def("__len__", [](const Dataset& d) { return d.groups.size(); });

    m.def("simulate_lmm", &simulate_lmm, py::arg("n_groups"), py::arg("n_per_group"), py::arg("beta"),
          py::arg("sigma_alpha"), py::arg("sigma_eps"), py::arg("seed"));
    m.def("simulate_logistic", &simulate_logistic, py::arg("n_groups"), py::arg("n_per_group"), py::arg("beta"),
          py::arg("tau"), py::arg("seed"));
    m.def(
        "load_csv",
        [](const std::string& path, const std::string& model, const std::string& schema,
           std::vector<std::string> x_columns) {
            CsvSchema s = CsvSchema::parse(schema);
            if (!x_columns.empty()) s.x_columns = std::move(x_columns);
            return load_grouped_csv(path, s, model_of(model));
        },
        py::arg("path"), py::arg("model"), py::arg("schema") = "generic", py::arg("x_columns") = std::vector<std::string>{});
    m.def("write_csv", [](const std::string& path, const Dataset& d) { write_grouped_csv(path, d); }, py::arg("path"),
          py::arg("dataset"));
    m.def(
        "shuffle",
        [](const Dataset& d, std::uint64_t seed) { return reorder(d, Ordering::shuffle(seed)); }, py::arg("dataset"),
        py::arg("seed"));
    m.def(
        "default_prior",
        [](const std::string& model, std::size_t n_fixed, bool real_data) {
            const auto p = default_prior(model_of(model), n_fixed, real_data);
            return py::make_tuple(p.mean, p.cov);
        },
        py::arg("model"), py::arg("n_fixed"), py::arg("real_data") = false);
    m.def(
        "parameter_names",
        [](const std::string& model, std::size_t n_fixed) {
            return ThetaLayout::for_model(model_of(model), n_fixed).parameter_names();
        },
        py::arg("model"), py::arg("n_fixed"));

    // per-group likelihood pieces
    m.def(
        "joint_loglik",
        [](const std::string& model, const GroupData& g, double alpha, const Vector& theta) {
            const auto k = model_of(model);
            return joint_loglik(k, g, alpha, theta_for(k, g, theta));
        },
        py::arg("model"), py::arg("group"), py::arg("alpha"), py::arg("theta"));
    m.def(
        "joint_grad",
        [](const std::string& model, const GroupData& g, double alpha, const Vector& theta) {
            const auto k = model_of(model);
            return joint_grad(k, g, alpha, theta_for(k, g, theta));
        },
        py::arg("model"), py::arg("group"), py::arg("alpha"), py::arg("theta"));
    m.def(
        "joint_hessian",
        [](const std::string& model, const GroupData& g, double alpha, const Vector& theta) {
            const auto k = model_of(model);
            return joint_hessian(k, g, alpha, theta_for(k, g, theta));
        },
        py::arg("model"), py::arg("group"), py::arg("alpha"), py::arg("theta"));
    m.def(
        "lmm_loglik",
        [](const GroupData& g, const Vector& theta) {
            return lmm_partial_loglik(g, theta_for(ModelKind::LinearMixed, g, theta));
        },
        py::arg("group"), py::arg("theta"));
    m.def(
        "lmm_grad",
        [](const GroupData& g, const Vector& theta) {
            return lmm_exact_grad(g, theta_for(ModelKind::LinearMixed, g, theta));
        },
        py::arg("group"), py::arg("theta"));
    m.def(
        "lmm_hessian",
        [](const GroupData& g, const Vector& theta) {
            return lmm_exact_hessian(g, theta_for(ModelKind::LinearMixed, g, theta));
        },
        py::arg("group"), py::arg("theta"));
    m.def(
        "estimate_grad_hess",
        [](const std::string& model, const GroupData& g, const Vector& theta, std::size_t s_alpha, std::uint64_t seed) {
            const auto k = model_of(model);
            (void)theta_for(k, g, theta);
            Rng rng(seed);
            const auto e = estimate_grad_hess(JointDensity(k, g, theta), s_alpha, rng);
            return py::make_tuple(e.grad, e.hessian, e.ess);
        },
        py::arg("model"), py::arg("group"), py::arg("theta"), py::arg("s_alpha"), py::arg("seed"));

    // quadrature oracle
    m.def(
        "gauss_hermite",
        [](std::size_t order) {
            const auto r = gauss_hermite(order);
            return py::make_tuple(r.nodes, r.weights);
        },
        py::arg("order"));
    m.def(
        "quadrature_loglik",
        [](const std::string& model, const GroupData& g, const Vector& theta, std::size_t order) {
            const auto k = model_of(model);
            return quadrature_partial_loglik(k, g, theta_for(k, g, theta), gauss_hermite(order));
        },
        py::arg("model"), py::arg("group"), py::arg("theta"), py::arg("order") = 50);

    py::class_<RvgalConfig>(m, "Config")
        .def(py::init<>())
        .def_readwrite("s", &RvgalConfig::s_theta)
        .def_readwrite("s_alpha", &RvgalConfig::s_alpha)
        .def_readwrite("n_temp", &RvgalConfig::n_temp)
        .def_readwrite("k_steps", &RvgalConfig::k_steps)
        .def_readwrite("jitter_base", &RvgalConfig::jitter_base)
        .def_readwrite("jitter_max_tries", &RvgalConfig::jitter_max_tries)
        .def_readwrite("seed", &RvgalConfig::seed)
        .def_readwrite("trace_substeps", &RvgalConfig::trace_substeps);

    py::class_<TraceRecord>(m, "TraceRecord")
        .def_readonly("iteration", &TraceRecord::iteration)
        .def_readonly("sub_step", &TraceRecord::sub_step)
        .def_readonly("mean", &TraceRecord::mean)
        .def_readonly("log_det_precision", &TraceRecord::log_det_precision)
        .def_readonly("min_ess", &TraceRecord::min_ess)
        .def_readonly("jitter_count", &TraceRecord::jitter_count)
        .def_readonly("elapsed_ms", &TraceRecord::elapsed_ms);

    py::class_<FitTrace>(m, "Fit")
        .def_readonly("records", &FitTrace::records)
        .def_property_readonly("mean", [](const FitTrace& t) { return t.final_state.mean; })
        .def_property_readonly("covariance", [](const FitTrace& t) { return t.final_state.covariance(); })
        .def_property_readonly("precision", [](const FitTrace& t) { return t.final_state.precision(); })
        .def_property_readonly("sd", [](const FitTrace& t) { return t.final_state.marginal_sd(); })
        .def("same_numbers", &FitTrace::same_numbers);

    m.def(
        "fit",
        [](const Dataset& d, const Vector& prior_mean, const Matrix& prior_cov, const RvgalConfig& cfg,
           const std::string& deriv) {
            py::gil_scoped_release release;
            return rvgal_fit(d.model, d.groups, state_of(prior_mean, prior_cov), cfg, deriv_of(deriv));
        },
        py::arg("dataset"), py::arg("prior_mean"), py::arg("prior_cov"), py::arg("config") = RvgalConfig{},
        py::arg("deriv") = "estimated");
    m.def(
        "symmetric_kl",
        [](const Vector& m1, const Matrix& c1, const Vector& m2, const Matrix& c2) {
            return symmetric_kl(state_of(m1, c1), state_of(m2, c2));
        },
        py::arg("mean_a"), py::arg("cov_a"), py::arg("mean_b"), py::arg("cov_b"));

    m.def(
        "log_posterior",
        [](const Dataset& d, const Vector& prior_mean, const Matrix& prior_cov, const Vector& theta,
           std::size_t order, bool closed_form) {
            const LogPosterior lp(d.model, d.groups, prior_mean, prior_cov, gauss_hermite(order),
                                  closed_form ? LikelihoodRoute::ClosedFormLmm : LikelihoodRoute::Quadrature);
            return lp(theta);
        },
        py::arg("dataset"), py::arg("prior_mean"), py::arg("prior_cov"), py::arg("theta"), py::arg("order") = 50,
        py::arg("closed_form") = false);
    m.def(
        "reference",
        [](const Dataset& d, const Vector& prior_mean, const Matrix& prior_cov, std::size_t iters, std::size_t burnin,
           std::uint64_t seed, std::size_t order, bool closed_form) {
            McmcOutput out;
            {
                py::gil_scoped_release release;
                const LogPosterior lp(d.model, d.groups, prior_mean, prior_cov, gauss_hermite(order),
                                      closed_form ? LikelihoodRoute::ClosedFormLmm : LikelihoodRoute::Quadrature);
                Rng rng(seed);
                out = rwm_sample(std::cref(lp), prior_mean, iters, burnin, rng);
            }
            py::dict r;
            r["draws"] = out.draws;
            r["acceptance_rate"] = out.acceptance_rate;
            r["burnin_acceptance_rate"] = out.burnin_acceptance_rate;
            return r;
        },
        py::arg("dataset"), py::arg("prior_mean"), py::arg("prior_cov"), py::arg("iters") = 50000,
        py::arg("burnin") = 10000, py::arg("seed") = 0, py::arg("order") = 50, py::arg("closed_form") = false);
    m.def(
        "rwm",
        [](const std::function<double(const Vector&)>& log_target, const Vector& init, std::size_t iters,
           std::size_t burnin, std::uint64_t seed) {
            Rng rng(seed);
            const auto out = rwm_sample(log_target, init, iters, burnin, rng);
            py::dict r;
            r["draws"] = out.draws;
            r["acceptance_rate"] = out.acceptance_rate;
            return r;
        },
        py::arg("log_target"), py::arg("init"), py::arg("iters"), py::arg("burnin"), py::arg("seed") = 0);
    m.def(
        "compare",
        [](const Vector& mean, const Matrix& cov, const Matrix& draws, std::vector<std::string> names) {
            return report_dict(compare_gaussian_vs_samples(state_of(mean, cov), draws, std::move(names)));
        },
        py::arg("mean"), py::arg("cov"), py::arg("draws"), py::arg("names") = std::vector<std::string>{});

    m.def(
        "ordering_study",
        [](const Dataset& d, const Vector& prior_mean, const Matrix& prior_cov, const RvgalConfig& cfg,
           std::size_t orderings, std::uint64_t seed) {
            OrderingStudyResult r;
            {
                py::gil_scoped_release release;
                r = ordering_study(d, state_of(prior_mean, prior_cov), cfg, default_shuffle_seeds(seed, orderings), seed);
            }
            py::dict out;
            out["names"] = r.names;
            out["spread_tempered"] = r.spread_tempered;
            out["spread_untempered"] = r.spread_untempered;
            out["tempered_wins"] = r.tempered_wins();
            return out;
        },
        py::arg("dataset"), py::arg("prior_mean"), py::arg("prior_cov"), py::arg("config"), py::arg("orderings") = 10,
        py::arg("seed") = 0);

    m.attr("SPEC_VERSION") = kSpecVersion;
}
