#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rvgal/data.hpp"
#include "rvgal/error.hpp"
#include "rvgal/io.hpp"
#include "rvgal/oracle.hpp"
#include "rvgal/rvgal.hpp"
#include "rvgal/studies.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rvgal;

namespace {

constexpr int kExitCheckFailed = 1;
constexpr int kExitNonPd = 2;
constexpr int kExitUsage = 64;
constexpr int kExitData = 65;
constexpr int kExitIo = 74;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct GlobalFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string model;
    std::string deriv;
    std::optional<std::size_t> s;
    std::optional<std::size_t> s_alpha;
    std::optional<std::size_t> n_temp;
    std::optional<std::size_t> k_steps;
};

struct DataFlags {
    std::string path;
    std::string schema;
    bool real_data = false;
};

struct CommandResult {
    int exit_code = 0;
    std::vector<std::string> artifact_paths;
};

void emit_error(const std::string& command, const std::string& kind, const std::string& message,
                std::optional<std::size_t> iteration = std::nullopt) {
    json j{{"error", kind}, {"message", message}, {"command", command}};
    if (iteration) j["iteration"] = *iteration;
    std::cerr << j.dump() << std::endl;
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

StudyConfig resolve_config(const GlobalFlags& g, const DataFlags* data = nullptr) {
    StudyConfig cfg = g.config.empty() ? parse_study_config(R"({"spec_version": 1})") : load_study_config(g.config);
    if (!g.model.empty()) {
        try {
            cfg.model = parse_model_kind(g.model);
        } catch (const Error& e) {
            throw UsageError(e.what());
        }
    }
    if (g.seed) cfg.seed = *g.seed;
    if (!g.out.empty()) cfg.out_dir = g.out;
    if (!g.deriv.empty()) {
        if (g.deriv == "exact") {
            cfg.deriv = DerivMode::ExactLmm;
        } else if (g.deriv == "estimated") {
            cfg.deriv = DerivMode::Estimated;
        } else {
            throw UsageError("--deriv must be 'estimated' or 'exact'");
        }
    }
    if (cfg.deriv == DerivMode::ExactLmm && cfg.model != ModelKind::LinearMixed) {
        throw UsageError("--deriv exact is only valid with --model lmm");
    }
    if (g.s) cfg.rvgal.s_theta = *g.s;
    if (g.s_alpha) cfg.rvgal.s_alpha = *g.s_alpha;
    if (g.n_temp) cfg.rvgal.n_temp = *g.n_temp;
    if (g.k_steps) cfg.rvgal.k_steps = *g.k_steps;
    cfg.rvgal.seed = cfg.seed;
    if (data) {
        if (!data->path.empty()) {
            cfg.data.path = data->path;
            cfg.data.simulate.reset();
        }
        if (!data->schema.empty()) cfg.data.schema = data->schema;
        if (data->real_data) cfg.prior.real_data = true;
    }
    if (cfg.data.path && cfg.data.schema != "generic" && cfg.model == ModelKind::LinearMixed) {
        throw UsageError("the " + cfg.data.schema + " schema has a binary response; use --model logistic");
    }
    try {
        cfg.validate();
    } catch (const InvalidInput& e) {
        throw UsageError(e.what());
    }
    return cfg;
}

fs::path prepare_out(const StudyConfig& cfg) {
    const fs::path dir(cfg.out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
    const fs::path probe = dir / ".rvgal_write_probe";
    {
        std::ofstream f(probe);
        if (!f) throw IoError("output directory " + dir.string() + " is not writable");
    }
    fs::remove(probe, ec);
    return dir;
}

json manifest_base(const std::string& command, const StudyConfig& cfg) {
    return {{"spec_version", kSpecVersion},
            {"command", command},
            {"seed", cfg.seed},
            {"config", json::parse(study_config_to_json(cfg))}};
}

json dataset_json(const Dataset& data) {
    json j{{"model", std::string(to_string(data.model))},
           {"n_groups", data.groups.size()},
           {"n_rows", data.n_rows()},
           {"n_fixed", data.n_fixed()}};
    if (const auto* sim = std::get_if<SimulatedSource>(&data.provenance)) {
        j["source"] = "simulated";
        j["true_parameters"] = {{"beta", sim->params.beta}, {"n_per_group", sim->params.n_per_group}};
        if (data.model == ModelKind::LinearMixed) {
            j["true_parameters"]["sigma_alpha"] = sim->params.sigma_alpha;
            j["true_parameters"]["sigma_eps"] = sim->params.sigma_eps;
        } else {
            j["true_parameters"]["tau"] = sim->params.sigma_alpha;
        }
        j["simulation_seed"] = sim->seed;
    } else {
        const auto& file = std::get<FileSource>(data.provenance);
        j["source"] = "file";
        j["path"] = file.path;
        j["schema"] = file.schema;
    }
    return j;
}

VariationalState prior_state(const StudyConfig& cfg, const Dataset& data) {
    const GaussianPrior prior = resolve_prior(cfg, data.n_fixed());
    return VariationalState::from_covariance(prior.mean, prior.cov);
}

CommandResult cmd_simulate(const StudyConfig& cfg) {
    if (cfg.data.path) throw UsageError("simulate does not read a data file");
    const fs::path dir = prepare_out(cfg);
    const Dataset data = materialize_dataset(cfg);
    const fs::path csv = dir / "dataset.csv";
    const fs::path manifest = dir / "manifest.json";
    write_grouped_csv(csv, data);
    json m = manifest_base("simulate", cfg);
    m["dataset"] = dataset_json(data);
    m["artifacts"] = {csv.string(), manifest.string()};
    write_json_file(manifest, m.dump(2));
    return {0, {csv.string(), manifest.string()}};
}

CommandResult cmd_fit(const StudyConfig& cfg, const std::string& command) {
    const fs::path dir = prepare_out(cfg);
    const Dataset data = materialize_dataset(cfg);
    const VariationalState q0 = prior_state(cfg, data);
    const auto layout = ThetaLayout::for_model(cfg.model, data.n_fixed());
    const fs::path trace_csv = dir / "trace.csv";
    const fs::path summary_json = dir / "summary.json";

    const auto t0 = std::chrono::steady_clock::now();
    FitTrace trace;
    try {
        trace = rvgal_fit(cfg.model, data.groups, q0, cfg.rvgal, cfg.deriv);
    } catch (const FitFailure& e) {
        write_trace_csv(trace_csv, e.partial_trace(), layout);
        emit_error(command, e.kind(), e.what(), e.iteration());
        return {std::string(e.kind()) == "non_pd_precision" ? kExitNonPd : kExitCheckFailed, {trace_csv.string()}};
    }
    const double runtime = elapsed_ms(t0);
    write_trace_csv(trace_csv, trace, layout);
    FitSummary summary{cfg.model, layout.parameter_names(), trace.final_state.mean, trace.final_state.covariance(),
                       trace.group_records(), runtime};
    write_fit_summary(summary_json, summary, cfg);
    return {0, {trace_csv.string(), summary_json.string()}};
}

CommandResult cmd_reference(const StudyConfig& cfg, const std::string& init_summary) {
    const fs::path dir = prepare_out(cfg);
    const Dataset data = materialize_dataset(cfg);
    const GaussianPrior prior = resolve_prior(cfg, data.n_fixed());
    const auto route = cfg.model == ModelKind::LinearMixed ? LikelihoodRoute::ClosedFormLmm : LikelihoodRoute::Quadrature;
    const LogPosterior target(cfg.model, data.groups, prior.mean, prior.cov, gauss_hermite(cfg.mcmc.quadrature_order),
                              route);

    Vector init = prior.mean;
    RwmOptions options;
    if (!init_summary.empty()) {
        const FitSummary s = read_fit_summary(init_summary);
        if (s.mean.size() != init.size()) throw InvalidInput("init summary dimension does not match the model");
        init = s.mean;
        options.initial_cov = s.cov;
    }
    Rng rng(cfg.seed);
    const auto t0 = std::chrono::steady_clock::now();
    const McmcOutput out = rwm_sample([&](const Vector& t) { return target(t); }, init, cfg.mcmc.iters,
                                      cfg.mcmc.burnin, rng, options);
    const double runtime = elapsed_ms(t0);

    const auto names = target.layout().parameter_names();
    const fs::path draws_csv = dir / "draws.csv";
    const fs::path ref_json = dir / "reference.json";
    write_draws_csv(draws_csv, out.draws, names);
    const auto [mean, cov] = sample_moments(out.draws);
    json j = manifest_base("reference", cfg);
    j["dataset"] = dataset_json(data);
    j["parameter_names"] = names;
    j["likelihood"] = route == LikelihoodRoute::ClosedFormLmm ? "closed_form_lmm" : "gauss_hermite";
    j["n_iter"] = cfg.mcmc.iters;
    j["n_burnin"] = out.n_burnin;
    j["n_draws"] = out.draws.rows();
    j["acceptance_rate"] = out.acceptance_rate;
    j["burnin_acceptance_rate"] = out.burnin_acceptance_rate;
    j["proposal_scale"] = out.proposal_scale;
    j["posterior_mean"] = std::vector<double>(mean.data(), mean.data() + mean.size());
    const Vector sd = cov.diagonal().cwiseSqrt();
    j["posterior_sd"] = std::vector<double>(sd.data(), sd.data() + sd.size());
    j["runtime_ms"] = runtime;
    j["artifacts"] = {draws_csv.string(), ref_json.string()};
    write_json_file(ref_json, j.dump(2));
    return {0, {draws_csv.string(), ref_json.string()}};
}

CommandResult cmd_compare(const StudyConfig& cfg, const std::string& summary_path, const std::string& draws_path,
                          const std::string& command) {
    if (summary_path.empty() || draws_path.empty()) throw UsageError("compare needs --summary and --draws");
    const fs::path dir = prepare_out(cfg);
    const FitSummary summary = read_fit_summary(summary_path);
    const auto [draws, names] = read_draws_csv(draws_path);
    if (draws.cols() != summary.mean.size()) {
        throw InvalidInput("dimension mismatch: summary has " + std::to_string(summary.mean.size()) +
                           " parameters, draws have " + std::to_string(draws.cols()));
    }
    if (names != summary.names) throw InvalidInput("parameter names differ between summary and draws");
    const VariationalState q = VariationalState::from_covariance(summary.mean, summary.cov);
    const ComparisonReport report = compare_gaussian_vs_samples(q, draws, names);
    const bool pass = report.passes(cfg.compare.max_gap, cfg.compare.sd_ratio_lo, cfg.compare.sd_ratio_hi);

    const auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    json j{{"spec_version", kSpecVersion},
           {"command", "compare"},
           {"summary", summary_path},
           {"draws", draws_path},
           {"parameter_names", report.names},
           {"mean_q", vec(report.mean_q)},
           {"mean_mcmc", vec(report.mean_mcmc)},
           {"sd_q", vec(report.sd_q)},
           {"sd_mcmc", vec(report.sd_mcmc)},
           {"standardized_gap", vec(report.standardized_gap)},
           {"sd_ratio", vec(report.sd_ratio)},
           {"symmetric_kl", report.symmetric_kl},
           {"thresholds",
            {{"max_gap", cfg.compare.max_gap},
             {"sd_ratio_lo", cfg.compare.sd_ratio_lo},
             {"sd_ratio_hi", cfg.compare.sd_ratio_hi}}},
           {"pass", pass}};
    const fs::path report_json = dir / "compare.json";
    write_json_file(report_json, j.dump(2));
    if (!pass) {
        emit_error(command, "comparison_failed", "standardized gap or sd ratio outside the thresholds");
        return {kExitCheckFailed, {report_json.string()}};
    }
    return {0, {report_json.string()}};
}

CommandResult cmd_study_ordering(const StudyConfig& cfg) {
    const fs::path dir = prepare_out(cfg);
    const Dataset data = materialize_dataset(cfg);
    const auto seeds =
        cfg.ordering.seeds.empty() ? default_shuffle_seeds(cfg.seed, cfg.ordering.count) : cfg.ordering.seeds;
    const auto t0 = std::chrono::steady_clock::now();
    const OrderingStudyResult result = ordering_study(data, prior_state(cfg, data), cfg.rvgal, seeds, cfg.seed, cfg.deriv);
    const fs::path runs_csv = dir / "ordering_runs.csv";
    const fs::path summary = dir / "ordering_summary.json";
    write_ordering_runs_csv(runs_csv, result);
    json j = json::parse(ordering_summary_json(result));
    j["shuffle_seeds"] = seeds;
    j["seed"] = cfg.seed;
    j["config"] = json::parse(study_config_to_json(cfg));
    j["runtime_ms"] = elapsed_ms(t0);
    write_json_file(summary, j.dump(2));
    return {0, {runs_csv.string(), summary.string()}};
}

CommandResult cmd_study_samples(const StudyConfig& cfg) {
    const fs::path dir = prepare_out(cfg);
    const Dataset data = materialize_dataset(cfg);
    const auto& ss = cfg.samples_study;
    const auto t0 = std::chrono::steady_clock::now();
    const SamplesStudyResult result = samples_study(data, prior_state(cfg, data), cfg.rvgal, ss.s_grid,
                                                    ss.s_alpha_grid, ss.repeats, cfg.seed, cfg.deriv);
    const fs::path runs_csv = dir / "samples_runs.csv";
    const fs::path summary = dir / "samples_summary.json";
    write_samples_runs_csv(runs_csv, result);
    json j = json::parse(samples_summary_json(result));
    j["repeats"] = ss.repeats;
    j["seed"] = cfg.seed;
    j["config"] = json::parse(study_config_to_json(cfg));
    j["runtime_ms"] = elapsed_ms(t0);
    write_json_file(summary, j.dump(2));
    return {0, {runs_csv.string(), summary.string()}};
}

void add_data_flags(CLI::App* sub, DataFlags& d) {
    sub->add_option("--data", d.path, "Grouped long-format CSV (simulated data is used when omitted)");
    sub->add_option("--schema", d.schema, "CSV schema: generic, sixcity (age pre-centred at 9) or polypharmacy");
    sub->add_flag("--real-data", d.real_data, "Use the real-data prior (phi_tau mean 1)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Recursive variational Gaussian approximation for GLMMs"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    GlobalFlags g;
    app.add_option("--config", g.config, "Study config JSON (spec_version 1)")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "Random seed");
    app.add_option("--out", g.out, "Output directory");
    app.add_option("--model", g.model, "Model: lmm or logistic")->check(CLI::IsMember({"lmm", "logistic"}));
    app.add_option("--deriv", g.deriv, "Derivatives: estimated or exact (lmm only)")
        ->check(CLI::IsMember({"estimated", "exact"}));
    app.add_option("--s", g.s, "Theta samples per expectation");
    app.add_option("--s-alpha", g.s_alpha, "Importance samples of alpha per theta sample");
    app.add_option("--n-temp", g.n_temp, "Number of tempered groups");
    app.add_option("--k-steps", g.k_steps, "Tempering sub-steps per tempered group");
    app.fallthrough();

    auto* sim = app.add_subcommand("simulate", "Simulate a dataset and write dataset.csv + manifest.json");
    std::optional<std::size_t> sim_groups, sim_per_group;
    sim->add_option("--n-groups", sim_groups, "Number of groups");
    sim->add_option("--n-per-group", sim_per_group, "Observations per group");

    DataFlags fit_data, ref_data, ord_data, smp_data;
    auto* fit = app.add_subcommand("fit", "Run R-VGAL and write trace.csv + summary.json");
    add_data_flags(fit, fit_data);
    bool trace_substeps = false;
    fit->add_flag("--trace-substeps", trace_substeps, "Also record tempering sub-steps in the trace");

    auto* ref = app.add_subcommand("reference", "Run the adaptive random-walk Metropolis oracle");
    add_data_flags(ref, ref_data);
    std::optional<std::size_t> iters, burnin, quad_order;
    std::string init_summary;
    ref->add_option("--iters", iters, "Total iterations (default 50000)");
    ref->add_option("--burnin", burnin, "Burn-in iterations (default 10000)");
    ref->add_option("--quadrature-order", quad_order, "Gauss-Hermite order (default 50)");
    ref->add_option("--init-summary", init_summary, "Start from a fit summary's mean and covariance")
        ->check(CLI::ExistingFile);

    auto* cmp = app.add_subcommand("compare", "Compare a fit summary with reference draws");
    std::string summary_path, draws_path;
    std::optional<double> max_gap, sd_lo, sd_hi;
    cmp->add_option("--summary", summary_path, "summary.json from fit")->check(CLI::ExistingFile);
    cmp->add_option("--draws", draws_path, "draws.csv from reference")->check(CLI::ExistingFile);
    cmp->add_option("--max-gap", max_gap, "Largest allowed standardized mean gap (default 0.5)");
    cmp->add_option("--sd-ratio-lo", sd_lo, "Lower sd-ratio bound (default 0.5)");
    cmp->add_option("--sd-ratio-hi", sd_hi, "Upper sd-ratio bound (default 2.0)");

    auto* ord = app.add_subcommand("study-ordering", "Tempered vs untempered fits over random orderings");
    add_data_flags(ord, ord_data);
    std::optional<std::size_t> orderings;
    ord->add_option("--orderings", orderings, "Number of random orderings (default 10)");

    auto* smp = app.add_subcommand("study-samples", "Variance of final means over an (S, S_alpha) grid");
    add_data_flags(smp, smp_data);
    std::optional<std::size_t> repeats;
    std::vector<std::size_t> s_grid, s_alpha_grid;
    smp->add_option("--repeats", repeats, "Repeats per cell (default 10)");
    smp->add_option("--s-grid", s_grid, "S values")->delimiter(',');
    smp->add_option("--s-alpha-grid", s_alpha_grid, "S_alpha values")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        emit_error(app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name(), "usage_error",
                   e.what());
        return kExitUsage;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    CommandResult result;
    try {
        if (*sim) {
            StudyConfig cfg = resolve_config(g);
            if (sim_groups || sim_per_group) {
                SimulationParams p = cfg.data.simulate ? *cfg.data.simulate
                                     : cfg.model == ModelKind::LinearMixed ? default_lmm_params()
                                                                            : default_logistic_params();
                if (sim_groups) p.n_groups = *sim_groups;
                if (sim_per_group) p.n_per_group = *sim_per_group;
                cfg.data.simulate = p;
                cfg.validate();
            }
            result = cmd_simulate(cfg);
        } else if (*fit) {
            StudyConfig cfg = resolve_config(g, &fit_data);
            if (fit_data.real_data && !g.s && !g.s_alpha && g.config.empty()) {
                cfg.rvgal.s_theta = 200;
                cfg.rvgal.s_alpha = 200;
            }
            if (trace_substeps) cfg.rvgal.trace_substeps = true;
            result = cmd_fit(cfg, command);
        } else if (*ref) {
            StudyConfig cfg = resolve_config(g, &ref_data);
            if (iters) cfg.mcmc.iters = *iters;
            if (burnin) cfg.mcmc.burnin = *burnin;
            if (quad_order) cfg.mcmc.quadrature_order = *quad_order;
            try {
                cfg.validate();
            } catch (const InvalidInput& e) {
                throw UsageError(e.what());
            }
            result = cmd_reference(cfg, init_summary);
        } else if (*cmp) {
            StudyConfig cfg = resolve_config(g);
            if (max_gap) cfg.compare.max_gap = *max_gap;
            if (sd_lo) cfg.compare.sd_ratio_lo = *sd_lo;
            if (sd_hi) cfg.compare.sd_ratio_hi = *sd_hi;
            try {
                cfg.validate();
            } catch (const InvalidInput& e) {
                throw UsageError(e.what());
            }
            result = cmd_compare(cfg, summary_path, draws_path, command);
        } else if (*ord) {
            StudyConfig cfg = resolve_config(g, &ord_data);
            if (orderings) {
                if (*orderings < 1) throw UsageError("--orderings must be positive");
                cfg.ordering.count = *orderings;
                cfg.ordering.seeds.clear();
            }
            result = cmd_study_ordering(cfg);
        } else if (*smp) {
            StudyConfig cfg = resolve_config(g, &smp_data);
            if (repeats) cfg.samples_study.repeats = *repeats;
            if (!s_grid.empty()) cfg.samples_study.s_grid = s_grid;
            if (!s_alpha_grid.empty()) cfg.samples_study.s_alpha_grid = s_alpha_grid;
            try {
                cfg.validate();
            } catch (const InvalidInput& e) {
                throw UsageError(e.what());
            }
            result = cmd_study_samples(cfg);
        }
    } catch (const UsageError& e) {
        emit_error(command, "usage_error", e.what());
        return kExitUsage;
    } catch (const IoError& e) {
        emit_error(command, "io_error", e.what());
        return kExitIo;
    } catch (const NonPdPrecision& e) {
        emit_error(command, e.kind(), e.what(), e.iteration());
        return kExitNonPd;
    } catch (const SchemaError& e) {
        emit_error(command, e.kind(), e.what());
        return kExitData;
    } catch (const InvalidInput& e) {
        emit_error(command, e.kind(), e.what());
        return kExitData;
    } catch (const Error& e) {
        emit_error(command, e.kind(), e.what());
        return kExitCheckFailed;
    } catch (const std::exception& e) {
        emit_error(command, "internal_error", e.what());
        return kExitCheckFailed;
    }

    for (const auto& path : result.artifact_paths) std::cout << path << '\n';
    return result.exit_code;
}
