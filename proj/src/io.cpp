#include "rvgal/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "rvgal/error.hpp"

namespace rvgal {

using nlohmann::json;

namespace {

// Strict JSON reading: every object has a closed key set and typed values.
class Reader {
public:
    Reader(const json& obj, std::string where, std::set<std::string> allowed) : obj_(obj), where_(std::move(where)) {
        if (!obj_.is_object()) throw SchemaError(where_ + " must be an object");
        for (const auto& [key, _] : obj_.items()) {
            if (!allowed.count(key)) throw SchemaError(where_ + ": unknown key '" + key + "'");
        }
    }

    bool has(const std::string& key) const { return obj_.contains(key) && !obj_.at(key).is_null(); }
    const json& raw(const std::string& key) const { return obj_.at(key); }
    std::string path(const std::string& key) const { return where_ + "." + key; }

    double number(const std::string& key, double fallback) const {
        if (!has(key)) return fallback;
        const auto& v = obj_.at(key);
        if (!v.is_number()) throw SchemaError(path(key) + " must be a number");
        return v.get<double>();
    }

    std::uint64_t count(const std::string& key, std::uint64_t fallback) const {
        return has(key) ? as_count(obj_.at(key), path(key)) : fallback;
    }

    std::string text(const std::string& key, const std::string& fallback) const {
        if (!has(key)) return fallback;
        const auto& v = obj_.at(key);
        if (!v.is_string()) throw SchemaError(path(key) + " must be a string");
        return v.get<std::string>();
    }

    bool flag(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        const auto& v = obj_.at(key);
        if (!v.is_boolean()) throw SchemaError(path(key) + " must be a boolean");
        return v.get<bool>();
    }

    std::vector<double> numbers(const std::string& key) const { return as_numbers(obj_.at(key), path(key)); }

    template <class T>
    std::vector<T> counts(const std::string& key) const {
        const auto& v = obj_.at(key);
        if (!v.is_array()) throw SchemaError(path(key) + " must be an array");
        std::vector<T> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            out.push_back(static_cast<T>(as_count(v[i], path(key) + "[" + std::to_string(i) + "]")));
        }
        return out;
    }

    static std::uint64_t as_count(const json& v, const std::string& where) {
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
            throw SchemaError(where + " must be a non-negative integer");
        }
        return v.get<std::uint64_t>();
    }

    static std::vector<double> as_numbers(const json& v, const std::string& where) {
        if (!v.is_array()) throw SchemaError(where + " must be an array of numbers");
        std::vector<double> out;
        for (const auto& e : v) {
            if (!e.is_number()) throw SchemaError(where + " must be an array of numbers");
            out.push_back(e.get<double>());
        }
        return out;
    }

private:
    const json& obj_;
    std::string where_;
};

std::string deriv_name(DerivMode m) { return m == DerivMode::ExactLmm ? "exact" : "estimated"; }

DerivMode parse_deriv(const std::string& s) {
    if (s == "estimated") return DerivMode::Estimated;
    if (s == "exact") return DerivMode::ExactLmm;
    throw SchemaError("deriv must be 'estimated' or 'exact', got '" + s + "'");
}

json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write " + path.string());
    return out;
}

}  // namespace

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

void StudyConfig::validate() const {
    if (deriv == DerivMode::ExactLmm && model != ModelKind::LinearMixed) {
        throw InvalidInput("exact derivatives are only available for the lmm model");
    }
    rvgal.validate();
    if (data.simulate && data.path) throw InvalidInput("data.simulate and data.path are mutually exclusive");
    if (data.simulate) {
        const auto& s = *data.simulate;
        if (s.n_groups < 1 || s.n_per_group < 1) throw InvalidInput("simulation sizes must be positive");
        if (s.beta.empty()) throw InvalidInput("data.simulate.beta must be nonempty");
        if (!(s.sigma_alpha >= 0.0) || !(s.sigma_eps >= 0.0)) throw InvalidInput("simulation scales must be >= 0");
    }
    if (prior.cov_diag && prior.cov) throw InvalidInput("prior.cov_diag and prior.cov are mutually exclusive");
    if (mcmc.iters <= mcmc.burnin) throw InvalidInput("mcmc.iters must exceed mcmc.burnin");
    if (mcmc.quadrature_order < 1 || mcmc.quadrature_order > 200) {
        throw InvalidInput("mcmc.quadrature_order must be in [1, 200]");
    }
    if (ordering.count < 1 && ordering.seeds.empty()) throw InvalidInput("ordering.count must be positive");
    if (samples_study.s_grid.empty() || samples_study.s_alpha_grid.empty()) {
        throw InvalidInput("samples_study grids must be nonempty");
    }
    for (auto s : samples_study.s_grid) {
        if (s < 1) throw InvalidInput("samples_study.s_grid entries must be positive");
    }
    for (auto s : samples_study.s_alpha_grid) {
        if (s < 1) throw InvalidInput("samples_study.s_alpha_grid entries must be positive");
    }
    if (samples_study.repeats < 1) throw InvalidInput("samples_study.repeats must be positive");
    if (!(compare.max_gap > 0.0) || !(compare.sd_ratio_lo > 0.0) || !(compare.sd_ratio_hi > compare.sd_ratio_lo)) {
        throw InvalidInput("compare thresholds must satisfy max_gap > 0 and 0 < sd_ratio_lo < sd_ratio_hi");
    }
}

StudyConfig parse_study_config(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw SchemaError(std::string("config is not valid JSON: ") + e.what());
    }
    const Reader top(doc, "config",
                     {"spec_version", "model", "seed", "out_dir", "deriv", "data", "prior", "rvgal", "mcmc", "ordering",
                      "samples_study", "compare"});
    if (!top.has("spec_version")) throw SchemaError("config: missing key 'spec_version'");
    if (top.count("spec_version", 0) != static_cast<std::uint64_t>(kSpecVersion)) {
        throw SchemaError("config: unsupported spec_version (expected " + std::to_string(kSpecVersion) + ")");
    }

    StudyConfig cfg;
    try {
        cfg.model = parse_model_kind(top.text("model", "lmm"));
    } catch (const InvalidInput& e) {
        throw SchemaError(std::string("config.model: ") + e.what());
    }
    cfg.seed = top.count("seed", 0);
    cfg.out_dir = top.text("out_dir", ".");
    cfg.deriv = parse_deriv(top.text("deriv", "estimated"));

    if (top.has("data")) {
        const Reader d(top.raw("data"), "config.data", {"simulate", "path", "schema", "x_columns"});
        if (d.has("simulate")) {
            const Reader s(d.raw("simulate"), "config.data.simulate",
                           {"n_groups", "n_per_group", "beta", "sigma_alpha", "sigma_eps", "tau"});
            SimulationParams p = cfg.model == ModelKind::LinearMixed ? default_lmm_params() : default_logistic_params();
            p.n_groups = s.count("n_groups", p.n_groups);
            p.n_per_group = s.count("n_per_group", p.n_per_group);
            if (s.has("beta")) p.beta = s.numbers("beta");
            p.sigma_alpha = s.number("sigma_alpha", s.number("tau", p.sigma_alpha));
            p.sigma_eps = s.number("sigma_eps", p.sigma_eps);
            cfg.data.simulate = p;
        }
        if (d.has("path")) cfg.data.path = d.text("path", "");
        cfg.data.schema = d.text("schema", "generic");
        if (d.has("x_columns")) {
            const auto& v = d.raw("x_columns");
            if (!v.is_array()) throw SchemaError("config.data.x_columns must be an array of strings");
            for (const auto& e : v) {
                if (!e.is_string()) throw SchemaError("config.data.x_columns must be an array of strings");
                cfg.data.x_columns.push_back(e.get<std::string>());
            }
        }
        try {
            (void)CsvSchema::parse(cfg.data.schema);
        } catch (const InvalidInput& e) {
            throw SchemaError(std::string("config.data.schema: ") + e.what());
        }
    }

    if (top.has("prior")) {
        const Reader p(top.raw("prior"), "config.prior", {"mean", "cov_diag", "cov", "real_data"});
        if (p.has("mean")) cfg.prior.mean = p.numbers("mean");
        if (p.has("cov_diag")) cfg.prior.cov_diag = p.numbers("cov_diag");
        if (p.has("cov")) {
            const auto& rows = p.raw("cov");
            if (!rows.is_array()) throw SchemaError("config.prior.cov must be an array of rows");
            std::vector<std::vector<double>> cov;
            for (std::size_t i = 0; i < rows.size(); ++i) {
                cov.push_back(Reader::as_numbers(rows[i], "config.prior.cov[" + std::to_string(i) + "]"));
            }
            cfg.prior.cov = cov;
        }
        cfg.prior.real_data = p.flag("real_data", false);
    }

    if (top.has("rvgal")) {
        const Reader r(top.raw("rvgal"), "config.rvgal",
                       {"s", "s_alpha", "n_temp", "k_steps", "jitter_base", "jitter_max_tries", "trace_substeps"});
        cfg.rvgal.s_theta = r.count("s", cfg.rvgal.s_theta);
        cfg.rvgal.s_alpha = r.count("s_alpha", cfg.rvgal.s_alpha);
        cfg.rvgal.n_temp = r.count("n_temp", cfg.rvgal.n_temp);
        cfg.rvgal.k_steps = r.count("k_steps", cfg.rvgal.k_steps);
        cfg.rvgal.jitter_base = r.number("jitter_base", cfg.rvgal.jitter_base);
        cfg.rvgal.jitter_max_tries = r.count("jitter_max_tries", cfg.rvgal.jitter_max_tries);
        cfg.rvgal.trace_substeps = r.flag("trace_substeps", cfg.rvgal.trace_substeps);
    }
    cfg.rvgal.seed = cfg.seed;

    if (top.has("mcmc")) {
        const Reader m(top.raw("mcmc"), "config.mcmc", {"iters", "burnin", "quadrature_order"});
        cfg.mcmc.iters = m.count("iters", cfg.mcmc.iters);
        cfg.mcmc.burnin = m.count("burnin", cfg.mcmc.burnin);
        cfg.mcmc.quadrature_order = m.count("quadrature_order", cfg.mcmc.quadrature_order);
    }

    if (top.has("ordering")) {
        const Reader o(top.raw("ordering"), "config.ordering", {"count", "seeds"});
        cfg.ordering.count = o.count("count", cfg.ordering.count);
        if (o.has("seeds")) cfg.ordering.seeds = o.counts<std::uint64_t>("seeds");
    }

    if (top.has("samples_study")) {
        const Reader s(top.raw("samples_study"), "config.samples_study", {"s_grid", "s_alpha_grid", "repeats"});
        if (s.has("s_grid")) cfg.samples_study.s_grid = s.counts<std::size_t>("s_grid");
        if (s.has("s_alpha_grid")) cfg.samples_study.s_alpha_grid = s.counts<std::size_t>("s_alpha_grid");
        cfg.samples_study.repeats = s.count("repeats", cfg.samples_study.repeats);
    }

    if (top.has("compare")) {
        const Reader c(top.raw("compare"), "config.compare", {"max_gap", "sd_ratio_lo", "sd_ratio_hi"});
        cfg.compare.max_gap = c.number("max_gap", cfg.compare.max_gap);
        cfg.compare.sd_ratio_lo = c.number("sd_ratio_lo", cfg.compare.sd_ratio_lo);
        cfg.compare.sd_ratio_hi = c.number("sd_ratio_hi", cfg.compare.sd_ratio_hi);
    }

    cfg.validate();
    return cfg;
}

StudyConfig load_study_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_study_config(ss.str());
}

std::string study_config_to_json(const StudyConfig& cfg, int indent) {
    json j;
    j["spec_version"] = kSpecVersion;
    j["model"] = std::string(to_string(cfg.model));
    j["seed"] = cfg.seed;
    j["out_dir"] = cfg.out_dir;
    j["deriv"] = deriv_name(cfg.deriv);
    json data = json::object();
    if (cfg.data.simulate) {
        const auto& s = *cfg.data.simulate;
        data["simulate"] = {{"n_groups", s.n_groups},
                            {"n_per_group", s.n_per_group},
                            {"beta", s.beta},
                            {"sigma_alpha", s.sigma_alpha},
                            {"sigma_eps", s.sigma_eps}};
    }
    if (cfg.data.path) data["path"] = *cfg.data.path;
    data["schema"] = cfg.data.schema;
    if (!cfg.data.x_columns.empty()) data["x_columns"] = cfg.data.x_columns;
    j["data"] = data;
    json prior = {{"real_data", cfg.prior.real_data}};
    if (cfg.prior.mean) prior["mean"] = *cfg.prior.mean;
    if (cfg.prior.cov_diag) prior["cov_diag"] = *cfg.prior.cov_diag;
    if (cfg.prior.cov) prior["cov"] = *cfg.prior.cov;
    j["prior"] = prior;
    j["rvgal"] = {{"s", cfg.rvgal.s_theta},
                  {"s_alpha", cfg.rvgal.s_alpha},
                  {"n_temp", cfg.rvgal.n_temp},
                  {"k_steps", cfg.rvgal.k_steps},
                  {"jitter_base", cfg.rvgal.jitter_base},
                  {"jitter_max_tries", cfg.rvgal.jitter_max_tries},
                  {"trace_substeps", cfg.rvgal.trace_substeps}};
    j["mcmc"] = {{"iters", cfg.mcmc.iters}, {"burnin", cfg.mcmc.burnin}, {"quadrature_order", cfg.mcmc.quadrature_order}};
    j["ordering"] = {{"count", cfg.ordering.count}, {"seeds", cfg.ordering.seeds}};
    j["samples_study"] = {{"s_grid", cfg.samples_study.s_grid},
                          {"s_alpha_grid", cfg.samples_study.s_alpha_grid},
                          {"repeats", cfg.samples_study.repeats}};
    j["compare"] = {{"max_gap", cfg.compare.max_gap},
                    {"sd_ratio_lo", cfg.compare.sd_ratio_lo},
                    {"sd_ratio_hi", cfg.compare.sd_ratio_hi}};
    return j.dump(indent);
}

Dataset materialize_dataset(const StudyConfig& cfg) {
    if (cfg.data.path) {
        auto schema = CsvSchema::parse(cfg.data.schema);
        if (schema.kind == SchemaKind::Generic) schema.x_columns = cfg.data.x_columns;
        return load_grouped_csv(*cfg.data.path, schema, cfg.model);
    }
    const SimulationParams p = cfg.data.simulate ? *cfg.data.simulate
                               : cfg.model == ModelKind::LinearMixed ? default_lmm_params()
                                                                      : default_logistic_params();
    return cfg.model == ModelKind::LinearMixed
               ? simulate_lmm(p.n_groups, p.n_per_group, p.beta, p.sigma_alpha, p.sigma_eps, cfg.seed)
               : simulate_logistic(p.n_groups, p.n_per_group, p.beta, p.sigma_alpha, cfg.seed);
}

GaussianPrior resolve_prior(const StudyConfig& cfg, std::size_t n_fixed) {
    GaussianPrior prior = default_prior(cfg.model, n_fixed, cfg.prior.real_data);
    const auto d = prior.mean.size();
    const auto check = [d](std::size_t n, const char* what) {
        if (static_cast<Eigen::Index>(n) != d) {
            throw InvalidInput(std::string("prior.") + what + " has length " + std::to_string(n) + ", expected " +
                               std::to_string(d));
        }
    };
    if (cfg.prior.mean) {
        check(cfg.prior.mean->size(), "mean");
        prior.mean = Eigen::Map<const Vector>(cfg.prior.mean->data(), d);
    }
    if (cfg.prior.cov_diag) {
        check(cfg.prior.cov_diag->size(), "cov_diag");
        prior.cov = Eigen::Map<const Vector>(cfg.prior.cov_diag->data(), d).asDiagonal();
    }
    if (cfg.prior.cov) {
        check(cfg.prior.cov->size(), "cov");
        for (Eigen::Index i = 0; i < d; ++i) {
            const auto& row = (*cfg.prior.cov)[static_cast<std::size_t>(i)];
            check(row.size(), "cov row");
            for (Eigen::Index k = 0; k < d; ++k) prior.cov(i, k) = row[static_cast<std::size_t>(k)];
        }
    }
    return prior;
}

void write_trace_csv(const std::filesystem::path& path, const FitTrace& trace, const ThetaLayout& layout) {
    auto out = open_out(path);
    out << "iteration,sub_step";
    for (const auto& name : layout.parameter_names()) out << ",mu_" << name;
    out << ",log_det_precision,min_ess,jitter_count,elapsed_ms\n";
    for (const auto& r : trace.records) {
        out << r.iteration << ',' << r.sub_step;
        for (Eigen::Index k = 0; k < r.mean.size(); ++k) out << ',' << format_double(r.mean(k));
        out << ',' << format_double(r.log_det_precision) << ',' << format_double(r.min_ess) << ',' << r.jitter_count
            << ',' << format_double(r.elapsed_ms) << '\n';
    }
}

void write_fit_summary(const std::filesystem::path& path, const FitSummary& summary, const StudyConfig& cfg) {
    json j;
    j["spec_version"] = kSpecVersion;
    j["model"] = std::string(to_string(summary.model));
    j["parameter_names"] = summary.names;
    j["mean"] = vec_json(summary.mean);
    json lower = json::array();
    for (Eigen::Index i = 0; i < summary.cov.rows(); ++i) {
        std::vector<double> row;
        for (Eigen::Index k = 0; k <= i; ++k) row.push_back(summary.cov(i, k));
        lower.push_back(row);
    }
    j["covariance_lower"] = lower;
    j["marginal_sd"] = vec_json(summary.cov.diagonal().cwiseSqrt());
    j["iterations"] = summary.iterations;
    j["runtime_ms"] = summary.runtime_ms;
    j["seed"] = cfg.seed;
    j["config"] = json::parse(study_config_to_json(cfg));
    write_json_file(path, j.dump(2));
}

FitSummary read_fit_summary(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError(path.string() + " is not valid JSON: " + e.what());
    }
    try {
        if (j.at("spec_version").get<int>() != kSpecVersion) throw SchemaError(path.string() + ": unsupported spec_version");
        FitSummary s;
        s.model = parse_model_kind(j.at("model").get<std::string>());
        s.names = j.at("parameter_names").get<std::vector<std::string>>();
        const auto mean = j.at("mean").get<std::vector<double>>();
        const auto d = static_cast<Eigen::Index>(mean.size());
        s.mean = Eigen::Map<const Vector>(mean.data(), d);
        s.cov.resize(d, d);
        const auto lower = j.at("covariance_lower").get<std::vector<std::vector<double>>>();
        if (static_cast<Eigen::Index>(lower.size()) != d) throw SchemaError(path.string() + ": covariance size mismatch");
        for (Eigen::Index i = 0; i < d; ++i) {
            const auto& row = lower[static_cast<std::size_t>(i)];
            if (static_cast<Eigen::Index>(row.size()) != i + 1) {
                throw SchemaError(path.string() + ": malformed covariance_lower");
            }
            for (Eigen::Index k = 0; k <= i; ++k) s.cov(i, k) = s.cov(k, i) = row[static_cast<std::size_t>(k)];
        }
        if (static_cast<Eigen::Index>(s.names.size()) != d) throw SchemaError(path.string() + ": names/mean mismatch");
        s.iterations = j.value("iterations", std::size_t{0});
        s.runtime_ms = j.value("runtime_ms", 0.0);
        return s;
    } catch (const json::exception& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
}

void write_draws_csv(const std::filesystem::path& path, const Matrix& draws, const std::vector<std::string>& names) {
    if (static_cast<Eigen::Index>(names.size()) != draws.cols()) throw InvalidInput("draws/names dimension mismatch");
    auto out = open_out(path);
    for (std::size_t k = 0; k < names.size(); ++k) out << (k ? "," : "") << names[k];
    out << '\n';
    for (Eigen::Index i = 0; i < draws.rows(); ++i) {
        for (Eigen::Index k = 0; k < draws.cols(); ++k) out << (k ? "," : "") << format_double(draws(i, k));
        out << '\n';
    }
}

std::pair<Matrix, std::vector<std::string>> read_draws_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw SchemaError(path.string() + ": missing header row");
    std::vector<std::string> names;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) names.push_back(cell);
    }
    std::vector<double> values;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t cols = 0;
        while (std::getline(ss, cell, ',')) {
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (ec != std::errc() || ptr != cell.data() + cell.size()) {
                throw SchemaError(path.string() + ": non-numeric draw '" + cell + "'");
            }
            values.push_back(v);
            ++cols;
        }
        if (cols != names.size()) throw SchemaError(path.string() + ": ragged draws row " + std::to_string(rows + 2));
        ++rows;
    }
    Matrix draws(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(names.size()));
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t k = 0; k < names.size(); ++k) {
            draws(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = values[i * names.size() + k];
        }
    }
    return {std::move(draws), std::move(names)};
}

void write_json_file(const std::filesystem::path& path, const std::string& text) {
    auto out = open_out(path);
    out << text << '\n';
    if (!out) throw InvalidInput("failed writing " + path.string());
}

}  // namespace rvgal
