#include "rvgal/studies.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "rvgal/error.hpp"
#include "rvgal/io.hpp"

namespace rvgal {

using nlohmann::json;

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

Vector spread(const std::vector<Vector>& rows) {
    Vector lo = rows.front();
    Vector hi = rows.front();
    for (const auto& r : rows) {
        lo = lo.cwiseMin(r);
        hi = hi.cwiseMax(r);
    }
    return hi - lo;
}

json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

std::vector<std::string> names_for(const Dataset& data) {
    return ThetaLayout::for_model(data.model, data.n_fixed()).parameter_names();
}

}  // namespace

std::size_t OrderingStudyResult::tempered_wins() const {
    std::size_t wins = 0;
    for (Eigen::Index k = 0; k < spread_tempered.size(); ++k) {
        if (spread_tempered(k) < spread_untempered(k)) ++wins;
    }
    return wins;
}

std::vector<std::uint64_t> default_shuffle_seeds(std::uint64_t base_seed, std::size_t count) {
    std::vector<std::uint64_t> seeds(count);
    for (std::size_t k = 0; k < count; ++k) seeds[k] = base_seed + 1000 + k;
    return seeds;
}

OrderingStudyResult ordering_study(const Dataset& data, const VariationalState& prior, const RvgalConfig& cfg,
                                   const std::vector<std::uint64_t>& shuffle_seeds, std::uint64_t base_seed,
                                   DerivMode mode) {
    if (shuffle_seeds.empty()) throw InvalidInput("ordering study needs at least one ordering");
    data.validate();
    OrderingStudyResult result;
    result.names = names_for(data);
    std::vector<Vector> tempered, untempered;
    for (std::size_t k = 0; k < shuffle_seeds.size(); ++k) {
        const Dataset shuffled = reorder(data, Ordering::shuffle(shuffle_seeds[k]));
        for (const bool temper : {false, true}) {
            RvgalConfig run_cfg = cfg;
            run_cfg.seed = base_seed + k;
            run_cfg.trace_substeps = false;
            if (!temper) run_cfg.n_temp = 0;
            const auto t0 = std::chrono::steady_clock::now();
            const FitTrace trace = rvgal_fit(data.model, shuffled.groups, prior, run_cfg, mode);
            OrderingRun run{k, shuffle_seeds[k], run_cfg.seed, temper, trace.final_state.mean,
                            trace.final_state.marginal_sd(), ms_since(t0)};
            (temper ? tempered : untempered).push_back(run.final_mean);
            result.runs.push_back(std::move(run));
        }
    }
    result.spread_tempered = spread(tempered);
    result.spread_untempered = spread(untempered);
    return result;
}

const SamplesCell* SamplesStudyResult::cell(std::size_t s_theta, std::size_t s_alpha) const {
    for (const auto& c : cells) {
        if (c.s_theta == s_theta && c.s_alpha == s_alpha) return &c;
    }
    return nullptr;
}

SamplesStudyResult samples_study(const Dataset& data, const VariationalState& prior, const RvgalConfig& cfg,
                                 const std::vector<std::size_t>& s_grid, const std::vector<std::size_t>& s_alpha_grid,
                                 std::size_t repeats, std::uint64_t base_seed, DerivMode mode) {
    if (s_grid.empty() || s_alpha_grid.empty() || repeats < 1) {
        throw InvalidInput("samples study needs nonempty grids and at least one repeat");
    }
    data.validate();
    SamplesStudyResult result;
    result.names = names_for(data);
    for (const auto s : s_grid) {
        for (const auto sa : s_alpha_grid) {
            std::vector<Vector> means;
            for (std::size_t r = 0; r < repeats; ++r) {
                RvgalConfig run_cfg = cfg;
                run_cfg.s_theta = s;
                run_cfg.s_alpha = sa;
                run_cfg.seed = base_seed + r;
                run_cfg.trace_substeps = false;
                const auto t0 = std::chrono::steady_clock::now();
                const FitTrace trace = rvgal_fit(data.model, data.groups, prior, run_cfg, mode);
                result.runs.push_back({s, sa, r, run_cfg.seed, trace.final_state.mean, ms_since(t0)});
                means.push_back(trace.final_state.mean);
            }
            SamplesCell c{s, sa, Vector::Zero(means.front().size()), std::nullopt};
            for (const auto& m : means) c.mean += m;
            c.mean /= static_cast<double>(repeats);
            if (repeats > 1) {
                Vector var = Vector::Zero(c.mean.size());
                for (const auto& m : means) var += (m - c.mean).cwiseAbs2();
                c.variance = var / static_cast<double>(repeats - 1);
            }
            result.cells.push_back(std::move(c));
        }
    }
    return result;
}

void write_ordering_runs_csv(const std::filesystem::path& path, const OrderingStudyResult& result) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write " + path.string());
    out << "ordering,shuffle_seed,fit_seed,tempered";
    for (const auto& n : result.names) out << ",mean_" << n;
    for (const auto& n : result.names) out << ",sd_" << n;
    out << ",runtime_ms\n";
    for (const auto& r : result.runs) {
        out << r.ordering << ',' << r.shuffle_seed << ',' << r.fit_seed << ',' << (r.tempered ? 1 : 0);
        for (Eigen::Index k = 0; k < r.final_mean.size(); ++k) out << ',' << format_double(r.final_mean(k));
        for (Eigen::Index k = 0; k < r.final_sd.size(); ++k) out << ',' << format_double(r.final_sd(k));
        out << ',' << format_double(r.runtime_ms) << '\n';
    }
}

std::string ordering_summary_json(const OrderingStudyResult& result) {
    json j;
    j["spec_version"] = kSpecVersion;
    j["parameter_names"] = result.names;
    j["orderings"] = result.runs.size() / 2;
    j["spread_tempered"] = vec_json(result.spread_tempered);
    j["spread_untempered"] = vec_json(result.spread_untempered);
    j["tempered_wins"] = result.tempered_wins();
    return j.dump(2);
}

void write_samples_runs_csv(const std::filesystem::path& path, const SamplesStudyResult& result) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write " + path.string());
    out << "s,s_alpha,repeat,fit_seed";
    for (const auto& n : result.names) out << ",mean_" << n;
    out << ",runtime_ms\n";
    for (const auto& r : result.runs) {
        out << r.s_theta << ',' << r.s_alpha << ',' << r.repeat << ',' << r.fit_seed;
        for (Eigen::Index k = 0; k < r.final_mean.size(); ++k) out << ',' << format_double(r.final_mean(k));
        out << ',' << format_double(r.runtime_ms) << '\n';
    }
}

std::string samples_summary_json(const SamplesStudyResult& result) {
    json j;
    j["spec_version"] = kSpecVersion;
    j["parameter_names"] = result.names;
    json cells = json::array();
    for (const auto& c : result.cells) {
        cells.push_back({{"s", c.s_theta},
                         {"s_alpha", c.s_alpha},
                         {"mean", vec_json(c.mean)},
                         {"variance", c.variance ? vec_json(*c.variance) : json(nullptr)}});
    }
    j["cells"] = cells;
    return j.dump(2);
}

}  // namespace rvgal
