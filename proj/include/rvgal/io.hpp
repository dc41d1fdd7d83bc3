#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rvgal/data.hpp"
#include "rvgal/oracle.hpp"
#include "rvgal/rvgal.hpp"

namespace rvgal {

inline constexpr int kSpecVersion = 1;

struct DataSpec {
    // exactly one of simulate / file is used; simulate is the default
    std::optional<SimulationParams> simulate;
    std::optional<std::string> path;
    std::string schema = "generic";
    std::vector<std::string> x_columns;
};

struct PriorSpec {
    std::optional<std::vector<double>> mean;
    std::optional<std::vector<double>> cov_diag;
    std::optional<std::vector<std::vector<double>>> cov;
    bool real_data = false;
};

struct McmcSpec {
    std::size_t iters = 50000;
    std::size_t burnin = 10000;
    std::size_t quadrature_order = 50;
};

struct OrderingSpec {
    std::size_t count = 10;
    std::vector<std::uint64_t> seeds;  // overrides count when nonempty
};

struct SamplesStudySpec {
    std::vector<std::size_t> s_grid{50, 100, 500, 1000};
    std::vector<std::size_t> s_alpha_grid{50, 100, 500, 1000};
    std::size_t repeats = 10;
};

struct CompareSpec {
    double max_gap = 0.5;
    double sd_ratio_lo = 0.5;
    double sd_ratio_hi = 2.0;
};

/// Everything a command needs to be rerun: parsed from JSON with `spec_version: 1`.
struct StudyConfig {
    ModelKind model = ModelKind::LinearMixed;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    DerivMode deriv = DerivMode::Estimated;
    DataSpec data;
    PriorSpec prior;
    RvgalConfig rvgal;
    McmcSpec mcmc;
    OrderingSpec ordering;
    SamplesStudySpec samples_study;
    CompareSpec compare;

    /// Cross-field checks (exact derivatives need the LMM, grids nonempty, ...).
    void validate() const;
};

/// Throws SchemaError on unknown keys, wrong types or a missing/unsupported spec_version.
StudyConfig parse_study_config(const std::string& json_text);
StudyConfig load_study_config(const std::filesystem::path& path);
std::string study_config_to_json(const StudyConfig& cfg, int indent = 2);

/// Simulated defaults follow the model when data.simulate is unset and no path is given.
Dataset materialize_dataset(const StudyConfig& cfg);
/// Explicit prior from the config, or the model default sized to n_fixed.
GaussianPrior resolve_prior(const StudyConfig& cfg, std::size_t n_fixed);

void write_trace_csv(const std::filesystem::path& path, const FitTrace& trace, const ThetaLayout& layout);

struct FitSummary {
    ModelKind model = ModelKind::LinearMixed;
    std::vector<std::string> names;
    Vector mean;
    Matrix cov;
    std::size_t iterations = 0;
    double runtime_ms = 0.0;
};

void write_fit_summary(const std::filesystem::path& path, const FitSummary& summary, const StudyConfig& cfg);
FitSummary read_fit_summary(const std::filesystem::path& path);

/// Header row of parameter names, one draw per line.
void write_draws_csv(const std::filesystem::path& path, const Matrix& draws, const std::vector<std::string>& names);
std::pair<Matrix, std::vector<std::string>> read_draws_csv(const std::filesystem::path& path);

void write_json_file(const std::filesystem::path& path, const std::string& text);

/// Full-precision shortest round-trip formatting.
std::string format_double(double v);

}  // namespace rvgal
