#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rvgal/data.hpp"
#include "rvgal/rvgal.hpp"

namespace rvgal {

struct OrderingRun {
    std::size_t ordering = 0;
    std::uint64_t shuffle_seed = 0;
    std::uint64_t fit_seed = 0;
    bool tempered = false;
    Vector final_mean;
    Vector final_sd;
    double runtime_ms = 0.0;
};

struct OrderingStudyResult {
    std::vector<std::string> names;
    std::vector<OrderingRun> runs;  // ordering-major, untempered before tempered
    Vector spread_tempered;         // max - min of final means across orderings
    Vector spread_untempered;

    /// Parameters whose tempered spread is strictly below the untempered one.
    std::size_t tempered_wins() const;
};

/// Each ordering k shuffles with shuffle_seeds[k] and fits twice with seed base_seed + k:
/// once as configured and once with n_temp = 0.
OrderingStudyResult ordering_study(const Dataset& data, const VariationalState& prior, const RvgalConfig& cfg,
                                   const std::vector<std::uint64_t>& shuffle_seeds, std::uint64_t base_seed,
                                   DerivMode mode = DerivMode::Estimated);

/// Shuffle seeds base + 1000 + k for k < count.
std::vector<std::uint64_t> default_shuffle_seeds(std::uint64_t base_seed, std::size_t count);

struct SamplesRun {
    std::size_t s_theta = 0;
    std::size_t s_alpha = 0;
    std::size_t repeat = 0;
    std::uint64_t fit_seed = 0;
    Vector final_mean;
    double runtime_ms = 0.0;
};

struct SamplesCell {
    std::size_t s_theta = 0;
    std::size_t s_alpha = 0;
    Vector mean;
    std::optional<Vector> variance;  // sample variance over repeats; absent for a single repeat
};

struct SamplesStudyResult {
    std::vector<std::string> names;
    std::vector<SamplesRun> runs;
    std::vector<SamplesCell> cells;

    const SamplesCell* cell(std::size_t s_theta, std::size_t s_alpha) const;
};

/// Repeat r of every cell fits with seed base_seed + r, so cells share their random streams.
SamplesStudyResult samples_study(const Dataset& data, const VariationalState& prior, const RvgalConfig& cfg,
                                 const std::vector<std::size_t>& s_grid, const std::vector<std::size_t>& s_alpha_grid,
                                 std::size_t repeats, std::uint64_t base_seed,
                                 DerivMode mode = DerivMode::Estimated);

void write_ordering_runs_csv(const std::filesystem::path& path, const OrderingStudyResult& result);
std::string ordering_summary_json(const OrderingStudyResult& result);
void write_samples_runs_csv(const std::filesystem::path& path, const SamplesStudyResult& result);
std::string samples_summary_json(const SamplesStudyResult& result);

}  // namespace rvgal
