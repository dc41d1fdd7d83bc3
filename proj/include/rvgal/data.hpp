#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "rvgal/model.hpp"

namespace rvgal {

struct SimulationParams {
    std::size_t n_groups = 0;
    std::size_t n_per_group = 0;
    std::vector<double> beta;
    double sigma_alpha = 0.0;  // random-effect sd (tau for the logistic model)
    double sigma_eps = 0.0;    // unused by the logistic model
};

struct SimulatedSource {
    SimulationParams params;
    std::uint64_t seed = 0;
    Vector random_effects;  // the realized alpha_i, in group order
};

struct FileSource {
    std::string path;
    std::string schema;
};

/// Grouped dataset; immutable once built.
struct Dataset {
    std::vector<GroupData> groups;
    ModelKind model = ModelKind::LinearMixed;
    std::variant<SimulatedSource, FileSource> provenance;

    std::size_t n_fixed() const { return groups.empty() ? 0 : groups.front().n_fixed(); }
    std::size_t n_rows() const;
    /// Nonempty, consistent p, and every group valid for the model.
    void validate() const;
};

SimulationParams default_lmm_params();
SimulationParams default_logistic_params();

/// y_ij = x_ij^T beta + z_ij alpha_i + eps_ij with x ~ N(0, I_p), z ~ N(0, 1).
Dataset simulate_lmm(std::size_t n_groups, std::size_t n_per_group, const std::vector<double>& beta,
                     double sigma_alpha, double sigma_eps, std::uint64_t seed);

/// y_ij ~ Bernoulli(logit^{-1}(x_ij^T beta + alpha_i)) with a random intercept.
Dataset simulate_logistic(std::size_t n_groups, std::size_t n_per_group, const std::vector<double>& beta,
                          double tau, std::uint64_t seed);

enum class SchemaKind { Generic, SixCity, Polypharmacy };

/// Column layout of a long-format grouped CSV (one row per group occasion).
struct CsvSchema {
    SchemaKind kind = SchemaKind::Generic;
    /// Generic only: design columns in order. Empty means every x<k> column in header order.
    std::vector<std::string> x_columns;

    static CsvSchema generic(std::vector<std::string> x_columns = {}) { return {SchemaKind::Generic, std::move(x_columns)}; }
    static CsvSchema six_city() { return {SchemaKind::SixCity, {}}; }
    static CsvSchema polypharmacy() { return {SchemaKind::Polypharmacy, {}}; }
    /// "generic", "sixcity" or "polypharmacy".
    static CsvSchema parse(const std::string& name);
    std::string name() const;
};

/// Polypharmacy dummy coding of outpatient mental-health visit counts:
/// {MHV1, MHV2, MHV3} for 1-5, 6-14 and 15+ visits.
std::array<double, 3> mhv_dummies(double visits);

/// Reads `group_id,response,...`; groups keep first-appearance order and may be ragged.
/// SixCity expects `age` (already centred) and `smoke`; Polypharmacy expects
/// `gender,race,age,mhv,inptmhv`. A `z` column is used when present, otherwise z = 1.
Dataset load_grouped_csv(const std::filesystem::path& path, const CsvSchema& schema, ModelKind model);

/// Generic long-format CSV with columns group_id,response,x1..xp,z at full precision.
void write_grouped_csv(const std::filesystem::path& path, const Dataset& data);

struct Ordering {
    std::optional<std::uint64_t> shuffle_seed;  // nullopt keeps the original order

    static Ordering original() { return {}; }
    static Ordering shuffle(std::uint64_t seed) { return {seed}; }
};

/// Permutes group order only.
Dataset reorder(const Dataset& data, const Ordering& ordering);

/// Prior / initial variational distribution used by the worked examples.
/// Fixed effects get N(0, 10); the log-variances get N(log 0.25, 1), or
/// N(1, 1) for the real-data logistic models.
struct GaussianPrior {
    Vector mean;
    Matrix cov;
};
GaussianPrior default_prior(ModelKind kind, std::size_t n_fixed, bool real_data = false);

}  // namespace rvgal
