#include "rvgal/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <unordered_map>

#include "rvgal/error.hpp"
#include "rvgal/io.hpp"
#include "rvgal/rng.hpp"

namespace rvgal {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    std::string out(s.substr(b, e - b + 1));
    if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
    return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (char c : line) {
        if (c == '"') {
            quoted = !quoted;
        } else if (c == ',' && !quoted) {
            fields.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(trim(cur));
    return fields;
}

double parse_number(const std::string& text, std::size_t line_no, const std::string& column) {
    double value = 0.0;
    const char* first = text.data();
    const char* last = first + text.size();
    if (!text.empty() && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) {
        throw SchemaError("line " + std::to_string(line_no) + ": column '" + column + "' has non-numeric value '" +
                          text + "'");
    }
    return value;
}

bool is_x_column(const std::string& name) {
    return name.size() >= 2 && name[0] == 'x' &&
           std::all_of(name.begin() + 1, name.end(), [](char c) { return c >= '0' && c <= '9'; });
}

Dataset simulate(ModelKind kind, std::size_t n_groups, std::size_t n_per_group, const std::vector<double>& beta,
                 double sigma_alpha, double sigma_eps, std::uint64_t seed) {
    if (n_groups < 1 || n_per_group < 1) throw InvalidInput("simulation sizes must be positive");
    if (beta.empty()) throw InvalidInput("beta must have at least one entry");
    if (!(sigma_alpha >= 0.0) || !(sigma_eps >= 0.0) || !std::isfinite(sigma_alpha) || !std::isfinite(sigma_eps)) {
        throw InvalidInput("simulation scales must be finite and non-negative");
    }
    const auto p = static_cast<Eigen::Index>(beta.size());
    const auto n = static_cast<Eigen::Index>(n_per_group);
    const Vector b = Eigen::Map<const Vector>(beta.data(), p);
    Rng rng(seed);

    Dataset data;
    data.model = kind;
    SimulatedSource src{{n_groups, n_per_group, beta, sigma_alpha, sigma_eps}, seed,
                        Vector(static_cast<Eigen::Index>(n_groups))};
    data.groups.reserve(n_groups);
    for (std::size_t i = 0; i < n_groups; ++i) {
        GroupData g;
        g.group_id = std::to_string(i + 1);
        g.X.resize(n, p);
        g.z.resize(n);
        g.y.resize(n);
        const double alpha = sigma_alpha * rng.normal();
        src.random_effects(static_cast<Eigen::Index>(i)) = alpha;
        Vector noise(n);
        for (Eigen::Index j = 0; j < n; ++j) {
            for (Eigen::Index k = 0; k < p; ++k) g.X(j, k) = rng.normal();
            if (kind == ModelKind::LinearMixed) {
                g.z(j) = rng.normal();
                noise(j) = sigma_eps * rng.normal();
            } else {
                g.z(j) = 1.0;
                noise(j) = rng.uniform();
            }
        }
        const Vector eta = g.X * b + g.z * alpha;
        if (kind == ModelKind::LinearMixed) {
            g.y = eta + noise;
        } else {
            for (Eigen::Index j = 0; j < n; ++j) g.y(j) = noise(j) < sigmoid(eta(j)) ? 1.0 : 0.0;
        }
        data.groups.push_back(std::move(g));
    }
    data.provenance = std::move(src);
    return data;
}

}  // namespace

std::size_t Dataset::n_rows() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.size();
    return n;
}

void Dataset::validate() const {
    if (groups.empty()) throw InvalidInput("dataset has no groups");
    const auto p = n_fixed();
    for (const auto& g : groups) {
        if (g.n_fixed() != p) throw InvalidInput("group " + g.group_id + " has a different number of covariates");
        g.validate(model);
    }
}

SimulationParams default_lmm_params() { return {200, 10, {-1.5, 1.5, 0.5, 0.25}, 0.9, 0.7}; }

SimulationParams default_logistic_params() { return {500, 10, {-1.5, 1.5, 0.5, 0.25}, 0.9, 0.0}; }

Dataset simulate_lmm(std::size_t n_groups, std::size_t n_per_group, const std::vector<double>& beta,
                     double sigma_alpha, double sigma_eps, std::uint64_t seed) {
    return simulate(ModelKind::LinearMixed, n_groups, n_per_group, beta, sigma_alpha, sigma_eps, seed);
}

Dataset simulate_logistic(std::size_t n_groups, std::size_t n_per_group, const std::vector<double>& beta, double tau,
                          std::uint64_t seed) {
    return simulate(ModelKind::LogisticMixed, n_groups, n_per_group, beta, tau, 0.0, seed);
}

CsvSchema CsvSchema::parse(const std::string& name) {
    if (name == "generic") return generic();
    if (name == "sixcity" || name == "six-city") return six_city();
    if (name == "polypharmacy") return polypharmacy();
    throw InvalidInput("unknown CSV schema '" + name + "' (expected generic, sixcity or polypharmacy)");
}

std::string CsvSchema::name() const {
    switch (kind) {
        case SchemaKind::Generic: return "generic";
        case SchemaKind::SixCity: return "sixcity";
        case SchemaKind::Polypharmacy: return "polypharmacy";
    }
    return "generic";
}

std::array<double, 3> mhv_dummies(double visits) {
    if (visits >= 1.0 && visits <= 5.0) return {1.0, 0.0, 0.0};
    if (visits >= 6.0 && visits <= 14.0) return {0.0, 1.0, 0.0};
    if (visits >= 15.0) return {0.0, 0.0, 1.0};
    return {0.0, 0.0, 0.0};
}

Dataset load_grouped_csv(const std::filesystem::path& path, const CsvSchema& schema, ModelKind model) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw SchemaError(path.string() + ": missing header row");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    const auto header = split_csv_line(line);
    std::unordered_map<std::string, std::size_t> col;
    for (std::size_t k = 0; k < header.size(); ++k) col[header[k]] = k;
    auto require = [&](const std::string& name) {
        const auto it = col.find(name);
        if (it == col.end()) throw SchemaError(path.string() + ": missing column '" + name + "'");
        return it->second;
    };

    const std::size_t c_group = require("group_id");
    const std::size_t c_resp = require("response");
    std::vector<std::string> raw_names;
    switch (schema.kind) {
        case SchemaKind::Generic:
            raw_names = schema.x_columns;
            if (raw_names.empty()) {
                for (const auto& h : header) {
                    if (is_x_column(h)) raw_names.push_back(h);
                }
            }
            if (raw_names.empty()) throw SchemaError(path.string() + ": no design columns (x1, x2, ...) found");
            break;
        case SchemaKind::SixCity: raw_names = {"age", "smoke"}; break;
        case SchemaKind::Polypharmacy: raw_names = {"gender", "race", "age", "mhv", "inptmhv"}; break;
    }
    std::vector<std::size_t> raw_cols;
    for (const auto& name : raw_names) raw_cols.push_back(require(name));
    const std::optional<std::size_t> c_z = col.count("z") ? std::optional(col.at("z")) : std::nullopt;

    // design row from the raw column values
    auto design = [&schema](const std::vector<double>& raw) {
        std::vector<double> row;
        switch (schema.kind) {
            case SchemaKind::Generic: row = raw; break;
            case SchemaKind::SixCity: row = {1.0, raw[0], raw[1]}; break;
            case SchemaKind::Polypharmacy: {
                const auto mhv = mhv_dummies(raw[3]);
                row = {1.0, raw[0], raw[1], raw[2], mhv[0], mhv[1], mhv[2], raw[4] != 0.0 ? 1.0 : 0.0};
                break;
            }
        }
        return row;
    };

    struct Rows {
        std::vector<double> y, z;
        std::vector<std::vector<double>> x;
    };
    std::vector<std::string> order;
    std::map<std::string, Rows> rows;
    std::size_t line_no = 1;
    std::vector<double> raw(raw_cols.size());
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size()) {
            throw SchemaError(path.string() + ": line " + std::to_string(line_no) + " has " +
                              std::to_string(fields.size()) + " fields, header has " + std::to_string(header.size()));
        }
        const std::string& gid = fields[c_group];
        if (gid.empty()) throw SchemaError(path.string() + ": line " + std::to_string(line_no) + " has an empty group_id");
        auto [it, inserted] = rows.try_emplace(gid);
        if (inserted) order.push_back(gid);
        const double y = parse_number(fields[c_resp], line_no, "response");
        if (model == ModelKind::LogisticMixed && y != 0.0 && y != 1.0) {
            throw SchemaError(path.string() + ": line " + std::to_string(line_no) + " has non-binary response " +
                              fields[c_resp]);
        }
        for (std::size_t k = 0; k < raw_cols.size(); ++k) raw[k] = parse_number(fields[raw_cols[k]], line_no, raw_names[k]);
        it->second.y.push_back(y);
        it->second.z.push_back(c_z ? parse_number(fields[*c_z], line_no, "z") : 1.0);
        it->second.x.push_back(design(raw));
    }
    if (order.empty()) throw SchemaError(path.string() + ": no data rows");

    Dataset data;
    data.model = model;
    data.provenance = FileSource{path.string(), schema.name()};
    for (const auto& gid : order) {
        const Rows& r = rows.at(gid);
        const auto n = static_cast<Eigen::Index>(r.y.size());
        const auto p = static_cast<Eigen::Index>(r.x.front().size());
        GroupData g;
        g.group_id = gid;
        g.y = Eigen::Map<const Vector>(r.y.data(), n);
        g.z = Eigen::Map<const Vector>(r.z.data(), n);
        g.X.resize(n, p);
        for (Eigen::Index j = 0; j < n; ++j) {
            for (Eigen::Index k = 0; k < p; ++k) g.X(j, k) = r.x[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
        }
        data.groups.push_back(std::move(g));
    }
    data.validate();
    return data;
}

void write_grouped_csv(const std::filesystem::path& path, const Dataset& data) {
    data.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write " + path.string());
    const auto p = data.n_fixed();
    out << "group_id,response";
    for (std::size_t k = 0; k < p; ++k) out << ",x" << (k + 1);
    out << ",z\n";
    for (const auto& g : data.groups) {
        for (Eigen::Index j = 0; j < g.y.size(); ++j) {
            out << g.group_id << ',' << format_double(g.y(j));
            for (Eigen::Index k = 0; k < g.X.cols(); ++k) out << ',' << format_double(g.X(j, k));
            out << ',' << format_double(g.z(j)) << '\n';
        }
    }
    if (!out) throw InvalidInput("failed writing " + path.string());
}

Dataset reorder(const Dataset& data, const Ordering& ordering) {
    Dataset out = data;
    if (!ordering.shuffle_seed) return out;
    std::vector<std::size_t> perm(data.groups.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::mt19937_64 engine(*ordering.shuffle_seed);
    // Fisher-Yates with an explicit bounded draw so the order does not depend on the standard library.
    for (std::size_t i = perm.size(); i > 1; --i) {
        const std::uint64_t bound = i;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t r = engine();
        while (r >= limit) r = engine();
        std::swap(perm[i - 1], perm[static_cast<std::size_t>(r % bound)]);
    }
    for (std::size_t i = 0; i < perm.size(); ++i) out.groups[i] = data.groups[perm[i]];
    return out;
}

GaussianPrior default_prior(ModelKind kind, std::size_t n_fixed, bool real_data) {
    const std::size_t n_var = kind == ModelKind::LinearMixed ? 2 : 1;
    const auto d = static_cast<Eigen::Index>(n_fixed + n_var);
    const auto p = static_cast<Eigen::Index>(n_fixed);
    GaussianPrior prior{Vector::Zero(d), Matrix::Identity(d, d)};
    prior.cov.topLeftCorner(p, p) *= 10.0;
    const double var_mean = real_data && kind == ModelKind::LogisticMixed ? 1.0 : std::log(0.5 * 0.5);
    prior.mean.tail(static_cast<Eigen::Index>(n_var)).setConstant(var_mean);
    return prior;
}

}  // namespace rvgal
