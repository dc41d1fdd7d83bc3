#include <doctest.h>

#include <json.hpp>

#include "rvgal/data.hpp"
#include "rvgal/studies.hpp"

using namespace rvgal;

namespace {

struct Fixture {
    Dataset data = simulate_logistic(12, 5, {0.5, -0.5}, 0.8, 3);
    VariationalState prior;
    RvgalConfig cfg;

    Fixture() {
        const auto p = default_prior(ModelKind::LogisticMixed, 2);
        prior = VariationalState::from_covariance(p.mean, p.cov);
        cfg.s_theta = 20;
        cfg.s_alpha = 20;
        cfg.n_temp = 3;
        cfg.k_steps = 2;
    }
};

}  // namespace

TEST_SUITE("studies") {
    TEST_CASE("a single ordering has zero spread") {
        Fixture f;
        const auto r = ordering_study(f.data, f.prior, f.cfg, {77}, 5);
        CHECK(r.runs.size() == 2);
        CHECK_FALSE(r.runs[0].tempered);
        CHECK(r.runs[1].tempered);
        CHECK(r.runs[0].fit_seed == 5);
        CHECK(r.spread_tempered.isZero());
        CHECK(r.spread_untempered.isZero());
        CHECK(r.tempered_wins() == 0);
        CHECK(r.names.size() == 3);
    }

    TEST_CASE("ordering study shape and reproducibility") {
        Fixture f;
        const auto seeds = default_shuffle_seeds(10, 3);
        CHECK(seeds == std::vector<std::uint64_t>{1010, 1011, 1012});
        const auto a = ordering_study(f.data, f.prior, f.cfg, seeds, 10);
        const auto b = ordering_study(f.data, f.prior, f.cfg, seeds, 10);
        REQUIRE(a.runs.size() == 6);
        for (std::size_t i = 0; i < a.runs.size(); ++i) {
            CHECK(a.runs[i].ordering == i / 2);
            CHECK(a.runs[i].shuffle_seed == seeds[i / 2]);
            CHECK(a.runs[i].final_mean == b.runs[i].final_mean);
            CHECK((a.runs[i].final_sd.array() > 0.0).all());
        }
        CHECK((a.spread_tempered.array() >= 0.0).all());
        const auto j = nlohmann::json::parse(ordering_summary_json(a));
        CHECK(j.contains("spread_tempered"));
    }

    TEST_CASE("samples study grid") {
        Fixture f;
        const auto single = samples_study(f.data, f.prior, f.cfg, {10}, {15}, 1, 2);
        REQUIRE(single.cells.size() == 1);
        CHECK_FALSE(single.cells[0].variance.has_value());

        const auto r = samples_study(f.data, f.prior, f.cfg, {10, 20}, {15}, 3, 2);
        CHECK(r.runs.size() == 6);
        CHECK(r.cells.size() == 2);
        const auto* c = r.cell(20, 15);
        REQUIRE(c != nullptr);
        REQUIRE(c->variance.has_value());
        CHECK((c->variance->array() >= 0.0).all());
        CHECK(r.cell(30, 15) == nullptr);
        for (const auto& run : r.runs) CHECK(run.fit_seed == 2 + run.repeat);
        // the first repeat reproduces a single-repeat study
        for (const auto& run : r.runs) {
            if (run.s_theta == 10 && run.repeat == 0) CHECK(run.final_mean == single.runs[0].final_mean);
        }
        const auto j = nlohmann::json::parse(samples_summary_json(r));
        CHECK(j.is_object());
    }
}
