#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "rvgal/error.hpp"
#include "rvgal/estimators.hpp"
#include "rvgal/oracle.hpp"
#include "support.hpp"

using namespace rvgal;
using namespace rvgal::testing;

namespace {

struct Fixture {
    ModelKind kind;
    ThetaLayout layout;
    GroupData group;
    Theta theta;
};

Fixture lmm_fixture(std::uint64_t seed) {
    Rng rng(seed);
    const auto layout = ThetaLayout::for_model(ModelKind::LinearMixed, 4);
    GroupData g = random_group(ModelKind::LinearMixed, 10, 4, rng, "lmm");
    Vector t(6);
    t << -1.5, 1.5, 0.5, 0.25, std::log(0.81), std::log(0.49);
    // responses drawn from the model at t so the weights are not pathological
    const double alpha = 0.9 * rng.normal();
    for (Eigen::Index j = 0; j < g.y.size(); ++j) {
        g.y(j) = g.X.row(j).dot(t.head(4)) + g.z(j) * alpha + 0.7 * rng.normal();
    }
    return {ModelKind::LinearMixed, layout, g, Theta(t, layout)};
}

Fixture logistic_fixture(std::uint64_t seed) {
    Rng rng(seed);
    const auto layout = ThetaLayout::for_model(ModelKind::LogisticMixed, 4);
    GroupData g = random_group(ModelKind::LogisticMixed, 10, 4, rng, "logit");
    Vector t(5);
    t << -1.5, 1.5, 0.5, 0.25, std::log(0.81);
    return {ModelKind::LogisticMixed, layout, g, Theta(t, layout)};
}

}  // namespace

TEST_SUITE("estimators") {
    TEST_CASE("weight normalization") {
        SUBCASE("single sample") {
            const auto [w, ess] = normalize_log_weights(Vector::Constant(1, -3.0));
            CHECK(w(0) == 1.0);
            CHECK(ess == 1.0);
        }
        SUBCASE("identical log-weights are uniform") {
            const auto [w, ess] = normalize_log_weights(Vector::Constant(50, 4.2));
            CHECK((w.array() - 1.0 / 50).abs().maxCoeff() < 1e-15);
            CHECK(ess == doctest::Approx(50.0).epsilon(1e-12));
        }
        SUBCASE("shift invariance") {
            Rng rng(1);
            Vector lw(40);
            for (auto& v : lw) v = 5.0 * rng.normal();
            const auto [w1, e1] = normalize_log_weights(lw);
            const auto [w2, e2] = normalize_log_weights((lw.array() + 1000.0).matrix());
            CHECK((w1 - w2).cwiseAbs().maxCoeff() < 1e-12);
            CHECK(std::abs(w1.sum() - 1.0) < 1e-12);
            CHECK((w1.array() >= 0.0).all());
            CHECK(e1 >= 1.0);
            CHECK(e1 <= 40.0);
        }
        SUBCASE("degenerate inputs") {
            const double ninf = -std::numeric_limits<double>::infinity();
            CHECK_THROWS_AS(normalize_log_weights(Vector::Constant(3, ninf)), EstimatorDegenerate);
            Vector lw = Vector::Zero(3);
            lw(1) = std::nan("");
            CHECK_THROWS_AS(normalize_log_weights(lw), EstimatorDegenerate);
            lw(1) = ninf;
            const auto [w, ess] = normalize_log_weights(lw);
            CHECK(w(1) == 0.0);
            CHECK(ess == doctest::Approx(2.0));
        }
    }

    TEST_CASE("a single importance sample reduces to the joint derivatives") {
        for (const auto& f : {lmm_fixture(2), logistic_fixture(2)}) {
            Rng rng(3);
            const auto s = draw_weighted_alphas(f.kind, f.group, f.theta, 1, rng);
            CHECK(s.ess == 1.0);
            const Vector g = fisher_gradient(f.kind, f.group, f.theta, s);
            CHECK(g == joint_grad(f.kind, f.group, s.alphas(0), f.theta));
            const Matrix h = louis_hessian(f.kind, f.group, f.theta, s, g);
            CHECK(max_rel_err(h, joint_hessian(f.kind, f.group, s.alphas(0), f.theta)) < 1e-10);
        }
    }

    TEST_CASE("Louis estimate reuses the Fisher samples and consumes no randomness") {
        const auto f = lmm_fixture(4);
        Rng rng(5);
        const auto s = draw_weighted_alphas(f.kind, f.group, f.theta, 300, rng);
        CHECK(rng.draws() == 300);
        const Vector g = fisher_gradient(f.kind, f.group, f.theta, s);
        const Matrix h = louis_hessian(f.kind, f.group, f.theta, s, g);
        CHECK(rng.draws() == 300);
        CHECK((h - h.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK(s.ess >= 1.0);
        CHECK(s.ess <= 300.0);
    }

    TEST_CASE("fused estimator matches the separate calls bit for bit") {
        for (const auto& f : {lmm_fixture(6), logistic_fixture(6)}) {
            Rng a(7), b(7);
            const auto s = draw_weighted_alphas(f.kind, f.group, f.theta, 250, a);
            const Vector g = fisher_gradient(f.kind, f.group, f.theta, s);
            const Matrix h = louis_hessian(f.kind, f.group, f.theta, s, g);
            const JointDensity jd(f.kind, f.group, f.theta.values());
            const auto est = estimate_grad_hess(jd, 250, b);
            CHECK(est.grad == g);
            CHECK(est.hessian == h);
            CHECK(est.ess == s.ess);
            CHECK(est.s_alpha == 250);
            CHECK(a == b);
        }
    }

    TEST_CASE("estimators are deterministic given the samples") {
        const auto f = logistic_fixture(8);
        Rng rng(9);
        const auto s = draw_weighted_alphas(f.kind, f.group, f.theta, 100, rng);
        const Vector g1 = fisher_gradient(f.kind, f.group, f.theta, s);
        const Vector g2 = fisher_gradient(f.kind, f.group, f.theta, s);
        CHECK(g1 == g2);
        CHECK(louis_hessian(f.kind, f.group, f.theta, s, g1) == louis_hessian(f.kind, f.group, f.theta, s, g2));
    }

    TEST_CASE("mismatched inputs are rejected") {
        const auto f = lmm_fixture(10);
        Rng rng(11);
        auto s = draw_weighted_alphas(f.kind, f.group, f.theta, 10, rng);
        CHECK_THROWS_AS(louis_hessian(f.kind, f.group, f.theta, s, Vector::Zero(3)), InvalidInput);
        s.norm_weights.resize(5);
        CHECK_THROWS_AS(fisher_gradient(f.kind, f.group, f.theta, s), InvalidInput);
        CHECK_THROWS_AS(draw_weighted_alphas(f.kind, f.group, f.theta, 0, rng), InvalidInput);
    }

    TEST_CASE("LMM estimates agree with the closed form within three standard errors") {
        const auto f = lmm_fixture(12);
        Rng rng(13);
        const auto s = draw_weighted_alphas(f.kind, f.group, f.theta, 100000, rng);
        const Vector g = fisher_gradient(f.kind, f.group, f.theta, s);
        const Matrix h = louis_hessian(f.kind, f.group, f.theta, s, g);
        const auto se = estimator_standard_errors(f.kind, f.group, f.theta, s, g, h);
        const Vector ge = lmm_exact_grad(f.group, f.theta);
        const Matrix he = lmm_exact_hessian(f.group, f.theta);
        for (Eigen::Index i = 0; i < g.size(); ++i) {
            CHECK(std::abs(g(i) - ge(i)) <= 3.0 * se.grad_se(i));
            for (Eigen::Index k = 0; k < g.size(); ++k) CHECK(std::abs(h(i, k) - he(i, k)) <= 3.0 * se.hess_se(i, k));
        }
    }

    TEST_CASE("logistic estimates agree with quadrature finite differences") {
        const auto f = logistic_fixture(14);
        Rng rng(15);
        const auto s = draw_weighted_alphas(f.kind, f.group, f.theta, 100000, rng);
        const Vector g = fisher_gradient(f.kind, f.group, f.theta, s);
        const Matrix h = louis_hessian(f.kind, f.group, f.theta, s, g);
        const auto rule = gauss_hermite(60);
        const auto ll = [&](const Vector& v) { return quadrature_partial_loglik(f.kind, f.group, Theta(v, f.layout), rule); };
        const auto fd_g = [&](const Vector& v) { return fd_gradient(ll, v); };
        const Vector x = f.theta.values();
        CHECK((g - fd_g(x)).cwiseAbs().maxCoeff() < 5e-3);
        // second differences of the quadrature likelihood with a wider step
        Matrix fd_h(x.size(), x.size());
        const double step = 1e-3;
        for (Eigen::Index k = 0; k < x.size(); ++k) {
            Vector a = x, b = x;
            a(k) += step;
            b(k) -= step;
            fd_h.col(k) = (fd_g(a) - fd_g(b)) / (2 * step);
        }
        CHECK((h - fd_h).cwiseAbs().maxCoeff() < 1e-2);
    }

    TEST_CASE("Fisher estimate is consistent over replications") {
        const auto f = lmm_fixture(16);
        const Vector ge = lmm_exact_grad(f.group, f.theta);
        const int reps = 200;
        Rng rng(17);
        Matrix draws(reps, ge.size());
        for (int r = 0; r < reps; ++r) {
            const auto s = draw_weighted_alphas(f.kind, f.group, f.theta, 100, rng);
            draws.row(r) = fisher_gradient(f.kind, f.group, f.theta, s).transpose();
        }
        const Vector mean = draws.colwise().mean();
        const Vector sd = ((draws.rowwise() - mean.transpose()).cwiseAbs2().colwise().sum() / (reps - 1)).cwiseSqrt();
        for (Eigen::Index i = 0; i < ge.size(); ++i) CHECK(std::abs(mean(i) - ge(i)) < 4.0 * sd(i) / std::sqrt(reps));
    }

    TEST_CASE("estimator variance shrinks with more importance samples") {
        const auto f = logistic_fixture(18);
        const auto d = static_cast<Eigen::Index>(f.layout.dim());
        const int reps = 60;
        auto variances = [&](std::size_t s_alpha, std::uint64_t seed) {
            Rng rng(seed);
            Matrix gs(reps, d), hs(reps, d * d);
            for (int r = 0; r < reps; ++r) {
                const auto s = draw_weighted_alphas(f.kind, f.group, f.theta, s_alpha, rng);
                const Vector g = fisher_gradient(f.kind, f.group, f.theta, s);
                const Matrix h = louis_hessian(f.kind, f.group, f.theta, s, g);
                gs.row(r) = g.transpose();
                hs.row(r) = Eigen::Map<const Vector>(h.data(), d * d).transpose();
            }
            Matrix all(reps, d + d * d);
            all << gs, hs;
            const Vector mean = all.colwise().mean();
            return Vector((all.rowwise() - mean.transpose()).cwiseAbs2().colwise().sum() / (reps - 1));
        };
        const Vector small = variances(100, 19);
        const Vector large = variances(1600, 20);
        int shrunk = 0, total = 0;
        for (Eigen::Index i = 0; i < small.size(); ++i) {
            if (small(i) == 0.0) continue;
            ++total;
            if (large(i) < small(i)) ++shrunk;
        }
        CHECK(shrunk >= 0.95 * total);
    }

    TEST_CASE("a custom proposal centred on the posterior is accepted") {
        const auto f = lmm_fixture(21);
        // the exact conditional posterior of alpha in the LMM
        const double va = std::exp(f.theta[4]);
        const double ve = std::exp(f.theta[5]);
        const Vector r = f.group.y - f.group.X * f.theta.values().head(4);
        const double prec = 1.0 / va + f.group.z.squaredNorm() / ve;
        const double mean = f.group.z.dot(r) / ve / prec;
        const double sd = 1.0 / std::sqrt(prec);
        AlphaProposal proposal{[=](Rng& rng) { return mean + sd * rng.normal(); },
                               [=](double a) {
                                   const double u = (a - mean) / sd;
                                   return -0.5 * u * u - std::log(sd) - 0.5 * std::log(2 * std::numbers::pi);
                               }};
        Rng rng(22);
        const auto s = draw_weighted_alphas(f.kind, f.group, f.theta, 2000, rng, &proposal);
        // the proposal is the target, so the weights are uniform
        CHECK(s.ess == doctest::Approx(2000.0).epsilon(1e-6));
        const Vector g = fisher_gradient(f.kind, f.group, f.theta, s);
        const Vector ge = lmm_exact_grad(f.group, f.theta);
        CHECK((g - ge).cwiseAbs().maxCoeff() < 0.2 * std::max(1.0, ge.cwiseAbs().maxCoeff()));
    }
}
