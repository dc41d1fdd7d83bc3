#include <doctest.h>

#include <cmath>
#include <numbers>

#include "rvgal/error.hpp"
#include "rvgal/model.hpp"
#include "support.hpp"

using namespace rvgal;
using namespace rvgal::testing;

namespace {

// Independent multivariate normal log-density via a dense Cholesky.
double mvn_logpdf(const Vector& x, const Vector& mean, const Matrix& cov) {
    const Eigen::LLT<Matrix> llt(cov);
    const Vector r = llt.matrixL().solve(x - mean);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return -0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) - 0.5 * logdet - 0.5 * r.squaredNorm();
}

Theta lmm_theta(const Vector& v) { return Theta(v, ThetaLayout::for_model(ModelKind::LinearMixed, v.size() - 2)); }

}  // namespace

TEST_SUITE("model") {
    TEST_CASE("layouts follow the model kind") {
        const auto lmm = ThetaLayout::for_model(ModelKind::LinearMixed, 4);
        CHECK(lmm.dim() == 6);
        CHECK(lmm.index_of("phi_alpha") == 4);
        CHECK(lmm.index_of("phi_eps") == 5);
        CHECK(lmm.parameter_names() ==
              std::vector<std::string>{"beta_1", "beta_2", "beta_3", "beta_4", "phi_alpha", "phi_eps"});
        const auto logit = ThetaLayout::for_model(ModelKind::LogisticMixed, 3);
        CHECK(logit.dim() == 4);
        CHECK(logit.index_of("phi_tau") == 3);
        CHECK_THROWS_AS(logit.index_of("phi_eps"), InvalidInput);
        CHECK(alpha_variance_index(ModelKind::LinearMixed, 4) == 4);
        CHECK(alpha_variance_index(ModelKind::LogisticMixed, 3) == 3);
    }

    TEST_CASE("model kind names round-trip") {
        CHECK(parse_model_kind("lmm") == ModelKind::LinearMixed);
        CHECK(parse_model_kind(to_string(ModelKind::LogisticMixed)) == ModelKind::LogisticMixed);
        CHECK_THROWS_AS(parse_model_kind("poisson"), InvalidInput);
    }

    TEST_CASE("theta rejects bad values and layouts") {
        const auto layout = ThetaLayout::for_model(ModelKind::LogisticMixed, 2);
        CHECK_THROWS_AS(Theta(Vector::Constant(2, 0.0), layout), InvalidInput);
        Vector v = Vector::Zero(3);
        v(1) = std::nan("");
        CHECK_THROWS_AS(Theta(v, layout), InvalidInput);
        CHECK_THROWS_AS(Theta(Vector::Zero(3), ThetaLayout{2, {"phi", "phi"}}), InvalidInput);
        CHECK_THROWS_AS(Theta(Vector::Zero(0), ThetaLayout{0, {}}), InvalidInput);
    }

    TEST_CASE("group validation") {
        Rng rng(1);
        GroupData g = random_group(ModelKind::LogisticMixed, 5, 2, rng);
        CHECK_NOTHROW(g.validate(ModelKind::LogisticMixed));
        GroupData bad = g;
        bad.y(0) = 0.5;
        CHECK_THROWS_AS(bad.validate(ModelKind::LogisticMixed), InvalidInput);
        CHECK_NOTHROW(bad.validate(ModelKind::LinearMixed));
        bad = g;
        bad.z.resize(4);
        CHECK_THROWS_AS(bad.validate(ModelKind::LinearMixed), InvalidInput);
        GroupData empty{"e", Vector(0), Matrix(0, 2), Vector(0)};
        CHECK_THROWS_AS(empty.validate(ModelKind::LinearMixed), InvalidInput);
    }

    TEST_CASE("lmm partial likelihood equals the marginal normal density") {
        Rng rng(2);
        for (int rep = 0; rep < 20; ++rep) {
            const GroupData g = random_group(ModelKind::LinearMixed, 1 + rep % 9, 3, rng);
            const Theta t = lmm_theta(random_theta(ThetaLayout::for_model(ModelKind::LinearMixed, 3), rng));
            const Vector beta = t.values().head(3);
            const Matrix sigma = std::exp(t[3]) * g.z * g.z.transpose() +
                                 std::exp(t[4]) * Matrix::Identity(g.y.size(), g.y.size());
            CHECK(lmm_partial_loglik(g, t) == doctest::Approx(mvn_logpdf(g.y, g.X * beta, sigma)).epsilon(1e-12));
        }
    }

    TEST_CASE("joint density splits into conditional and prior terms") {
        Rng rng(3);
        for (const auto kind : {ModelKind::LinearMixed, ModelKind::LogisticMixed}) {
            const GroupData g = random_group(kind, 6, 2, rng);
            const Theta t(random_theta(ThetaLayout::for_model(kind, 2), rng), ThetaLayout::for_model(kind, 2));
            const double a = 0.37;
            CHECK(joint_loglik(kind, g, a, t) ==
                  doctest::Approx(conditional_loglik(kind, g, a, t) + alpha_prior_logpdf(kind, a, t)).epsilon(1e-13));
            const double var = std::exp(t[alpha_variance_index(kind, 2)]);
            CHECK(alpha_prior_logpdf(kind, a, t) ==
                  doctest::Approx(-0.5 * std::log(2 * std::numbers::pi * var) - a * a / (2 * var)));
        }
    }

    TEST_CASE("logistic conditional likelihood is a Bernoulli log-mass") {
        Rng rng(4);
        const GroupData g = random_group(ModelKind::LogisticMixed, 7, 2, rng);
        const auto layout = ThetaLayout::for_model(ModelKind::LogisticMixed, 2);
        const Theta t(random_theta(layout, rng), layout);
        const double a = -0.8;
        double expect = 0.0;
        for (Eigen::Index j = 0; j < g.y.size(); ++j) {
            const double eta = g.X.row(j).dot(t.values().head(2)) + a;
            const double pr = 1.0 / (1.0 + std::exp(-eta));
            expect += g.y(j) > 0.5 ? std::log(pr) : std::log1p(-pr);
        }
        CHECK(conditional_loglik(ModelKind::LogisticMixed, g, a, t) == doctest::Approx(expect).epsilon(1e-12));
    }

    TEST_CASE("joint derivatives match finite differences") {
        Rng rng(5);
        for (const auto kind : {ModelKind::LinearMixed, ModelKind::LogisticMixed}) {
            const auto layout = ThetaLayout::for_model(kind, 4);
            for (int rep = 0; rep < 10; ++rep) {
                const GroupData g = random_group(kind, 10, 4, rng);
                const Vector x = random_theta(layout, rng);
                const double a = rng.normal();
                const auto f = [&](const Vector& v) { return joint_loglik(kind, g, a, Theta(v, layout)); };
                const auto gr = [&](const Vector& v) { return joint_grad(kind, g, a, Theta(v, layout)); };
                CHECK(max_rel_err(gr(x), fd_gradient(f, x)) < 1e-4);
                CHECK(max_rel_err(joint_hessian(kind, g, a, Theta(x, layout)), fd_jacobian(gr, x)) < 1e-4);
            }
        }
    }

    TEST_CASE("exact lmm derivatives match finite differences") {
        Rng rng(6);
        const auto layout = ThetaLayout::for_model(ModelKind::LinearMixed, 4);
        for (int rep = 0; rep < 10; ++rep) {
            const GroupData g = random_group(ModelKind::LinearMixed, 10, 4, rng);
            const Vector x = random_theta(layout, rng);
            const auto f = [&](const Vector& v) { return lmm_partial_loglik(g, Theta(v, layout)); };
            const auto gr = [&](const Vector& v) { return lmm_exact_grad(g, Theta(v, layout)); };
            CHECK(max_rel_err(gr(x), fd_gradient(f, x)) < 1e-4);
            const Matrix h = lmm_exact_hessian(g, Theta(x, layout));
            CHECK(max_rel_err(h, fd_jacobian(gr, x)) < 1e-4);
            CHECK((h - h.transpose()).cwiseAbs().maxCoeff() < 1e-12);
        }
    }

    TEST_CASE("joint Hessian is symmetric and the logistic beta block is negative definite") {
        Rng rng(7);
        const auto layout = ThetaLayout::for_model(ModelKind::LogisticMixed, 3);
        const GroupData g = random_group(ModelKind::LogisticMixed, 12, 3, rng);
        const Theta t(random_theta(layout, rng), layout);
        const Matrix h = joint_hessian(ModelKind::LogisticMixed, g, 0.2, t);
        CHECK((h - h.transpose()).cwiseAbs().maxCoeff() == 0.0);
        const Eigen::SelfAdjointEigenSolver<Matrix> es(h.topLeftCorner(3, 3));
        CHECK(es.eigenvalues().maxCoeff() < 0.0);
    }

    TEST_CASE("JointDensity agrees with the free functions") {
        Rng rng(8);
        for (const auto kind : {ModelKind::LinearMixed, ModelKind::LogisticMixed}) {
            const auto layout = ThetaLayout::for_model(kind, 3);
            const GroupData g = random_group(kind, 8, 3, rng);
            const Vector x = random_theta(layout, rng);
            const Theta t(x, layout);
            const JointDensity jd(kind, g, x);
            const double a = 0.6;
            Vector gr(layout.dim()), gr2(layout.dim());
            Matrix h(layout.dim(), layout.dim());
            jd.grad_hess(a, gr, h);
            jd.grad(a, gr2);
            CHECK(jd.conditional_loglik(a) == doctest::Approx(conditional_loglik(kind, g, a, t)).epsilon(1e-13));
            CHECK(jd.prior_logpdf(a) == doctest::Approx(alpha_prior_logpdf(kind, a, t)).epsilon(1e-13));
            CHECK((gr - joint_grad(kind, g, a, t)).cwiseAbs().maxCoeff() < 1e-12);
            CHECK(gr == gr2);
            CHECK((h - joint_hessian(kind, g, a, t)).cwiseAbs().maxCoeff() < 1e-12);
        }
    }

    TEST_CASE("stable logistic helpers") {
        CHECK(sigmoid(0.0) == 0.5);
        CHECK(sigmoid(800.0) == 1.0);
        CHECK(sigmoid(-800.0) >= 0.0);
        CHECK(std::isfinite(softplus(1000.0)));
        CHECK(softplus(1000.0) == doctest::Approx(1000.0));
        CHECK(softplus(-50.0) == doctest::Approx(std::exp(-50.0)));
        CHECK(softplus(0.3) == doctest::Approx(std::log1p(std::exp(0.3))).epsilon(1e-15));
    }

    TEST_CASE("random-effect prior draws have the right scale") {
        Rng rng(9);
        const auto layout = ThetaLayout::for_model(ModelKind::LogisticMixed, 1);
        Vector v(2);
        v << 0.0, std::log(0.81);
        const Vector a = sample_alpha_prior(ModelKind::LogisticMixed, Theta(v, layout), 200000, rng);
        CHECK(a.size() == 200000);
        CHECK(std::abs(a.mean()) < 4 * 0.9 / std::sqrt(200000.0));
        CHECK(a.squaredNorm() / 200000.0 == doctest::Approx(0.81).epsilon(0.01));
        CHECK_THROWS_AS(sample_alpha_prior(ModelKind::LogisticMixed, Theta(v, layout), 0, rng), InvalidInput);
    }
}
