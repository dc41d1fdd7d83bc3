import math

import numpy as np
import pytest

import rvgal

BETA = [-1.5, 1.5, 0.5, 0.25]


def test_gauss_hermite_weights_sum_to_sqrt_pi():
    nodes, weights = rvgal.gauss_hermite(20)
    assert nodes.shape == (20,)
    assert weights.sum() == pytest.approx(math.sqrt(math.pi), rel=1e-12)
    assert np.allclose(nodes, -nodes[::-1])
    with pytest.raises(rvgal.InvalidInput):
        rvgal.gauss_hermite(0)


def test_simulate_and_likelihoods():
    data = rvgal.simulate_lmm(5, 4, BETA, 0.9, 0.7, seed=1)
    assert len(data) == 5 and data.n_rows == 20 and data.model == "lmm"
    assert data.random_effects.shape == (5,)
    g = data.groups[0]
    theta = np.array(BETA + [math.log(0.81), math.log(0.49)])
    exact = rvgal.lmm_loglik(g, theta)
    assert rvgal.quadrature_loglik("lmm", g, theta, 50) == pytest.approx(exact, abs=1e-8)
    assert rvgal.lmm_grad(g, theta).shape == (6,)
    h = rvgal.lmm_hessian(g, theta)
    assert np.allclose(h, h.T)
    grad, hess, ess = rvgal.estimate_grad_hess("lmm", g, theta, 2000, seed=3)
    assert grad.shape == (6,) and hess.shape == (6, 6) and 1.0 <= ess <= 2000.0


def test_custom_group_and_joint_derivatives():
    g = rvgal.Group("a", np.array([1.0, 0.0, 1.0]), np.eye(3)[:, :2])
    assert len(g) == 3 and np.all(g.z == 1.0)
    theta = np.array([0.2, -0.3, math.log(0.5)])
    gr = rvgal.joint_grad("logistic", g, 0.1, theta)
    eps = 1e-6
    fd = [
        (rvgal.joint_loglik("logistic", g, 0.1, theta + eps * e) - rvgal.joint_loglik("logistic", g, 0.1, theta - eps * e))
        / (2 * eps)
        for e in np.eye(3)
    ]
    assert np.allclose(gr, fd, atol=1e-6)


def test_fit_is_deterministic_and_reasonable():
    data = rvgal.simulate_lmm(40, 10, BETA, 0.9, 0.7, seed=2)
    mean, cov = rvgal.default_prior("lmm", 4)
    cfg = rvgal.Config()
    cfg.s, cfg.s_alpha, cfg.seed = 30, 30, 5
    a = rvgal.fit(data, mean, cov, cfg)
    b = rvgal.fit(data, mean, cov, cfg)
    assert a.same_numbers(b)
    assert len(a.records) == 40
    assert np.all(np.abs(a.mean[:4] - BETA) < 5 * a.sd[:4])
    exact = rvgal.fit(data, mean, cov, cfg, deriv="exact")
    assert rvgal.symmetric_kl(a.mean, a.covariance, exact.mean, exact.covariance) >= 0.0
    with pytest.raises(rvgal.InvalidInput):
        rvgal.fit(rvgal.simulate_logistic(5, 3, BETA, 0.9, 1), *rvgal.default_prior("logistic", 4), cfg, "exact")


def test_reference_and_compare():
    rng = np.random.default_rng(0)
    draws = rng.normal(size=(5000, 2))
    rep = rvgal.compare(np.zeros(2), np.eye(2), draws, ["a", "b"])
    assert max(rep["standardized_gap"]) < 0.1
    out = rvgal.rwm(lambda x: -0.5 * float(x @ x), np.zeros(2), 4000, 1000, seed=1)
    assert out["draws"].shape == (3000, 2)
    assert 0.05 < out["acceptance_rate"] < 0.6


def test_csv_round_trip(tmp_path):
    data = rvgal.simulate_logistic(6, 3, BETA, 0.9, seed=4)
    path = tmp_path / "d.csv"
    rvgal.write_csv(str(path), data)
    back = rvgal.load_csv(str(path), "logistic")
    assert len(back) == 6
    assert np.array_equal(back.groups[2].X, data.groups[2].X)
    bad = tmp_path / "bad.csv"
    bad.write_text("group_id,x1\n1,2\n")
    with pytest.raises(rvgal.SchemaError):
        rvgal.load_csv(str(bad), "lmm")
