"""The compiled and pure-Python kernels must agree with each other and with
brute-force integration."""

import math

import numpy as np
import pytest

from megh import MarginalLikelihood, ModelSpec, cond_loglik_cluster
from megh._backend import available, use_backend

from conftest import random_eta
from oracles import cluster_loglik_vec, quad_log_marginal

MODELS = [
    ModelSpec("megh1", "pgw", "normal"),
    ModelSpec("megh1", "pgw", "tpn"),
    ModelSpec("megh2", "pgw", "normal"),
    ModelSpec("megh2", "loglogistic", "t"),
    ModelSpec("megh1", "loglogistic", "tpn"),
    ModelSpec("gh", "pgw"),
]


@pytest.mark.skipif(len(available()) < 2, reason="compiled extension not built")
@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.label())
def test_backends_agree(model, small_data, rng):
    lm = MarginalLikelihood(model, small_data)
    for _ in range(3):
        eta = random_eta(rng, model)
        with use_backend("compiled"):
            a = lm.cluster_terms(eta)
        with use_backend("python"):
            b = lm.cluster_terms(eta)
        np.testing.assert_allclose(a.log_m, b.log_m, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(a.log_k, b.log_k, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("model", MODELS[:5], ids=lambda m: m.label())
def test_log_marginal_matches_scipy_quad(model, small_data, rng, backend):
    lm = MarginalLikelihood(model, small_data)
    eta = random_eta(rng, model)
    terms = lm.cluster_terms(eta)
    lin_h = small_data.X_hazard @ eta.beta
    lin_t = small_data.X_time @ eta.alpha
    for i in (0, 3, small_data.r - 1):
        rows = small_data.cluster_rows(i)
        args = (small_data.times[rows], small_data.status[rows], lin_h[rows], lin_t[rows],
                model.structure.value, model.baseline.value, eta.theta)
        f = lambda u: float(cluster_loglik_vec(np.array([u]), *args)[0])
        ref = quad_log_marginal(f, model.re_family.value, eta.xi, float(terms.mode[i]), model.t_df)
        assert terms.log_m[i] == pytest.approx(ref, rel=1e-8, abs=1e-8)


@pytest.mark.parametrize("model", MODELS[:4], ids=lambda m: m.label())
def test_loglik_grid_matches_direct_evaluation(model, small_data, rng, backend):
    eta = random_eta(rng, model)
    grid = np.linspace(-3, 3, 7)
    out = MarginalLikelihood(model, small_data).loglik_grid(eta, grid)
    assert out.shape == (small_data.r, grid.size)
    for i in range(small_data.r):
        np.testing.assert_allclose(out[i], cond_loglik_cluster(i, grid, eta, small_data, model), rtol=1e-11)


def test_scaling_constant_and_mode(small_data, rng, backend):
    model = ModelSpec("megh2", "pgw", "normal")
    eta = random_eta(rng, model)
    terms = MarginalLikelihood(model, small_data).cluster_terms(eta)
    dist = eta.re_dist(model)
    for i in range(small_data.r):
        grid = np.linspace(-8, 8, 16001)
        ll = cond_loglik_cluster(i, grid, eta, small_data, model)
        # log K is the maximum of the cluster log-likelihood alone
        assert terms.log_k[i] >= ll.max() - 1e-9
        assert terms.log_k[i] == pytest.approx(ll.max(), abs=1e-4)
        # the mode is where the integrand (likelihood times density) peaks
        post = ll + dist.log_density(grid)
        assert abs(terms.mode[i] - grid[np.argmax(post)]) < 2e-3
