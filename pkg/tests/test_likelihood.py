import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from megh import (
    ClusteredDataset,
    ContractError,
    MarginalLikelihood,
    ModelSpec,
    ParameterVector,
    ParamLayout,
    QuadratureError,
    cond_loglik_cluster,
    log_marginal,
    marginal_lik_cluster,
)

from conftest import random_eta
from oracles import cluster_loglik_vec, mc_log_marginal, subject_loglik

# mpmath, 30 digits: one event at t = 1.3, unit-exponential baseline, normal
# log-frailty with sd 0.7
LOGNORMAL_FRAILTY_M = 0.21854596609507794756

MEGH1 = ModelSpec("megh1", "pgw", "normal")


def _dataset(times, status, cluster, X=None, hazard=(0,), time=(0,)):
    n = len(times)
    X = np.zeros((n, 0)) if X is None else np.asarray(X, float)
    names = tuple(f"x{j}" for j in range(X.shape[1]))
    return ClusteredDataset(times, status, cluster, X, names, hazard, time)


def test_single_subject_examples():
    data = _dataset([2.0, 2.0], [1, 0], [1, 2], hazard=(), time=())
    eta = ParameterVector([], [], [1.0, 1.0, 1.0], [1.0])
    assert cond_loglik_cluster(0, 0.0, eta, data, MEGH1) == pytest.approx(-2.0, abs=1e-14)
    assert cond_loglik_cluster(1, 0.0, eta, data, MEGH1) == pytest.approx(-2.0, abs=1e-14)


def test_three_subject_additivity(rng):
    X = rng.normal(size=(3, 2))
    data = _dataset([0.4, 1.1, 2.5], [1, 0, 1], [7, 7, 7], X=X, hazard=(0, 1), time=(1,))
    for model in (MEGH1, ModelSpec("megh2", "loglogistic", "t")):
        eta = random_eta(rng, model, p=2, pt=1)
        u = 0.37
        total = cond_loglik_cluster(0, u, eta, data, model)
        ut = u if model.structure.value == "megh2" else 0.0
        parts = [
            subject_loglik(data.times[k], data.status[k], X[k] @ eta.beta, X[k, 1:] @ eta.alpha, u, ut,
                           model.baseline.value, eta.theta)
            for k in range(3)
        ]
        assert total == pytest.approx(math.fsum(parts), rel=1e-12)


def test_lognormal_frailty_value(backend):
    data = _dataset([1.3], [1], [1], hazard=(), time=())
    eta = ParameterVector([], [], [1.0, 1.0, 1.0], [0.7])
    m, log_m = marginal_lik_cluster(0, eta, data, MEGH1)
    assert m == pytest.approx(LOGNORMAL_FRAILTY_M, rel=1e-9)
    assert log_m == pytest.approx(math.log(LOGNORMAL_FRAILTY_M), abs=1e-9)


def test_degenerate_effects_limit(small_data, rng, backend):
    eta = random_eta(rng, MEGH1)
    eta.xi = np.array([1e-8])
    terms = MarginalLikelihood(MEGH1, small_data).cluster_terms(eta)
    for i in range(small_data.r):
        assert terms.log_m[i] == pytest.approx(cond_loglik_cluster(i, 0.0, eta, small_data, MEGH1), abs=1e-6)


def test_gh_is_plain_sum(small_data, rng, backend):
    model = ModelSpec("gh", "pgw")
    eta = random_eta(rng, model)
    ref = sum(cond_loglik_cluster(i, 0.0, eta, small_data, model) for i in range(small_data.r))
    assert log_marginal(eta, small_data, model) == pytest.approx(ref, rel=1e-12)


def test_single_cluster(small_data, rng):
    one = small_data.subset(small_data.cluster_rows(2))
    assert one.r == 1
    eta = random_eta(rng, MEGH1)
    assert log_marginal(eta, one, MEGH1) == pytest.approx(marginal_lik_cluster(0, eta, one, MEGH1)[1], rel=1e-14)
    assert marginal_lik_cluster(2, eta, small_data, MEGH1)[1] == pytest.approx(
        marginal_lik_cluster(0, eta, one, MEGH1)[1], rel=1e-12
    )


def test_cluster_permutation_invariance(small_data, rng):
    eta = random_eta(rng, MEGH1)
    perm = rng.permutation(small_data.n)
    relabel = {lab: f"c{k:02d}" for k, lab in enumerate(reversed(small_data.cluster_labels.tolist()))}
    shuffled = ClusteredDataset(
        small_data.times[perm], small_data.status[perm],
        np.array([relabel[c] for c in small_data.cluster[perm]]),
        small_data.X[perm], small_data.covariate_names, small_data.hazard_columns, small_data.time_columns,
    )
    a = log_marginal(eta, small_data, MEGH1)
    b = log_marginal(eta, shuffled, MEGH1)
    assert abs(a - b) <= 1e-12 * abs(a)


@pytest.mark.parametrize("model", [MEGH1, ModelSpec("megh2", "pgw", "tpn"), ModelSpec("megh1", "loglogistic", "t")],
                         ids=lambda m: m.label())
def test_scaled_and_unscaled_agree(model, rng, backend):
    # small clusters so the unscaled integrand does not underflow
    data = _dataset(rng.exponential(size=12), rng.integers(0, 2, 12) | (np.arange(12) < 6),
                    np.repeat([1, 2, 3, 4], 3), X=rng.normal(size=(12, 1)))
    for _ in range(5):
        eta = random_eta(rng, model, p=1, pt=1)
        lm = MarginalLikelihood(model, data)
        a = lm.cluster_terms(eta, scaled=True).log_m
        b = lm.cluster_terms(eta, scaled=False).log_m
        ok = np.isfinite(b)
        assert ok.any()
        np.testing.assert_allclose(np.exp(a[ok]), np.exp(b[ok]), rtol=1e-8)


def test_refinement_is_stable(small_data, rng):
    for model in (MEGH1, ModelSpec("megh2", "pgw", "tpn")):
        eta = random_eta(rng, model)
        coarse = MarginalLikelihood(model, small_data).cluster_terms(eta).log_m
        fine = MarginalLikelihood(model, small_data, epsabs=1e-12, epsrel=1e-10).cluster_terms(eta).log_m
        assert np.max(np.abs(coarse - fine)) < 1e-6


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_directional_slopes_stable(small_data, seed):
    rng = np.random.default_rng(seed)
    lm = MarginalLikelihood(MEGH1, small_data)
    layout = ParamLayout(MEGH1, small_data.hazard_names, small_data.time_names)
    phi = layout.pack(random_eta(rng, MEGH1))
    v = rng.normal(size=phi.size)
    v /= np.linalg.norm(v)

    def slope(h):
        return (lm(layout.unpack(phi + h * v)) - lm(layout.unpack(phi - h * v))) / (2 * h)

    s1, s2 = slope(1e-3), slope(5e-4)
    if abs(s2) > 1e-3:
        assert s1 / s2 == pytest.approx(1.0, abs=0.05)
    else:
        assert abs(s1 - s2) < 1e-3


def test_monte_carlo_agreement(small_data, rng):
    """A few points here; the full 50-point check is in the acceptance suite."""
    for model in (MEGH1, ModelSpec("megh2", "loglogistic", "tpn")):
        eta = random_eta(rng, model)
        terms = MarginalLikelihood(model, small_data).cluster_terms(eta)
        lin_h = small_data.X_hazard @ eta.beta
        lin_t = small_data.X_time @ eta.alpha
        i = int(rng.integers(small_data.r))
        rows = small_data.cluster_rows(i)
        f = lambda u: cluster_loglik_vec(u, small_data.times[rows], small_data.status[rows], lin_h[rows],
                                         lin_t[rows], model.structure.value, model.baseline.value, eta.theta)
        mc, se = mc_log_marginal(f, model.re_family.value, eta.xi, 200_000, rng)
        assert abs(terms.log_m[i] - mc) < 3 * se + 1e-12


def test_parameter_size_mismatch(small_data):
    with pytest.raises(ContractError):
        log_marginal(ParameterVector([1.0], [0.9], [0.2, 1.5, 3.0], [1.0]), small_data, MEGH1)


def test_grid_needs_random_effects(small_data, rng):
    model = ModelSpec("gh", "pgw")
    with pytest.raises(ContractError):
        MarginalLikelihood(model, small_data).loglik_grid(random_eta(rng, model), [0.0])


def test_safe_maps_failures_to_minus_infinity(small_data, monkeypatch):
    lm = MarginalLikelihood(MEGH1, small_data)

    def broken(eta, scaled=True):
        raise QuadratureError("forced", cluster=1, params={})

    monkeypatch.setattr(lm, "cluster_terms", broken)
    eta = ParameterVector([1.0, 0.08, 0.22, 0.10], [0.96], [0.2, 1.5, 3.0], [1.0])
    assert lm.safe(eta) == -math.inf


def test_cluster_index_out_of_range(small_data, rng):
    with pytest.raises(IndexError):
        marginal_lik_cluster(small_data.r, random_eta(rng, MEGH1), small_data, MEGH1)
