import math

import numpy as np
import pytest

from megh import (
    ClusteredDataset,
    FitConfig,
    MarginalLikelihood,
    ModelSpec,
    ParameterVector,
    ParamLayout,
    SimConfig,
    aic,
    fit,
    simulate_times,
)
from megh.estimation import numerical_hessian
from megh.simulation import CovariateSpec, DEFAULT_COVARIATES

from conftest import STUDY_TRUTH

MEGH1 = ModelSpec("megh1", "pgw", "normal")
GH = ModelSpec("gh", "pgw")
QUICK = FitConfig(n_starts=1, compute_se=False)


@pytest.fixture(scope="module")
def megh1_fit(small_data):
    return fit(MEGH1, small_data, config=FitConfig(n_starts=2))


def test_exponential_mle():
    t = np.random.default_rng(4).exponential(2.5, size=400)
    data = ClusteredDataset(t, np.ones_like(t), np.repeat(np.arange(8), 50), np.zeros((400, 0)), (), ())
    res = fit(GH, data, config=FitConfig(fixed={"nu": 1.0, "delta": 1.0}))
    assert res.converged
    assert res.value("eta") == pytest.approx(t.mean(), abs=1e-4)
    # closed-form maximised log-likelihood: -n log(mean) - n
    assert res.log_lik == pytest.approx(-t.size * math.log(t.mean()) - t.size, abs=1e-6)
    assert res.dim == 1


def test_refit_is_a_fixed_point(megh1_fit, small_data):
    again = fit(MEGH1, small_data, init=megh1_fit.params, config=QUICK)
    assert again.log_lik == pytest.approx(megh1_fit.log_lik, abs=1e-8)
    np.testing.assert_allclose(again.phi, megh1_fit.phi, atol=1e-4)


def test_estimate_is_stationary(megh1_fit, small_data):
    lm = MarginalLikelihood(MEGH1, small_data)
    layout = megh1_fit.layout
    f = lambda phi: lm(layout.unpack(phi))
    phi = megh1_fit.phi
    grad = [(f(phi + 1e-5 * e) - f(phi - 1e-5 * e)) / 2e-5 for e in np.eye(phi.size)]
    assert np.max(np.abs(grad)) < 1e-4


def test_covariance_properties(megh1_fit):
    assert megh1_fit.converged and megh1_fit.hessian_ok
    cov = megh1_fit.covariance
    assert np.max(np.abs(cov - cov.T)) < 1e-8
    assert np.min(np.linalg.eigvalsh(cov)) > 0
    np.testing.assert_allclose(megh1_fit.standard_errors, np.sqrt(np.diag(cov)))
    ci = megh1_fit.confidence_intervals()
    assert np.all(ci[:, 0] < megh1_fit.estimates) and np.all(megh1_fit.estimates < ci[:, 1])


def test_numerical_hessian_of_known_function():
    A = np.array([[3.0, 1.0, -0.5], [1.0, 2.0, 0.3], [-0.5, 0.3, 1.5]])
    f = lambda x: 0.5 * x @ A @ x + math.sin(x[0])
    x = np.array([0.3, -0.2, 0.1])
    H = numerical_hessian(f, x, np.full(3, 1e-4))
    expected = A.copy()
    expected[0, 0] -= math.sin(x[0])
    np.testing.assert_allclose(H, expected, atol=1e-5)
    assert np.max(np.abs(H - H.T)) < 1e-6


def test_equivariance_under_rescaling(megh1_fit, small_data):
    j = small_data.covariate_names.index("wbc")
    X = small_data.X.copy()
    X[:, j] *= 2.5
    scaled = ClusteredDataset(small_data.times, small_data.status, small_data.cluster, X,
                              small_data.covariate_names, small_data.hazard_columns, small_data.time_columns)
    res = fit(MEGH1, scaled, config=FitConfig(n_starts=2, compute_se=False))
    assert res.value("beta_wbc") == pytest.approx(megh1_fit.value("beta_wbc") / 2.5, abs=1e-4)
    assert res.log_lik == pytest.approx(megh1_fit.log_lik, abs=1e-6)


def test_gh_equals_megh1_at_zero_variance(small_data):
    gh = fit(GH, small_data, config=QUICK)
    tiny = fit(MEGH1, small_data, config=FitConfig(n_starts=1, compute_se=False, fixed={"sigma_u": 1e-8}))
    assert abs(gh.log_lik - tiny.log_lik) < 1e-4


def test_parameter_count(small_data, leuk_data):
    names = small_data.hazard_names
    assert len(names) == 4 and len(small_data.time_names) == 1
    assert ParamLayout(GH, names, ("age",)).dim == 8
    assert ParamLayout(MEGH1, names, ("age",)).dim == 9
    assert ParamLayout(ModelSpec("megh2", "pgw", "tpn"), names, ("age",)).dim == 10
    assert ParamLayout(ModelSpec("megh1", "loglogistic", "t"), names, ("age",)).dim == 8
    assert ParamLayout(MEGH1, names, ("age",), fixed={"nu": 1.0}).dim == 8


def test_aic_definition(megh1_fit):
    assert aic(megh1_fit) == pytest.approx(-2 * megh1_fit.log_lik + 2 * 9)


def test_non_convergence_is_flagged(small_data):
    cfg = FitConfig(n_starts=1, compute_se=False, max_fev_per_dim=2, polish_rounds=0)
    res = fit(MEGH1, small_data, config=cfg)
    assert res.converged is False
    assert np.isfinite(res.log_lik)


def test_multistart_is_deterministic(small_data):
    cfg = FitConfig(n_starts=3, seed=11, compute_se=False)
    a = fit(GH, small_data, config=cfg)
    b = fit(GH, small_data, config=cfg)
    np.testing.assert_array_equal(a.phi, b.phi)
    assert len(a.start_log_liks) == 3
    assert a.log_lik >= max(a.start_log_liks) - 1e-8


def test_fit_report_round_trip(megh1_fit, small_data):
    d = megh1_fit.to_dict(small_data)
    assert [row["name"] for row in d["parameters"]] == list(megh1_fit.names)
    assert d["n_parameters"] == 9 and d["aic"] == pytest.approx(megh1_fit.aic)
    back = ParameterVector.from_dict(d["params"])
    np.testing.assert_array_equal(back.flat(), megh1_fit.params.flat())


def test_spurious_covariate_raises_aic():
    covs = DEFAULT_COVARIATES + (CovariateSpec("noise"),)
    truth = ParameterVector([1.0, 0.08, 0.22, 0.10, 0.0], [0.96], [0.2, 1.5, 3.0])
    worse = 0
    reps = 20
    for k in range(reps):
        cfg = SimConfig(GH, truth, n=300, r=10, covariates=covs,
                        hazard_covariates=("age", "sex", "wbc", "tpi", "noise"), seed=100 + k)
        big = simulate_times(cfg)
        small = big.with_columns(big.hazard_columns[:4], big.time_columns)
        worse += fit(GH, big, config=QUICK).aic > fit(GH, small, config=QUICK).aic
    assert worse >= 0.6 * reps


@pytest.mark.slow
def test_standard_errors_shrink_with_sample_size():
    ratios = []
    for k in range(2):
        se = []
        for n, r in ((1000, 10), (10_000, 100)):
            data = simulate_times(SimConfig(MEGH1, STUDY_TRUTH, n=n, r=r, seed=300 + k))
            res = fit(MEGH1, data, config=FitConfig(n_starts=1))
            se.append(res.standard_errors[res.names.index("beta_age")])
        ratios.append(se[0] / se[1])
    # sqrt(10) = 3.16
    assert 2.3 < np.mean(ratios) < 4.3


@pytest.mark.slow
def test_study_coverage_and_eta(megh1_study):
    s = megh1_study.summary()["models"]["megh1/pgw/normal"]
    names = megh1_study.truth_names
    beta = [j for j, n in enumerate(names) if n.startswith("beta_")]
    assert min(s["ci_coverage"][j] for j in beta) >= 0.88
    assert 0.18 < s["mean_estimate"][names.index("eta")] < 0.23
