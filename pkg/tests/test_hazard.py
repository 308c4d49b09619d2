import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from megh import (
    BaselineHazard,
    ContractError,
    RegressionCoefficients,
    cond_cum_hazard,
    cond_log_hazard,
    cond_survival,
    structure_effects,
)

B = BaselineHazard.pgw(0.2, 1.5, 3.0)
coefs = st.floats(-1.5, 1.5)


def test_unit_exponential_example():
    b = BaselineHazard.pgw(1, 1, 1)
    coef = RegressionCoefficients([1.0], [0.0])
    out = cond_log_hazard(2.0, [0.3], [0.0], 0.2, 0.0, coef, b)
    assert out == pytest.approx(0.5, abs=1e-14)


@settings(max_examples=50, deadline=None)
@given(coefs, coefs, st.floats(0.05, 5.0))
def test_proportional_hazards_when_alpha_zero(beta, x, t):
    coef = RegressionCoefficients([beta], [0.0])
    lhs = cond_log_hazard(t, [x], [x], 0.0, 0.0, coef, B)
    assert lhs == pytest.approx(math.log(B.hazard(t)) + beta * x, rel=1e-12, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(coefs, coefs, st.floats(0.05, 5.0))
def test_accelerated_failure_time_when_alpha_equals_beta(beta, x, t):
    coef = RegressionCoefficients([beta], [beta])
    scale = math.exp(beta * x)
    # AFT: S(t | x) = S0(t * exp(x beta))
    assert cond_survival(t, [x], [x], 0.0, 0.0, coef, B) == pytest.approx(
        float(B.survival(t * scale)), rel=1e-12
    )


@settings(max_examples=50, deadline=None)
@given(coefs, coefs, st.floats(0.05, 5.0))
def test_accelerated_hazard_when_beta_zero(alpha, x, t):
    coef = RegressionCoefficients([0.0], [alpha])
    lhs = cond_log_hazard(t, [x], [x], 0.0, 0.0, coef, B)
    assert lhs == pytest.approx(math.log(B.hazard(t * math.exp(alpha * x))), rel=1e-12, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(coefs, coefs, coefs, st.floats(-1.0, 1.0), st.floats(0.1, 3.0))
def test_cumhaz_integrates_conditional_hazard(beta, alpha, x, u, t):
    coef = RegressionCoefficients([beta], [alpha])
    f = lambda s: math.exp(cond_log_hazard(s, [x], [x], u, u, coef, B))
    num = integrate.quad(f, 0.0, t, epsrel=1e-11, epsabs=0, limit=200)[0]
    assert cond_cum_hazard(t, [x], [x], u, u, coef, B) == pytest.approx(num, rel=1e-7)


@settings(max_examples=50, deadline=None)
@given(coefs, coefs, coefs, st.floats(-3, 3), st.floats(1e-3, 1e3))
def test_survival_in_unit_interval(beta, alpha, x, u, t):
    coef = RegressionCoefficients([beta], [alpha])
    s = cond_survival(t, [x], [x], u, 0.0, coef, B)
    assert 0.0 <= s <= 1.0


def test_survival_one_at_origin():
    coef = RegressionCoefficients([0.4], [0.2])
    assert cond_survival(0.0, [1.0], [1.0], 0.3, 0.3, coef, B) == 1.0


def test_vectorised_over_subjects():
    coef = RegressionCoefficients([0.5, -0.2], [0.3])
    x = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
    xt = np.array([[1.0], [0.0], [0.5]])
    t = np.array([0.3, 1.0, 2.0])
    many = cond_cum_hazard(t, x, xt, 0.1, 0.0, coef, B)
    one = [cond_cum_hazard(t[k], x[k], xt[k], 0.1, 0.0, coef, B) for k in range(3)]
    np.testing.assert_allclose(many, one, rtol=1e-14)


def test_structure_effects():
    u = np.array([-0.5, 0.0, 1.2])
    np.testing.assert_array_equal(structure_effects("gh", u)[0], 0.0)
    np.testing.assert_array_equal(structure_effects("gh", u)[1], 0.0)
    uh, ut = structure_effects("megh1", u)
    np.testing.assert_array_equal(uh, u)
    np.testing.assert_array_equal(ut, 0.0)
    uh, ut = structure_effects("megh2", u)
    np.testing.assert_array_equal(uh, u)
    np.testing.assert_array_equal(ut, u)
    with pytest.raises(ContractError):
        structure_effects("megh", u)


def test_dimension_mismatch():
    coef = RegressionCoefficients([0.5, 0.1], [0.3])
    with pytest.raises(ContractError):
        cond_log_hazard(1.0, [1.0], [1.0], 0.0, 0.0, coef, B)
    with pytest.raises(ContractError):
        cond_cum_hazard(1.0, [1.0, 2.0], [1.0, 2.0], 0.0, 0.0, coef, B)
