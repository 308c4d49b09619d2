import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from megh import ContractError, ModelSpec, ParameterVector, ParamLayout, ValidationError

MODELS = [
    ModelSpec("gh", "pgw"),
    ModelSpec("megh1", "pgw", "normal"),
    ModelSpec("megh2", "loglogistic", "t"),
    ModelSpec("megh1", "pgw", "tpn"),
]


def test_names_and_order():
    layout = ParamLayout(ModelSpec("megh1", "pgw", "tpn"), ["age", "sex"], ["age"])
    assert layout.names == (
        "beta_age", "beta_sex", "alpha_age", "eta", "nu", "delta", "sigma_u", "gamma_u",
    )
    assert layout.kinds == ("id", "id", "id", "log", "log", "log", "log", "atanh")
    assert ParamLayout(ModelSpec("gh", "loglogistic"), ["a"], []).names == ("beta_a", "mu", "tau")


@settings(max_examples=80, deadline=None)
@given(st.sampled_from(MODELS), st.data())
def test_pack_unpack_bijection(model, data):
    layout = ParamLayout(model, ["a", "b"], ["a"])
    phi = np.array(data.draw(st.lists(st.floats(-3, 3), min_size=layout.dim, max_size=layout.dim)))
    params = layout.unpack(phi)
    np.testing.assert_allclose(layout.pack(params), phi, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(layout.unpack(layout.pack(params)).flat(), params.flat(), rtol=1e-12)


def test_fixed_parameters_are_held():
    model = ModelSpec("megh1", "pgw", "normal")
    layout = ParamLayout(model, ["a"], ["a"], fixed={"nu": 1.0, "sigma_u": 0.3})
    assert layout.dim == 4
    assert "nu" not in layout.free_names
    p = layout.unpack(np.zeros(layout.dim))
    assert p.theta[1] == 1.0 and p.xi[0] == 0.3


def test_unknown_fixed_parameter():
    with pytest.raises(ContractError, match="unknown"):
        ParamLayout(ModelSpec("gh", "pgw"), ["a"], [], fixed={"sigma_u": 1.0})


def test_jacobian_matches_finite_differences():
    layout = ParamLayout(ModelSpec("megh1", "pgw", "tpn"), ["a"], [])
    phi = np.array([0.2, -0.5, 0.3, 0.4, -0.2, 0.6])
    h = 1e-6
    fd = [(layout.natural(phi + h * e) - layout.natural(phi - h * e))[j] / (2 * h)
          for j, e in enumerate(np.eye(phi.size))]
    np.testing.assert_allclose(layout.jacobian_diag(phi), fd, rtol=1e-7)


def test_general_structure_rejected():
    with pytest.raises(ValidationError, match="megh1"):
        ModelSpec("megh", "pgw").validate()


def test_reduced_and_labels():
    m = ModelSpec("megh2", "pgw", "t")
    assert m.reduced() == ModelSpec("gh", "pgw", "t")
    assert m.label() == "megh2/pgw/t"
    assert m.reduced().label() == "gh/pgw"
    assert m.reduced().n_xi == 0 and m.n_xi == 1


def test_parameter_vector_round_trip():
    p = ParameterVector([1.0, 0.1], [0.5], [0.2, 1.5, 3.0], [1.0])
    q = ParameterVector.from_dict(p.to_dict())
    np.testing.assert_array_equal(p.flat(), q.flat())
    assert p.re_dist(ModelSpec("gh", "pgw")) is None
