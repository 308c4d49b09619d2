from pathlib import Path

import numpy as np
import pytest

from megh import ColumnRoles, ModelSpec, ParameterVector, SimConfig, load_dataset, simulate_times
from megh._backend import available, use_backend

DATA_DIR = Path(__file__).parent / "data"
LEUKSURV = DATA_DIR / "leuksurv.csv"

LEUK_ROLES = ColumnRoles(
    time="time",
    status="status",
    cluster="district",
    hazard=("age", "sex", "wbc", "tpi"),
    time_scale=("age",),
    truncate={"wbc": 500.0},
    time_divisor=365.25,
)
LEUK_STANDARDIZE = ("age", "wbc", "tpi")

STUDY_TRUTH = ParameterVector([1.0, 0.08, 0.22, 0.10], [0.96], [0.20, 1.50, 3.00], [1.0])


@pytest.fixture(params=available())
def backend(request):
    with use_backend(request.param):
        yield request.param


@pytest.fixture(scope="session")
def small_data():
    """120 subjects in 8 clusters from a MEGH-I PGW truth."""
    cfg = SimConfig(ModelSpec("megh1", "pgw", "normal"), STUDY_TRUTH, n=120, r=8, seed=5)
    return simulate_times(cfg)


@pytest.fixture(scope="session")
def leuk_data():
    return load_dataset(LEUKSURV, LEUK_ROLES, LEUK_STANDARDIZE)


def random_eta(rng, model, p=4, pt=1):
    beta = rng.normal(0, 0.3, p)
    alpha = rng.normal(0, 0.3, pt)
    if model.baseline.value == "pgw":
        theta = [rng.uniform(0.3, 2.0), rng.uniform(0.7, 2.0), rng.uniform(0.5, 4.0)]
    else:
        theta = [rng.uniform(-1, 1), rng.uniform(0.4, 1.5)]
    xi = {"normal": [rng.uniform(0.2, 1.5)], "t": [rng.uniform(0.2, 1.2)],
          "tpn": [rng.uniform(0.3, 1.5), rng.uniform(-0.7, 0.7)]}[model.re_family.value]
    return ParameterVector(beta, alpha, theta, xi if model.has_random_effects else [])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


STUDY_MODELS = (ModelSpec("gh", "pgw"), ModelSpec("megh1", "pgw", "normal"), ModelSpec("megh2", "pgw", "normal"))
STUDY_REPS = 50


@pytest.fixture(scope="session")
def megh1_study():
    """50 replications of the MEGH-I truth, each fitted with GH, MEGH-I and MEGH-II."""
    from megh import FitConfig, run_study

    config = SimConfig(ModelSpec("megh1", "pgw", "normal"), STUDY_TRUTH, seed=2024)
    return run_study(config, STUDY_REPS, STUDY_MODELS, FitConfig(n_starts=1))
