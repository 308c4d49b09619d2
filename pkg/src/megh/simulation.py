"""Simulating clustered survival data and running replication studies.

Event times come from inverting the conditional cumulative hazard: with
``E ~ Exp(1)`` and cluster effects ``(u, ut)``::

    t = H0_inv(E * exp(-(x@beta - xt@alpha + u - ut))) * exp(-(xt@alpha + ut))

Censoring times are Uniform(0, c_max). ``c_max`` is tuned on a pilot
batch drawn for the same covariates and cluster effects, so that the
expected censored fraction of each dataset matches a target.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from .baseline import BaselineFamily
from .data import ClusteredDataset
from .diagnostics import lrt_from_fits
from .errors import ContractError, MEGHError, ValidationError
from .estimation import FitConfig, FitResult, fit
from .hazard import HazardStructure, structure_effects
from .model import ModelSpec, ParameterVector, ParamLayout
from .reffects import REFamily, RandomEffectsDist

__all__ = [
    "CovariateSpec",
    "BimodalEffects",
    "SimConfig",
    "cluster_sizes",
    "calibrate_censoring",
    "simulate_times",
    "simulate_outcomes",
    "simulate_from_fit",
    "pilot_cmax",
    "replication_seed",
    "run_study",
    "StudyReport",
    "load_truth",
]

PILOT_SIZE = 10_000


@dataclass(frozen=True)
class CovariateSpec:
    """Covariate name and its generator: ``normal`` (N(0,1)) or ``bernoulli``."""

    name: str
    kind: str = "normal"
    p: float = 0.5

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "normal":
            return rng.standard_normal(n)
        if self.kind == "bernoulli":
            return (rng.random(n) < self.p).astype(float)
        raise ContractError(f"unknown covariate generator {self.kind!r}")


DEFAULT_COVARIATES = (
    CovariateSpec("age"),
    CovariateSpec("sex", "bernoulli"),
    CovariateSpec("wbc"),
    CovariateSpec("tpi"),
)


@dataclass(frozen=True)
class BimodalEffects:
    """Equal mixture of N(-loc, spread^2) and N(loc, spread^2); mean zero.

    Sampling only: used as a deliberately non-normal truth.
    """

    loc: float = 1.5
    spread: float = 0.3

    def sample(self, n: int, rng=None) -> np.ndarray:
        rng = np.random.default_rng(rng)
        sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        return sign * self.loc + self.spread * rng.standard_normal(n)

    def sd(self) -> float:
        return math.sqrt(self.loc**2 + self.spread**2)


@dataclass(frozen=True)
class SimConfig:
    """A data-generating model and design.

    ``effects`` overrides the random-effects law implied by ``truth`` and
    ``model`` (for instance a :class:`BimodalEffects`).
    """

    model: ModelSpec
    truth: ParameterVector
    n: int = 1043
    r: int = 24
    censoring_target: float = 0.25
    covariates: tuple[CovariateSpec, ...] = DEFAULT_COVARIATES
    hazard_covariates: tuple[str, ...] = ("age", "sex", "wbc", "tpi")
    time_covariates: tuple[str, ...] = ("age",)
    seed: int = 1
    effects: object = None

    def __post_init__(self):
        problems = []
        if not 0.0 <= self.censoring_target < 1.0:
            problems.append(f"censoring target must lie in [0, 1), got {self.censoring_target}")
        if self.r < 1 or self.n < self.r:
            problems.append(f"need 1 <= r <= n, got r={self.r}, n={self.n}")
        names = [c.name for c in self.covariates]
        missing = [c for c in (*self.hazard_covariates, *self.time_covariates) if c not in names]
        if missing:
            problems.append(f"covariates {missing} have no generator")
        if len(self.truth.beta) != len(self.hazard_covariates):
            problems.append("truth beta length does not match hazard covariates")
        if len(self.truth.alpha) != len(self.time_covariates):
            problems.append("truth alpha length does not match time-scale covariates")
        if problems:
            raise ValidationError("; ".join(problems), problems)
        self.model.validate()

    def effects_law(self):
        if self.effects is not None:
            return self.effects
        return self.truth.re_dist(self.model)

    def layout(self) -> ParamLayout:
        return ParamLayout(self.model, self.hazard_covariates, self.time_covariates)


def cluster_sizes(n: int, r: int) -> np.ndarray:
    """Sizes as equal as possible summing to n; larger clusters first."""
    base, extra = divmod(n, r)
    return np.array([base + 1] * extra + [base] * (r - extra), dtype=np.int64)


def replication_seed(master: int, i: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=(i,))


def simulate_outcomes(model: ModelSpec, params: ParameterVector, xh, xt, u_cluster, codes, rng):
    """Uncensored event times for given designs and cluster effects."""
    n = xh.shape[0]
    lh = xh @ params.beta
    lt = xt @ params.alpha
    uh, ut = structure_effects(model.structure, np.asarray(u_cluster)[codes])
    e = rng.standard_exponential(n)
    b = params.baseline_hazard(model)
    with np.errstate(over="ignore", under="ignore"):
        s = e * np.exp(-(lh - lt + uh - ut))
        t = b.cumhaz_inv(s) * np.exp(-(lt + ut))
    # an underflow to 0 would make an invalid record; keep it positive
    return np.maximum(t, np.finfo(float).tiny)


def calibrate_censoring(pilot_times, target: float) -> float:
    """c_max with mean(min(T / c_max, 1)) = target for Uniform(0, c_max)."""
    if target <= 0.0:
        return math.inf
    t = np.asarray(pilot_times, dtype=float)
    t = t[np.isfinite(t)]

    def gap(log_c):
        return float(np.mean(np.minimum(t / math.exp(log_c), 1.0))) - target

    lo, hi = math.log(np.min(t)) - 1.0, math.log(np.max(t)) + 1.0
    while gap(lo) < 0:
        lo -= 5.0
    while gap(hi) > 0:
        hi += 5.0
    return math.exp(optimize.brentq(gap, lo, hi, xtol=1e-12))


def _draw_design(config: SimConfig, n: int, rng):
    cols = {c.name: c.draw(n, rng) for c in config.covariates}
    names = tuple(c.name for c in config.covariates)
    X = np.column_stack([cols[c] for c in names])
    return X, names


def _draw_effects(config: SimConfig, r: int, rng):
    law = config.effects_law()
    if law is None:
        return np.zeros(r)
    return law.sample(r, rng)


def pilot_cmax(model: ModelSpec, params: ParameterVector, xh, xt, u_cluster, codes, target, rng) -> float:
    """Calibrate c_max on a pilot of about 10^4 event times drawn for the
    given design and cluster effects."""
    if target <= 0.0:
        return math.inf
    copies = max(1, math.ceil(PILOT_SIZE / xh.shape[0]))
    pilot = [simulate_outcomes(model, params, xh, xt, u_cluster, codes, rng) for _ in range(copies)]
    return calibrate_censoring(np.concatenate(pilot), target)


def _censor(t, c_max, rng):
    if not math.isfinite(c_max):
        return t, np.ones(t.size)
    c = c_max * rng.random(t.size)
    return np.minimum(t, c), (t <= c).astype(float)


def simulate_times(config: SimConfig, seed=None) -> ClusteredDataset:
    """One dataset from ``config``; ``seed`` defaults to ``config.seed``."""
    if config.model.structure is HazardStructure.GENERAL:
        raise ContractError("simulation supports the gh, megh1 and megh2 structures")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    sizes = cluster_sizes(config.n, config.r)
    codes = np.repeat(np.arange(config.r), sizes)
    X, names = _draw_design(config, config.n, rng)
    hcols = [names.index(c) for c in config.hazard_covariates]
    tcols = [names.index(c) for c in config.time_covariates]
    xh, xt = X[:, hcols], X[:, tcols]
    u = _draw_effects(config, config.r, rng)
    t = simulate_outcomes(config.model, config.truth, xh, xt, u, codes, rng)
    c_max = pilot_cmax(config.model, config.truth, xh, xt, u, codes, config.censoring_target, rng)
    times, status = _censor(t, c_max, rng)
    return ClusteredDataset(
        times, status, codes + 1, X, names, hcols, tcols,
        metadata={"simulated": True, "c_max": c_max, "effects": u.tolist()},
    )


def simulate_from_fit(result: FitResult, data: ClusteredDataset, rng) -> ClusteredDataset:
    """A parametric-bootstrap replicate of ``data`` under the fitted model.

    The design and cluster membership are kept; effects, event times and
    censoring are redrawn, with censoring calibrated to the observed
    censored fraction.
    """
    rng = np.random.default_rng(rng)
    law = result.params.re_dist(result.model)
    u = law.sample(data.r, rng) if law is not None else np.zeros(data.r)
    args = (result.model, result.params, data.X_hazard, data.X_time, u, data.cluster_codes)
    t = simulate_outcomes(*args, rng)
    c_max = pilot_cmax(*args, data.censoring_rate, rng)
    times, status = _censor(t, c_max, rng)
    return data.with_outcomes(times, status)


# -- replication studies ------------------------------------------------------

@dataclass
class StudyReport:
    """Per-replication records and their aggregation."""

    truth_names: tuple[str, ...]
    truth_values: np.ndarray
    models: tuple[str, ...]
    records: list
    failures: list = field(default_factory=list)

    def estimates(self, model: str) -> np.ndarray:
        """(reps, parameters) estimates aligned with ``truth_names``.

        Parameters a fitted model does not have (the random-effects scale
        of a GH fit) count as 0, the value that model implicitly assumes.
        """
        rows = [rec["models"][model]["aligned"] for rec in self.records if model in rec["models"]]
        return np.array(rows, dtype=float).reshape(-1, len(self.truth_names))

    def coverage(self, model: str) -> np.ndarray:
        rows = [rec["models"][model]["covered"] for rec in self.records if model in rec["models"]]
        return np.array(rows, dtype=float).reshape(-1, len(self.truth_names))

    def aic(self, model: str) -> np.ndarray:
        return np.array([rec["models"][model]["aic"] for rec in self.records if model in rec["models"]])

    def rejections(self, model: str) -> np.ndarray:
        vals = [rec["models"][model].get("lrt_reject") for rec in self.records if model in rec["models"]]
        return np.array([v for v in vals if v is not None], dtype=float)

    def summary(self) -> dict:
        out = {"truth": dict(zip(self.truth_names, self.truth_values.tolist())),
               "replications": len(self.records), "failures": self.failures, "models": {}}
        for m in self.models:
            est = self.estimates(m)
            if est.shape[0] == 0:
                out["models"][m] = {"fits": 0}
                continue
            k = est.shape[0]
            mean = est.mean(axis=0)
            mcse = est.std(axis=0, ddof=1) / math.sqrt(k) if k > 1 else np.full(est.shape[1], np.nan)
            with warnings.catch_warnings():
                # parameters a model lacks have no interval at all
                warnings.simplefilter("ignore", RuntimeWarning)
                cov = np.nanmean(self.coverage(m), axis=0)
            rej = self.rejections(m)
            out["models"][m] = {
                "fits": k,
                "mean_estimate": _clean(mean),
                "mean_bias": _clean(mean - self.truth_values),
                "abs_mean_bias": _clean(np.abs(mean - self.truth_values)),
                "mc_se": _clean(mcse),
                "ci_coverage": _clean(cov),
                "mean_aic": float(self.aic(m).mean()),
                "lrt_power": float(rej.mean()) if rej.size else None,
                "converged_rate": float(np.mean([rec["models"][m]["converged"] for rec in self.records
                                                 if m in rec["models"]])),
            }
        return out

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps({"summary": self.summary(), "records": self.records}, indent=2, sort_keys=True))
        return path

    def to_csv(self, path) -> Path:
        """Long table: model, parameter, truth, mean, bias, mc_se, coverage."""
        path = Path(path)
        summ = self.summary()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "parameter", "truth", "mean_estimate", "mean_bias", "mc_se",
                        "ci_coverage", "mean_aic", "lrt_power"])
            for m, s in summ["models"].items():
                if not s.get("fits"):
                    continue
                for j, name in enumerate(self.truth_names):
                    w.writerow([m, name, repr(float(self.truth_values[j])), s["mean_estimate"][j],
                                s["mean_bias"][j], s["mc_se"][j], s["ci_coverage"][j],
                                s["mean_aic"], s["lrt_power"]])
        return path


def _clean(arr):
    if arr is None:
        return None
    return [float(v) if math.isfinite(v) else None for v in np.asarray(arr, dtype=float)]


def _fit_label(model: ModelSpec) -> str:
    return model.label()


def _one_replication(args):
    config, i, fit_models, fit_config, lrt_level = args
    data = simulate_times(config, seed=replication_seed(config.seed, i))
    truth_layout = config.layout()
    record = {"replication": i, "censoring": data.censoring_rate, "models": {}}
    fits = {}
    errors = []
    for model in fit_models:
        try:
            res = fit(model, data, config=fit_config)
        except MEGHError as exc:
            errors.append({"replication": i, "model": _fit_label(model), "error": str(exc)})
            continue
        fits[_fit_label(model)] = res
        record["models"][_fit_label(model)] = _fit_record(res, truth_layout, config.truth)
    reduced = [f for f in fits.values() if not f.model.has_random_effects]
    for label, res in fits.items():
        if res.model.has_random_effects and reduced:
            lrt = lrt_from_fits(res, reduced[0], require_converged=False)
            record["models"][label]["lrt_statistic"] = lrt.statistic
            record["models"][label]["lrt_p"] = lrt.p_value
            record["models"][label]["lrt_reject"] = bool(lrt.p_value < lrt_level)
    return record, errors


def _fit_record(res: FitResult, truth_layout: ParamLayout, truth: ParameterVector) -> dict:
    names = truth_layout.names
    values = truth.flat()
    est = dict(zip(res.layout.names, res.params.flat()))
    se = dict(zip(res.names, res.standard_errors)) if res.standard_errors is not None else {}
    aligned, covered = [], []
    for name, true in zip(names, values):
        value = est.get(name, 0.0)
        aligned.append(float(value))
        s = se.get(name, math.nan)
        covered.append(float(abs(value - true) <= 1.959963984540054 * s) if math.isfinite(s) else math.nan)
    return {
        "aligned": aligned,
        "covered": covered,
        "log_lik": res.log_lik,
        "aic": res.aic,
        "converged": res.converged,
        "hessian_ok": res.hessian_ok,
        "estimates": {k: float(v) for k, v in est.items()},
    }


def run_study(config: SimConfig, n_reps: int, fit_models, fit_config: FitConfig | None = None,
              jobs: int = 1, lrt_level: float = 0.05, progress=None) -> StudyReport:
    """Simulate ``n_reps`` datasets and fit every model to each.

    Replication ``i`` always uses the seed ``SeedSequence(config.seed,
    spawn_key=(i,))``, so the report does not depend on ``jobs``.
    """
    if n_reps < 1:
        raise ValidationError("need at least one replication")
    fit_config = fit_config or FitConfig()
    fit_models = tuple(fit_models)
    tasks = [(config, i, fit_models, fit_config, lrt_level) for i in range(n_reps)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one_replication, tasks))
    else:
        results = []
        for task in tasks:
            results.append(_one_replication(task))
            if progress is not None:
                progress(task[1], results[-1][0])
    records = [rec for rec, _ in results]
    failures = [e for _, errs in results for e in errs]
    layout = config.layout()
    return StudyReport(layout.names, config.truth.flat(), tuple(_fit_label(m) for m in fit_models),
                       records, failures)


def load_truth(path) -> SimConfig:
    """Read a truth file (JSON) into a :class:`SimConfig`.

    Expected keys: ``model`` (structure, baseline, random_effects, t_df),
    ``params`` (beta, alpha, theta, xi), optional ``n``, ``clusters``,
    ``censoring``, ``hazard_covariates``, ``time_covariates``,
    ``covariates`` (name -> normal | bernoulli) and ``effects``
    (``{"bimodal": {"loc": .., "spread": ..}}``).
    """
    spec = json.loads(Path(path).read_text())
    m = spec["model"]
    model = ModelSpec(
        HazardStructure(m["structure"]),
        BaselineFamily(m["baseline"]),
        REFamily(m.get("random_effects") or "normal"),
        m.get("t_df", 5.0),
    )
    params = ParameterVector.from_dict(spec["params"])
    covs = spec.get("covariates", {c.name: c.kind for c in DEFAULT_COVARIATES})
    covariates = tuple(CovariateSpec(k, v) for k, v in covs.items())
    effects = None
    if "effects" in spec and spec["effects"]:
        bim = spec["effects"].get("bimodal")
        if bim is None:
            raise ValidationError(f"unknown effects law {spec['effects']}")
        effects = BimodalEffects(**bim)
    if model.has_random_effects and params.xi.size == 0:
        raise ValidationError("truth with random effects needs params.xi")
    if params.xi.size:
        RandomEffectsDist(model.re_family, tuple(params.xi), model.t_df)
    defaults = SimConfig.__dataclass_fields__
    return SimConfig(
        model,
        params,
        n=int(spec.get("n", defaults["n"].default)),
        r=int(spec.get("clusters", defaults["r"].default)),
        censoring_target=float(spec.get("censoring", defaults["censoring_target"].default)),
        covariates=covariates,
        hazard_covariates=tuple(spec.get("hazard_covariates", defaults["hazard_covariates"].default)),
        time_covariates=tuple(spec.get("time_covariates", defaults["time_covariates"].default)),
        seed=int(spec.get("seed", defaults["seed"].default)),
        effects=effects,
    )
