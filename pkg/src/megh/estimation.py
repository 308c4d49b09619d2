"""Marginal maximum likelihood fitting.

Each start runs a Nelder-Mead simplex on the unconstrained scale, then
BFGS polishes with central-difference gradients until two consecutive
polishes agree. Standard errors come from a central-difference Hessian of
the negative log marginal likelihood, carried to the natural scale by the
delta method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from .baseline import BaselineFamily
from .data import ClusteredDataset
from .errors import ValidationError
from .likelihood import MarginalLikelihood
from .model import ModelSpec, ParameterVector, ParamLayout
from .reffects import REFamily

__all__ = [
    "FitConfig",
    "FitResult",
    "fit",
    "covariance_and_se",
    "aic",
    "initial_theta",
    "numerical_hessian",
]

_PENALTY = 1e100
_Z95 = 1.959963984540054


@dataclass(frozen=True)
class FitConfig:
    n_starts: int = 3
    seed: int = 0
    jitter: float = 0.3
    simplex: bool = True
    simplex_step: float = 0.25
    max_fev_per_dim: int = 300
    polish_rounds: int = 5
    gtol: float = 1e-5
    ftol: float = 1e-8
    xtol: float = 1e-6
    compute_se: bool = True
    fixed: dict = field(default_factory=dict)
    epsabs: float = 1e-9
    epsrel: float = 1e-7
    init_sigma: float = 0.5


@dataclass
class FitResult:
    model: ModelSpec
    layout: ParamLayout
    params: ParameterVector
    phi: np.ndarray
    log_lik: float
    converged: bool
    iterations: int
    n_evals: int
    covariance: np.ndarray | None = None
    cov_unconstrained: np.ndarray | None = None
    standard_errors: np.ndarray | None = None
    hessian_ok: bool = False
    message: str = ""
    start_log_liks: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def aic(self) -> float:
        return -2.0 * self.log_lik + 2.0 * self.dim

    @property
    def eta_hat(self) -> ParameterVector:
        return self.params

    @property
    def names(self) -> tuple[str, ...]:
        return self.layout.free_names

    @property
    def estimates(self) -> np.ndarray:
        return self.params.flat()[self.layout.free]

    def confidence_intervals(self, z: float = _Z95) -> np.ndarray:
        """Wald intervals estimate +- z * SE, shape (dim, 2)."""
        se = self.standard_errors if self.standard_errors is not None else np.full(self.dim, np.nan)
        est = self.estimates
        return np.column_stack([est - z * se, est + z * se])

    def value(self, name: str) -> float:
        return float(self.params.flat()[self.layout.names.index(name)])

    def to_dict(self, data: ClusteredDataset | None = None) -> dict:
        se = self.standard_errors if self.standard_errors is not None else np.full(self.dim, np.nan)
        ci = self.confidence_intervals()
        rows = []
        for k, name in enumerate(self.names):
            row = {
                "name": name,
                "estimate": _num(self.estimates[k]),
                "se": _num(se[k]),
                "ci_lower": _num(ci[k, 0]),
                "ci_upper": _num(ci[k, 1]),
            }
            cov = name.split("_", 1)[1] if name.startswith(("beta_", "alpha_")) else None
            if data is not None and cov in data.transforms:
                row["estimate_original_scale"] = _num(data.original_scale(cov, self.estimates[k]))
            rows.append(row)
        return {
            "model": {
                "structure": self.model.structure.value,
                "baseline": self.model.baseline.value,
                "random_effects": self.model.re_family.value if self.model.has_random_effects else None,
                "t_df": self.model.t_df if self.model.re_family is REFamily.STUDENT_T else None,
            },
            "parameters": rows,
            "fixed": dict(self.layout.fixed),
            "log_likelihood": self.log_lik,
            "aic": self.aic,
            "n_parameters": self.dim,
            "converged": self.converged,
            "hessian_ok": self.hessian_ok,
            "iterations": self.iterations,
            "n_evals": self.n_evals,
            "message": self.message,
            "start_log_likelihoods": list(self.start_log_liks),
            "params": self.params.to_dict(),
        }


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def aic(result: FitResult) -> float:
    """-2 log m(eta_hat) + 2 * number of estimated parameters."""
    return result.aic


def initial_theta(times, family: BaselineFamily) -> np.ndarray:
    """Crude baseline start ignoring censoring and covariates."""
    times = np.asarray(times, dtype=float)
    med = float(np.median(times))
    if BaselineFamily(family) is BaselineFamily.PGW:
        # nu = 1, delta = 2, eta chosen so that H0(median) = log 2
        eta = med / ((1.0 + math.log(2.0)) ** 2 - 1.0)
        return np.array([eta, 1.0, 2.0])
    logt = np.log(times)
    sd = float(logt.std(ddof=1)) if times.size > 1 else 1.0
    return np.array([math.log(med), max(sd, 1e-3) * math.sqrt(3.0) / math.pi])


def numerical_hessian(f, x, steps) -> np.ndarray:
    """Central-difference Hessian; off-diagonals from the four-point rule."""
    x = np.asarray(x, dtype=float)
    d = x.size
    f0 = f(x)
    H = np.empty((d, d))
    E = np.diag(steps)
    fp = np.array([f(x + E[j]) for j in range(d)])
    fm = np.array([f(x - E[j]) for j in range(d)])
    for j in range(d):
        H[j, j] = (fp[j] - 2.0 * f0 + fm[j]) / steps[j] ** 2
        for k in range(j + 1, d):
            fpp = f(x + E[j] + E[k])
            fpm = f(x + E[j] - E[k])
            fmp = f(x - E[j] + E[k])
            fmm = f(x - E[j] - E[k])
            H[j, k] = H[k, j] = (fpp - fpm - fmp + fmm) / (4.0 * steps[j] * steps[k])
    return H


def _central_gradient(f, x, h=1e-5):
    g = np.empty(x.size)
    for j in range(x.size):
        step = h * max(1.0, abs(x[j]))
        e = np.zeros(x.size)
        e[j] = step
        g[j] = (f(x + e) - f(x - e)) / (2.0 * step)
    return g


class _Objective:
    """Negative log marginal likelihood on the free unconstrained scale."""

    def __init__(self, lm: MarginalLikelihood, layout: ParamLayout):
        self.lm = lm
        self.layout = layout
        self.n_evals = 0

    def __call__(self, phi) -> float:
        self.n_evals += 1
        phi = np.asarray(phi, dtype=float)
        if not np.all(np.isfinite(phi)):
            return _PENALTY
        try:
            eta = self.layout.unpack(phi)
        except ValueError:
            return _PENALTY
        if not np.all(np.isfinite(eta.flat())):
            return _PENALTY
        value = self.lm.safe(eta)
        return -value if math.isfinite(value) else _PENALTY

    def gradient(self, phi):
        return _central_gradient(self, np.asarray(phi, dtype=float))


def covariance_and_se(result: FitResult, data: ClusteredDataset, config: FitConfig | None = None):
    """Fill in the covariance and standard errors of ``result`` in place.

    The Hessian step for coordinate j is ``max(1e-4, 1e-4 * |phi_j|)``.
    A Hessian that is not positive definite leaves NaN standard errors and
    ``hessian_ok = False``.
    """
    config = config or FitConfig()
    lm = MarginalLikelihood(result.model, data, epsabs=config.epsabs, epsrel=config.epsrel)
    obj = _Objective(lm, result.layout)
    phi = result.phi
    steps = np.maximum(1e-4, 1e-4 * np.abs(phi))
    H = numerical_hessian(obj, phi, steps)
    d = phi.size
    nan = np.full((d, d), np.nan)
    result.hessian_ok = False
    result.cov_unconstrained = nan
    result.covariance = nan
    result.standard_errors = np.full(d, np.nan)
    if d == 0 or not np.all(np.isfinite(H)) or np.any(np.abs(H) >= _PENALTY / 10):
        return result.covariance, result.standard_errors
    try:
        chol = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        return result.covariance, result.standard_errors
    inv_chol = np.linalg.solve(chol, np.eye(d))
    cov_phi = inv_chol.T @ inv_chol
    J = result.layout.jacobian_diag(phi)
    cov = cov_phi * np.outer(J, J)
    cov = 0.5 * (cov + cov.T)
    result.cov_unconstrained = cov_phi
    result.covariance = cov
    result.standard_errors = np.sqrt(np.diag(cov))
    result.hessian_ok = True
    return result.covariance, result.standard_errors


def _polish(obj: _Objective, phi, f, config: FitConfig):
    """Repeat BFGS until a round moves f by < ftol and phi by < xtol."""
    iterations = 0
    converged = False
    message = ""
    for _ in range(config.polish_rounds):
        res = optimize.minimize(
            obj, phi, jac=obj.gradient, method="BFGS", options={"gtol": config.gtol, "maxiter": 500}
        )
        iterations += int(res.nit)
        message = str(res.message)
        new_phi, new_f = (res.x, float(res.fun)) if res.fun <= f else (phi, f)
        small_f = f - new_f < config.ftol
        small_x = float(np.max(np.abs(new_phi - phi), initial=0.0)) < config.xtol
        phi, f = new_phi, new_f
        if small_f and small_x:
            converged = True
            break
    return phi, f, iterations, converged, message


def _run_start(obj: _Objective, phi0, config: FitConfig):
    f0 = obj(phi0)
    phi, f, iterations = np.asarray(phi0, dtype=float), f0, 0
    d = phi.size
    if d == 0:
        return phi, f, 0, True, "no free parameters"
    if config.simplex:
        simplex = np.vstack([phi, phi + config.simplex_step * np.eye(d)])
        res = optimize.minimize(
            obj,
            phi,
            method="Nelder-Mead",
            options={
                "initial_simplex": simplex,
                "adaptive": True,
                "xatol": 1e-6,
                "fatol": 1e-9,
                "maxfev": config.max_fev_per_dim * d,
            },
        )
        iterations += int(res.nit)
        if res.fun <= f:
            phi, f = res.x, float(res.fun)
    phi, f, nit, converged, message = _polish(obj, phi, f, config)
    converged = converged and f < _PENALTY / 10
    return phi, f, iterations + nit, converged, message


def _default_init(model: ModelSpec, data: ClusteredDataset, config: FitConfig) -> ParameterVector:
    theta = initial_theta(data.times, model.baseline)
    gh_model = model.reduced()
    gh_start = ParameterVector(
        np.zeros(len(data.hazard_columns)), np.zeros(len(data.time_columns)), theta
    )
    if not model.has_random_effects:
        return gh_start
    gh_layout = ParamLayout(gh_model, data.hazard_names, data.time_names,
                            {k: v for k, v in config.fixed.items() if k in _gh_names(gh_model, data)})
    gh_fit = _fit_with_layout(
        gh_model, data, gh_layout, gh_start, replace(config, n_starts=1, compute_se=False)
    )
    xi = [config.init_sigma]
    if model.re_family is REFamily.TWO_PIECE_NORMAL:
        xi.append(0.0)
    p = gh_fit.params
    return ParameterVector(p.beta, p.alpha, p.theta, xi)


def _gh_names(gh_model, data):
    return ParamLayout(gh_model, data.hazard_names, data.time_names).names


def _fit_with_layout(model, data, layout, init: ParameterVector, config: FitConfig) -> FitResult:
    lm = MarginalLikelihood(model, data, epsabs=config.epsabs, epsrel=config.epsrel)
    obj = _Objective(lm, layout)
    for name, value in layout.fixed.items():
        # fixed values override whatever the start carries
        flat = init.flat()
        flat[layout.names.index(name)] = value
        init = layout.split(flat)
    phi0 = layout.pack(init)
    if not np.all(np.isfinite(phi0)):
        raise ValidationError(f"initial values map outside the parameter space: {init.to_dict()}")
    rng = np.random.default_rng(config.seed)
    best = None
    start_lls = []
    total_it = 0
    for s in range(max(1, config.n_starts)):
        start = phi0 if s == 0 else phi0 + config.jitter * rng.standard_normal(phi0.size)
        phi, f, nit, converged, message = _run_start(obj, start, config)
        total_it += nit
        start_lls.append(-f)
        # strict improvement beyond 1e-8 needed to displace an earlier start
        if best is None or f < best[1] - 1e-8:
            best = (phi, f, converged, message)
    phi, f, converged, message = best
    result = FitResult(
        model=model,
        layout=layout,
        params=layout.unpack(phi),
        phi=np.asarray(phi, dtype=float),
        log_lik=-f,
        converged=bool(converged),
        iterations=total_it,
        n_evals=obj.n_evals,
        message=message,
        start_log_liks=start_lls,
    )
    if config.compute_se:
        covariance_and_se(result, data, config)
    return result


def fit(model: ModelSpec, data: ClusteredDataset, init: ParameterVector | None = None,
        config: FitConfig | None = None) -> FitResult:
    """Maximise the marginal likelihood of ``model`` on ``data``.

    Without ``init`` the regression and baseline parameters start from a
    fit of the model without random effects, and the random-effects scale
    from ``config.init_sigma``. Non-convergence is reported on the result,
    never raised.
    """
    config = config or FitConfig()
    model.validate()
    layout = ParamLayout(model, data.hazard_names, data.time_names, config.fixed)
    layout.check_identifiable()
    if init is None:
        init = _default_init(model, data, config)
    elif init.xi.size == 0 and model.has_random_effects:
        xi = [config.init_sigma] + ([0.0] if model.re_family is REFamily.TWO_PIECE_NORMAL else [])
        init = ParameterVector(init.beta, init.alpha, init.theta, xi)
    elif init.xi.size and not model.has_random_effects:
        init = ParameterVector(init.beta, init.alpha, init.theta)
    return _fit_with_layout(model, data, layout, init, config)
