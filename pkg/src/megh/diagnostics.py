"""Random-effects diagnostics.

The gradient function at a point ``u`` averages, over clusters, the
likelihood of the cluster with its effect pinned at ``u`` relative to its
marginal likelihood. Values above 1 suggest a point mass at ``u`` would
raise the likelihood, i.e. the fitted effects law misses something there.

Tests for a zero random-effects variance use chi-square mixtures because
the null sits on the boundary of the parameter space.
"""

from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate

from .data import ClusteredDataset
from .errors import ContractError, MEGHError, NumericError
from .estimation import FitConfig, FitResult, fit
from .likelihood import MarginalLikelihood
from .model import ModelSpec

__all__ = [
    "LRTCase",
    "LRTResult",
    "GradientDiagnostic",
    "chi2_1_sf",
    "chi2_2_sf",
    "boundary_pvalue",
    "lrt_from_fits",
    "lrt_random_effects",
    "default_grid",
    "gradient_function",
    "delta_integral",
    "gradient_bands",
    "diagnose",
    "write_gradient_csv",
]


# Twice the optimiser's log-likelihood tolerance: smaller statistics are noise.
STATISTIC_TOL = 2e-8


class LRTCase(str, enum.Enum):
    """Null mixtures: one variance on the boundary, or two."""

    CASE5 = "case5_one_variance"
    CASE7 = "case7_two_variances"


def chi2_1_sf(x: float) -> float:
    """P(chi2_1 >= x) = erfc(sqrt(x / 2))."""
    return math.erfc(math.sqrt(max(x, 0.0) / 2.0))


def chi2_2_sf(x: float) -> float:
    return math.exp(-max(x, 0.0) / 2.0)


def boundary_pvalue(statistic: float, case: LRTCase = LRTCase.CASE5) -> float:
    """p-value of a likelihood-ratio statistic under the boundary mixture.

    CASE5: 1/2 chi2_0 + 1/2 chi2_1.  CASE7: 1/4 chi2_0 + 1/2 chi2_1 + 1/4 chi2_2.
    A zero statistic gives p = 1 in both cases.
    """
    case = LRTCase(case)
    if not statistic >= 0 or math.isnan(statistic):
        raise ValueError(f"likelihood-ratio statistic must be >= 0, got {statistic}")
    if statistic == 0.0:
        return 1.0
    if case is LRTCase.CASE5:
        return 0.5 * chi2_1_sf(statistic)
    return 0.5 * chi2_1_sf(statistic) + 0.25 * chi2_2_sf(statistic)


@dataclass(frozen=True)
class LRTResult:
    statistic: float
    case: LRTCase
    p_value: float
    log_lik_full: float
    log_lik_reduced: float
    converged_full: bool = True
    converged_reduced: bool = True

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "case": self.case.value,
            "p_value": self.p_value,
            "log_lik_full": self.log_lik_full,
            "log_lik_reduced": self.log_lik_reduced,
            "converged_full": self.converged_full,
            "converged_reduced": self.converged_reduced,
        }


def lrt_from_fits(full: FitResult, reduced: FitResult, case: LRTCase | None = None,
                  require_converged: bool = True) -> LRTResult:
    """Boundary LRT comparing a random-effects fit with its GH reduction."""
    if not full.model.has_random_effects or reduced.model.has_random_effects:
        raise ContractError("need a random-effects fit and a fit without random effects")
    if require_converged and not (full.converged and reduced.converged):
        raise NumericError(
            f"refusing the test: full fit converged={full.converged} ({full.message}), "
            f"reduced fit converged={reduced.converged} ({reduced.message})"
        )
    case = LRTCase.CASE5 if case is None else LRTCase(case)
    stat = 2.0 * (full.log_lik - reduced.log_lik)
    if stat < STATISTIC_TOL:
        stat = 0.0
    return LRTResult(stat, case, boundary_pvalue(stat, case), full.log_lik, reduced.log_lik,
                     full.converged, reduced.converged)


def lrt_random_effects(model_with: ModelSpec, data: ClusteredDataset, config: FitConfig | None = None,
                       case: LRTCase | None = None):
    """Fit the model and its GH reduction, then test for zero variance.

    Returns ``(LRTResult, full_fit, reduced_fit)``.
    """
    if not model_with.has_random_effects:
        raise ContractError("the model under test must carry random effects")
    config = config or FitConfig()
    reduced = fit(model_with.reduced(), data, config=config)
    full = fit(model_with, data, config=config)
    return lrt_from_fits(full, reduced, case), full, reduced


# -- gradient function --------------------------------------------------------

@dataclass(frozen=True)
class GradientDiagnostic:
    grid: np.ndarray
    delta: np.ndarray
    band_lower: np.ndarray | None = None
    band_upper: np.ndarray | None = None
    integral: float | None = None
    n_boot: int = 0
    n_failed: int = 0

    @property
    def exceeds(self) -> bool:
        """Whether the gradient rises above the upper band anywhere."""
        if self.band_upper is None:
            return bool(np.any(self.delta > 1.0))
        return bool(np.any(self.delta > self.band_upper))

    @property
    def within(self) -> bool:
        """Whether the gradient stays inside the band on the whole grid."""
        if self.band_upper is None:
            return not self.exceeds
        return bool(np.all((self.delta >= self.band_lower) & (self.delta <= self.band_upper)))

    @property
    def failure_warning(self) -> bool:
        return self.n_boot > 0 and self.n_failed > 0.2 * self.n_boot


def _require_effects(result: FitResult):
    if not result.model.has_random_effects:
        raise ContractError("the gradient function needs a fit with random effects")


def default_grid(result: FitResult, n: int = 101, width: float = 4.0) -> np.ndarray:
    _require_effects(result)
    sd = result.params.re_dist(result.model).sd()
    return np.linspace(-width * sd, width * sd, n)


def gradient_function(result: FitResult, data: ClusteredDataset, grid=None) -> GradientDiagnostic:
    """Delta(u) = mean_i exp(l_i(u) - log m_i) on ``grid`` (default 101 points
    over +-4 sd of the fitted effects law)."""
    _require_effects(result)
    grid = default_grid(result) if grid is None else np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ContractError("grid must be a nonempty strictly increasing vector")
    lm = MarginalLikelihood(result.model, data)
    log_m = lm.cluster_terms(result.params).log_m
    ll = lm.loglik_grid(result.params, grid)
    delta = np.exp(ll - log_m[:, None]).mean(axis=0)
    return GradientDiagnostic(grid, delta)


def delta_integral(result: FitResult, data: ClusteredDataset) -> float:
    """Integral of Delta against the fitted effects density; 1 in theory.

    Computed cluster by cluster with QUADPACK on the real line, which is
    independent of the kernels' own quadrature; only the kernels' mode and
    scale are reused, to centre and stretch the variable of integration.
    """
    _require_effects(result)
    lm = MarginalLikelihood(result.model, data)
    terms = lm.cluster_terms(result.params)
    dist = result.params.re_dist(result.model)
    total = []
    for i in range(data.r):
        # standardise around the integrand's peak so a narrow fitted law is not missed
        c, s = float(terms.mode[i]), float(terms.scale[i])

        def integrand(z, i=i, c=c, s=s):
            u = c + s * z
            ll = lm.loglik_grid(result.params, np.array([u]))[i, 0]
            return s * math.exp(ll - terms.log_m[i] + float(dist.log_density(u)))

        left = integrate.quad(integrand, -np.inf, 0.0, epsabs=1e-13, epsrel=1e-11, limit=400)[0]
        right = integrate.quad(integrand, 0.0, np.inf, epsabs=1e-13, epsrel=1e-11, limit=400)[0]
        total.append(left + right)
    return math.fsum(total) / data.r


def gradient_bands(result: FitResult, data: ClusteredDataset, grid=None, n_boot: int = 200,
                   seed: int = 0, config: FitConfig | None = None):
    """Pointwise 2.5 / 97.5 percentile bands from a parametric bootstrap.

    Each replicate is simulated from the fitted model on the observed
    design, refitted from the original estimate, and its gradient function
    evaluated on ``grid``. Returns ``(lower, upper, n_failed)``.
    """
    from .simulation import simulate_from_fit

    _require_effects(result)
    if n_boot < 1:
        raise ContractError("n_boot must be at least 1")
    grid = default_grid(result) if grid is None else np.asarray(grid, dtype=float)
    config = config or FitConfig(n_starts=1, simplex=False, compute_se=False, fixed=dict(result.layout.fixed))
    curves = []
    failed = 0
    for b in range(n_boot):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))
        boot = simulate_from_fit(result, data, rng)
        try:
            refit = fit(result.model, boot, init=result.params, config=config)
            delta = gradient_function(refit, boot, grid).delta
        except MEGHError:
            failed += 1
            continue
        if not np.all(np.isfinite(delta)):
            failed += 1
            continue
        curves.append(delta)
    if not curves:
        raise NumericError(f"all {n_boot} bootstrap refits failed")
    if failed > 0.2 * n_boot:
        warnings.warn(f"{failed} of {n_boot} bootstrap refits failed", RuntimeWarning, stacklevel=2)
    curves = np.array(curves)
    lower, upper = np.percentile(curves, [2.5, 97.5], axis=0)
    return lower, upper, failed


def diagnose(result: FitResult, data: ClusteredDataset, grid=None, n_boot: int = 200, seed: int = 0,
             config: FitConfig | None = None, check_integral: bool = True) -> GradientDiagnostic:
    """Gradient function with bootstrap bands and the integral check."""
    base = gradient_function(result, data, grid)
    lower = upper = None
    failed = 0
    if n_boot:
        lower, upper, failed = gradient_bands(result, data, base.grid, n_boot, seed, config)
    integral = delta_integral(result, data) if check_integral else None
    return GradientDiagnostic(base.grid, base.delta, lower, upper, integral, n_boot, failed)


def write_gradient_csv(diag: GradientDiagnostic, path) -> Path:
    """Columns u, delta, lo, hi (bands empty when not computed)."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["u", "delta", "lo", "hi"])
        for k, u in enumerate(diag.grid):
            lo = repr(float(diag.band_lower[k])) if diag.band_lower is not None else ""
            hi = repr(float(diag.band_upper[k])) if diag.band_upper is not None else ""
            w.writerow([repr(float(u)), repr(float(diag.delta[k])), lo, hi])
    return path
