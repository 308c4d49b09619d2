"""Cluster log-likelihoods and the marginal likelihood.

For each cluster the random effect is integrated out numerically. The
integrand is first divided by ``K_i = max_u exp(l_i(u))`` so that it lies
in (0, 1], which keeps large clusters from underflowing; the log of the
integral is added back to ``log K_i`` afterwards.

The heavy lifting happens in the kernel module picked by
:mod:`megh._backend`; :func:`cond_loglik_cluster` is a plain numpy
evaluation kept separate from the kernels so the two can check each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .data import ClusteredDataset
from .errors import ContractError, NumericError, QuadratureError
from .hazard import HazardStructure, cond_cum_hazard, cond_log_hazard, structure_effects
from .model import ModelSpec, ParameterVector

__all__ = [
    "ClusterTerms",
    "MarginalLikelihood",
    "cond_loglik_cluster",
    "marginal_lik_cluster",
    "log_marginal",
]

_RETRY_LIMIT = 2000


def cond_loglik_cluster(i: int, u, eta: ParameterVector, data: ClusteredDataset, model: ModelSpec):
    """l_i(u): conditional log-likelihood of cluster ``i`` given its effect.

    ``u`` may be a scalar or an array of effect values.
    """
    rows = data.cluster_rows(i)
    t = data.times[rows]
    d = data.status[rows]
    x = data.X_hazard[rows]
    xt = data.X_time[rows]
    coef = eta.coefficients()
    b = eta.baseline_hazard(model)
    u_arr = np.atleast_1d(np.asarray(u, dtype=float))
    out = np.empty(u_arr.shape)
    for k, uk in enumerate(u_arr.flat):
        uh, ut = structure_effects(model.structure, uk)
        out.flat[k] = np.sum(d * cond_log_hazard(t, x, xt, uh, ut, coef, b)) - np.sum(
            cond_cum_hazard(t, x, xt, uh, ut, coef, b)
        )
    return out if np.ndim(u) else float(out[0])


@dataclass(frozen=True)
class ClusterTerms:
    """Per-cluster pieces of one marginal likelihood evaluation."""

    log_m: np.ndarray
    log_k: np.ndarray
    mode: np.ndarray
    scale: np.ndarray
    status: np.ndarray
    nevals: np.ndarray

    @property
    def total(self) -> float:
        # fsum gives an order-independent, correctly rounded sum
        return math.fsum(self.log_m)


class MarginalLikelihood:
    """Log marginal likelihood of a model on a fixed dataset.

    The sorted arrays and design blocks are prepared once; calling the
    instance with a :class:`ParameterVector` returns ``log m(eta)``.
    """

    def __init__(self, model: ModelSpec, data: ClusteredDataset, epsabs=1e-9, epsrel=1e-7, limit=200):
        model.validate()
        self.model = model
        self.data = data
        self.epsabs = float(epsabs)
        self.epsrel = float(epsrel)
        self.limit = int(limit)
        self._t, self._d, self._xh, self._xt = data.sorted_arrays
        self._offsets = np.ascontiguousarray(data.offsets, dtype=np.intp)

    def _kernel_args(self, eta: ParameterVector):
        if eta.beta.size != self._xh.shape[1] or eta.alpha.size != self._xt.shape[1]:
            raise ContractError(
                f"parameter sizes (beta {eta.beta.size}, alpha {eta.alpha.size}) do not match "
                f"design ({self._xh.shape[1]}, {self._xt.shape[1]})"
            )
        lh = np.ascontiguousarray(self._xh @ eta.beta)
        lt = np.ascontiguousarray(self._xt @ eta.alpha)
        theta = np.ascontiguousarray(eta.theta, dtype=float)
        return lh, lt, theta

    def cluster_terms(self, eta: ParameterVector, scaled: bool = True) -> ClusterTerms:
        lh, lt, theta = self._kernel_args(eta)
        dist = eta.re_dist(self.model)
        if dist is None:
            re_code, re_params = 0, np.ones(3)
        else:
            re_code, re_params = dist.kernel_params()
        core = _backend.kernels()
        args = (
            self._t, self._d, lh, lt, self._offsets, self.model.baseline.code, theta,
            self.model.structure.code, re_code, re_params,
        )
        out = core.log_marginals(*args, epsabs=self.epsabs, epsrel=self.epsrel, scaled=scaled, limit=self.limit)
        if np.any(out[4] == 1):
            # one more pass with a much larger subdivision budget
            out = core.log_marginals(*args, epsabs=self.epsabs, epsrel=self.epsrel, scaled=scaled, limit=_RETRY_LIMIT)
        terms = ClusterTerms(*out)
        bad = np.flatnonzero((terms.status != 0) | ~np.isfinite(terms.log_m))
        if bad.size:
            i = int(bad[0])
            raise QuadratureError(
                f"marginal likelihood of cluster {self.data.cluster_labels[i]!r} failed "
                f"(status {int(terms.status[i])}, log m = {terms.log_m[i]})",
                cluster=self.data.cluster_labels[i].item(),
                params=eta.to_dict(),
            )
        return terms

    def __call__(self, eta: ParameterVector) -> float:
        return self.cluster_terms(eta).total

    def loglik_grid(self, eta: ParameterVector, u) -> np.ndarray:
        """l_i(u_k) for every cluster i and grid point k, shape (r, k)."""
        lh, lt, theta = self._kernel_args(eta)
        u = np.ascontiguousarray(np.atleast_1d(np.asarray(u, dtype=float)))
        structure = self.model.structure
        if structure is HazardStructure.GH:
            raise ContractError("the GH structure has no random effect to evaluate over")
        return _backend.kernels().loglik_grid(
            self._t, self._d, lh, lt, self._offsets, self.model.baseline.code, theta, structure.code, u
        )

    def safe(self, eta: ParameterVector) -> float:
        """log m(eta), or -inf where the evaluation breaks down."""
        try:
            value = self(eta)
        except ContractError:
            raise
        except (NumericError, FloatingPointError, OverflowError, ValueError):
            return -math.inf
        return value if math.isfinite(value) else -math.inf


def marginal_lik_cluster(i: int, eta: ParameterVector, data: ClusteredDataset, model: ModelSpec):
    """``(m_i, log m_i)`` for cluster ``i``; ``m_i`` itself may under- or overflow."""
    if not 0 <= i < data.r:
        raise IndexError(f"cluster index {i} out of range for {data.r} clusters")
    terms = MarginalLikelihood(model, data).cluster_terms(eta)
    log_m = float(terms.log_m[i])
    return float(np.exp(log_m)), log_m


def log_marginal(eta: ParameterVector, data: ClusteredDataset, model: ModelSpec, **quad) -> float:
    """log m(eta) summed over clusters."""
    return MarginalLikelihood(model, data, **quad)(eta)
