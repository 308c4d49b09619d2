"""Conditional hazards of the mixed-effects general hazard structure.

For a subject with hazard-scale covariates ``x``, time-scale covariates
``xt`` and cluster effects ``(u, ut)``::

    h(t) = h0(t * exp(xt @ alpha + ut)) * exp(x @ beta + u)
    H(t) = H0(t * exp(xt @ alpha + ut)) * exp(x @ beta - xt @ alpha + u - ut)

The GH structure has no random effects, MEGH-I puts the cluster effect on
the hazard scale only, MEGH-II shares one effect between both scales.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .baseline import BaselineHazard
from .errors import ContractError, DomainError

__all__ = [
    "HazardStructure",
    "RegressionCoefficients",
    "structure_effects",
    "cond_log_hazard",
    "cond_cum_hazard",
    "cond_survival",
]


class HazardStructure(str, enum.Enum):
    GH = "gh"
    MEGH_I = "megh1"
    MEGH_II = "megh2"
    # Two distinct effects (u, ut). Representable, but not estimable here.
    GENERAL = "megh"

    @property
    def has_random_effects(self) -> bool:
        return self is not HazardStructure.GH

    @property
    def code(self) -> int:
        return {HazardStructure.GH: 0, HazardStructure.MEGH_I: 1, HazardStructure.MEGH_II: 2}[self]


@dataclass(frozen=True)
class RegressionCoefficients:
    beta: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        object.__setattr__(self, "alpha", np.atleast_1d(np.asarray(self.alpha, dtype=float)))


def structure_effects(kind, u_raw):
    """Map a scalar cluster effect to the (hazard-scale, time-scale) pair."""
    kind = HazardStructure(kind)
    if kind is HazardStructure.GH:
        zero = np.zeros_like(np.asarray(u_raw, dtype=float))
        return zero, zero.copy()
    if kind is HazardStructure.MEGH_I:
        u = np.asarray(u_raw, dtype=float)
        return u, np.zeros_like(u)
    if kind is HazardStructure.MEGH_II:
        u = np.asarray(u_raw, dtype=float)
        return u, u.copy()
    raise ContractError("the general structure carries two effects; pass (u, ut) explicitly")


def _linear_parts(x, xt, coef: RegressionCoefficients):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xt = np.atleast_1d(np.asarray(xt, dtype=float))
    if x.shape[-1:] != coef.beta.shape:
        raise ContractError(f"x has {x.shape[-1]} columns, beta has {coef.beta.size}")
    if xt.shape[-1:] != coef.alpha.shape:
        raise ContractError(f"xt has {xt.shape[-1]} columns, alpha has {coef.alpha.size}")
    return x @ coef.beta, xt @ coef.alpha


def cond_log_hazard(t, x, xt, u, ut, coef: RegressionCoefficients, b: BaselineHazard):
    """log h(t | x, u, ut) for one subject (1-d ``x``) or many (2-d ``x``)."""
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("hazard needs strictly positive times")
    lh, lt = _linear_parts(x, xt, coef)
    return b.log_hazard_logt(np.log(t) + lt + ut) + lh + u


def cond_cum_hazard(t, x, xt, u, ut, coef: RegressionCoefficients, b: BaselineHazard):
    """H(t | x, u, ut); zero at t = 0."""
    t = np.asarray(t, dtype=float)
    if np.any(~(t >= 0)):
        raise DomainError("cumulative hazard needs t >= 0")
    lh, lt = _linear_parts(x, xt, coef)
    with np.errstate(divide="ignore"):
        s = np.log(t) + lt + ut
    return b.cumhaz_logt(s) * np.exp(lh - lt + u - ut)


def cond_survival(t, x, xt, u, ut, coef: RegressionCoefficients, b: BaselineHazard):
    return np.exp(-cond_cum_hazard(t, x, xt, u, ut, coef, b))
