"""Zero-mean random-effects distributions.

``NORMAL``            xi = (sigma,)
``STUDENT_T``         xi = (scale,); degrees of freedom fixed by ``df``
``TWO_PIECE_NORMAL``  xi = (sigma, gamma) with gamma in (-1, 1)

The two-piece normal uses scale ``sigma*(1-gamma)`` left of its mode and
``sigma*(1+gamma)`` right of it, with the mode placed at
``-2*sigma*gamma*sqrt(2/pi)`` so that the mean is exactly zero.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import DomainError

__all__ = [
    "REFamily",
    "RandomEffectsDist",
    "log_density",
    "sample",
    "variance",
    "DEFAULT_T_DF",
]

DEFAULT_T_DF = 5.0
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class REFamily(str, enum.Enum):
    NORMAL = "normal"
    STUDENT_T = "t"
    TWO_PIECE_NORMAL = "tpn"

    @property
    def param_names(self) -> tuple[str, ...]:
        return {
            REFamily.NORMAL: ("sigma_u",),
            REFamily.STUDENT_T: ("scale_u",),
            REFamily.TWO_PIECE_NORMAL: ("sigma_u", "gamma_u"),
        }[self]

    @property
    def code(self) -> int:
        return {REFamily.NORMAL: 0, REFamily.STUDENT_T: 1, REFamily.TWO_PIECE_NORMAL: 2}[self]


@dataclass(frozen=True)
class RandomEffectsDist:
    family: REFamily
    xi: tuple[float, ...]
    df: float = DEFAULT_T_DF

    def __post_init__(self):
        family = REFamily(self.family)
        xi = tuple(float(v) for v in np.atleast_1d(np.asarray(self.xi, dtype=float)))
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "df", float(self.df))
        if len(xi) != len(family.param_names):
            raise DomainError(f"{family.value} random effects need parameters {family.param_names}")
        if not (xi[0] > 0 and math.isfinite(xi[0])):
            raise DomainError(f"random-effects scale must be positive, got {xi[0]}")
        if family is REFamily.TWO_PIECE_NORMAL and not (-1.0 < xi[1] < 1.0):
            raise DomainError(f"two-piece skewness must lie in (-1, 1), got {xi[1]}")
        if family is REFamily.STUDENT_T and not self.df > 2.0:
            raise DomainError("Student-t random effects need df > 2 for a finite variance")

    @classmethod
    def normal(cls, sigma: float) -> "RandomEffectsDist":
        return cls(REFamily.NORMAL, (sigma,))

    @classmethod
    def student_t(cls, scale: float, df: float = DEFAULT_T_DF) -> "RandomEffectsDist":
        return cls(REFamily.STUDENT_T, (scale,), df)

    @classmethod
    def two_piece_normal(cls, sigma: float, gamma: float) -> "RandomEffectsDist":
        return cls(REFamily.TWO_PIECE_NORMAL, (sigma, gamma))

    @property
    def mode(self) -> float:
        if self.family is REFamily.TWO_PIECE_NORMAL:
            sigma, gamma = self.xi
            return -2.0 * sigma * gamma * math.sqrt(2.0 / math.pi)
        return 0.0

    def variance(self) -> float:
        if self.family is REFamily.NORMAL:
            return self.xi[0] ** 2
        if self.family is REFamily.STUDENT_T:
            k = self.df
            return self.xi[0] ** 2 * k / (k - 2.0)
        sigma, gamma = self.xi
        return sigma**2 * (1.0 + (3.0 - 8.0 / math.pi) * gamma**2)

    def sd(self) -> float:
        return math.sqrt(self.variance())

    def log_density(self, u):
        u = np.asarray(u, dtype=float)
        if self.family is REFamily.NORMAL:
            sigma = self.xi[0]
            return -_LOG_SQRT_2PI - math.log(sigma) - 0.5 * (u / sigma) ** 2
        if self.family is REFamily.STUDENT_T:
            s, k = self.xi[0], self.df
            const = gammaln(0.5 * (k + 1)) - gammaln(0.5 * k) - 0.5 * math.log(k * math.pi) - math.log(s)
            return const - 0.5 * (k + 1) * np.log1p((u / s) ** 2 / k)
        sigma, gamma = self.xi
        y = u - self.mode
        side = np.where(y < 0, sigma * (1.0 - gamma), sigma * (1.0 + gamma))
        return -_LOG_SQRT_2PI - math.log(sigma) - 0.5 * (y / side) ** 2

    def pdf(self, u):
        return np.exp(self.log_density(u))

    def sample(self, n: int, rng=None) -> np.ndarray:
        rng = np.random.default_rng(rng)
        if n == 0:
            return np.empty(0)
        if self.family is REFamily.NORMAL:
            return self.xi[0] * rng.standard_normal(n)
        if self.family is REFamily.STUDENT_T:
            return self.xi[0] * rng.standard_t(self.df, n)
        sigma, gamma = self.xi
        z = np.abs(rng.standard_normal(n))
        left = rng.random(n) < 0.5 * (1.0 - gamma)
        y = np.where(left, -sigma * (1.0 - gamma) * z, sigma * (1.0 + gamma) * z)
        return y + self.mode

    def kernel_params(self) -> tuple[int, np.ndarray]:
        """Family code and parameter triple consumed by the compiled core."""
        p = np.zeros(3)
        p[: len(self.xi)] = self.xi
        if self.family is REFamily.STUDENT_T:
            p[1] = self.df
        return self.family.code, p


def log_density(u, d: RandomEffectsDist):
    return d.log_density(u)


def sample(n: int, d: RandomEffectsDist, rng_seed=None) -> np.ndarray:
    return d.sample(n, rng_seed)


def variance(d: RandomEffectsDist) -> float:
    return d.variance()
