"""Parametric baseline hazards.

Two families are supported:

``PGW``
    Power generalised Weibull with ``theta = (eta, nu, delta)``::

        H0(t) = (1 + (t/eta)**nu)**(1/delta) - 1

``LOGLOGISTIC``
    Log-logistic with log-location ``mu`` and scale ``tau``::

        H0(t) = log(1 + (t * exp(-mu))**(1/tau))

Both have closed-form inverse cumulative hazards, which the simulator
relies on. Everything is evaluated on the log-time scale internally so
that extreme linear predictors do not overflow.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, IdentifiabilityError

__all__ = [
    "BaselineFamily",
    "BaselineHazard",
    "h0",
    "log_h0",
    "H0",
    "H0_inv",
    "softplus",
]


class BaselineFamily(str, enum.Enum):
    PGW = "pgw"
    LOGLOGISTIC = "loglogistic"

    @property
    def param_names(self) -> tuple[str, ...]:
        return _PARAM_NAMES[self]

    @property
    def positive(self) -> tuple[bool, ...]:
        """Which entries of theta are constrained to be positive."""
        return _POSITIVE[self]

    @property
    def code(self) -> int:
        return 0 if self is BaselineFamily.PGW else 1


_PARAM_NAMES = {
    BaselineFamily.PGW: ("eta", "nu", "delta"),
    BaselineFamily.LOGLOGISTIC: ("mu", "tau"),
}
_POSITIVE = {
    BaselineFamily.PGW: (True, True, True),
    BaselineFamily.LOGLOGISTIC: (False, True),
}


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class BaselineHazard:
    """A baseline hazard family together with its parameter vector."""

    family: BaselineFamily
    theta: tuple[float, ...]

    def __post_init__(self):
        family = BaselineFamily(self.family)
        theta = tuple(float(v) for v in np.atleast_1d(np.asarray(self.theta, dtype=float)))
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "theta", theta)
        if len(theta) != len(family.param_names):
            raise DomainError(
                f"{family.value} baseline needs {len(family.param_names)} parameters "
                f"{family.param_names}, got {len(theta)}"
            )
        for name, value, pos in zip(family.param_names, theta, family.positive):
            if not np.isfinite(value):
                raise DomainError(f"baseline parameter {name} is not finite: {value}")
            if pos and value <= 0:
                raise DomainError(f"baseline parameter {name} must be positive, got {value}")

    @classmethod
    def pgw(cls, eta: float, nu: float, delta: float) -> "BaselineHazard":
        return cls(BaselineFamily.PGW, (eta, nu, delta))

    @classmethod
    def loglogistic(cls, mu: float, tau: float) -> "BaselineHazard":
        return cls(BaselineFamily.LOGLOGISTIC, (mu, tau))

    @property
    def is_weibull(self) -> bool:
        return self.family is BaselineFamily.PGW and self.theta[2] == 1.0

    def check_identifiable(self) -> None:
        """Reject the Weibull special case, under which the GH structure
        cannot separate time-scale from hazard-scale effects."""
        if self.is_weibull:
            raise IdentifiabilityError(
                "PGW baseline with delta=1 is a Weibull hazard; the general hazard "
                "structure is not identifiable with a Weibull baseline"
            )

    # -- log-time parametrisation ------------------------------------------
    def log_hazard_logt(self, s):
        """log h0(exp(s)); ``s`` is log-time and may be any real array."""
        s = np.asarray(s, dtype=float)
        if self.family is BaselineFamily.PGW:
            eta, nu, delta = self.theta
            le = np.log(eta)
            z = nu * (s - le)
            return (np.log(nu) - np.log(delta) - le) + (nu - 1.0) * (s - le) + (
                1.0 / delta - 1.0
            ) * softplus(z)
        mu, tau = self.theta
        w = (s - mu) / tau
        return -np.log(tau) - s + w - softplus(w)

    def cumhaz_logt(self, s):
        """H0(exp(s)) for log-time ``s``; equals 0 at s = -inf."""
        s = np.asarray(s, dtype=float)
        if self.family is BaselineFamily.PGW:
            eta, nu, delta = self.theta
            z = nu * (s - np.log(eta))
            return np.expm1(softplus(z) / delta)
        mu, tau = self.theta
        return softplus((s - mu) / tau)

    # -- natural time scale ------------------------------------------------
    def log_hazard(self, t):
        t = _check_positive_time(t)
        return self.log_hazard_logt(np.log(t))

    def hazard(self, t):
        return np.exp(self.log_hazard(t))

    def cumhaz(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(~(t >= 0)):
            raise DomainError("cumulative hazard needs t >= 0")
        with np.errstate(divide="ignore"):
            return self.cumhaz_logt(np.log(t))

    def cumhaz_inv(self, s):
        """Inverse of the cumulative hazard: the time at which H0 reaches s."""
        s = np.asarray(s, dtype=float)
        if np.any(~(s >= 0)):
            raise DomainError("inverse cumulative hazard needs s >= 0")
        with np.errstate(divide="ignore"):
            if self.family is BaselineFamily.PGW:
                eta, nu, delta = self.theta
                inner = np.expm1(delta * np.log1p(s))
                return eta * np.exp(np.log(inner) / nu)
            mu, tau = self.theta
            return np.exp(mu + tau * np.log(np.expm1(s)))

    def survival(self, t):
        return np.exp(-self.cumhaz(t))


def _check_positive_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("hazard needs strictly positive times")
    return t


def h0(t, b: BaselineHazard):
    """Baseline hazard rate at ``t > 0``."""
    return b.hazard(t)


def log_h0(t, b: BaselineHazard):
    return b.log_hazard(t)


def H0(t, b: BaselineHazard):
    """Baseline cumulative hazard at ``t >= 0``."""
    return b.cumhaz(t)


def H0_inv(s, b: BaselineHazard):
    """Inverse baseline cumulative hazard at ``s >= 0``."""
    return b.cumhaz_inv(s)
