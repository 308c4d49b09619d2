"""Model specification and the packed parameter vector.

A :class:`ParameterVector` holds ``(beta, alpha, theta, xi)`` on the
natural scale. :class:`ParamLayout` maps it to and from the unconstrained
vector the optimiser works with (log for positive parameters, atanh for
the two-piece skewness, identity otherwise), optionally holding some
parameters fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baseline import BaselineFamily, BaselineHazard
from .errors import ContractError, IdentifiabilityError, ValidationError
from .hazard import HazardStructure, RegressionCoefficients
from .reffects import DEFAULT_T_DF, REFamily, RandomEffectsDist

__all__ = ["ModelSpec", "ParameterVector", "ParamLayout"]


@dataclass(frozen=True)
class ModelSpec:
    """Hazard structure, baseline family and random-effects family."""

    structure: HazardStructure
    baseline: BaselineFamily
    re_family: REFamily = REFamily.NORMAL
    t_df: float = DEFAULT_T_DF

    def __post_init__(self):
        object.__setattr__(self, "structure", HazardStructure(self.structure))
        object.__setattr__(self, "baseline", BaselineFamily(self.baseline))
        object.__setattr__(self, "re_family", REFamily(self.re_family))
        object.__setattr__(self, "t_df", float(self.t_df))

    @property
    def has_random_effects(self) -> bool:
        return self.structure.has_random_effects

    @property
    def n_theta(self) -> int:
        return len(self.baseline.param_names)

    @property
    def n_xi(self) -> int:
        return len(self.re_family.param_names) if self.has_random_effects else 0

    def validate(self) -> None:
        if self.structure is HazardStructure.GENERAL:
            raise ValidationError(
                "the general structure with two distinct random effects needs a "
                "two-dimensional integral and is not supported; use gh, megh1 or megh2"
            )

    def reduced(self) -> "ModelSpec":
        """The same model without random effects."""
        return ModelSpec(HazardStructure.GH, self.baseline, self.re_family, self.t_df)

    def label(self) -> str:
        if not self.has_random_effects:
            return f"{self.structure.value}/{self.baseline.value}"
        return f"{self.structure.value}/{self.baseline.value}/{self.re_family.value}"


@dataclass
class ParameterVector:
    """Natural-scale parameters ``eta = (beta, alpha, theta, xi)``."""

    beta: np.ndarray
    alpha: np.ndarray
    theta: np.ndarray
    xi: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float)).copy()
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float)).copy()
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float)).copy()
        self.xi = np.atleast_1d(np.asarray(self.xi, dtype=float)).copy()

    def flat(self) -> np.ndarray:
        return np.concatenate([self.beta, self.alpha, self.theta, self.xi])

    def coefficients(self) -> RegressionCoefficients:
        return RegressionCoefficients(self.beta, self.alpha)

    def baseline_hazard(self, model: ModelSpec) -> BaselineHazard:
        return BaselineHazard(model.baseline, tuple(self.theta))

    def re_dist(self, model: ModelSpec) -> RandomEffectsDist | None:
        if not model.has_random_effects:
            return None
        return RandomEffectsDist(model.re_family, tuple(self.xi), model.t_df)

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.beta, self.alpha, self.theta, self.xi)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("beta", "alpha", "theta", "xi")}

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterVector":
        return cls(d.get("beta", []), d.get("alpha", []), d["theta"], d.get("xi", []))


class ParamLayout:
    """Names, transforms and fixed values for a model on a given design.

    Parameters
    ----------
    model : ModelSpec
    hazard_names, time_names : sequence of str
        Covariate names on the hazard and time scales.
    fixed : dict, optional
        Parameter name -> natural-scale value held constant.
    """

    def __init__(self, model: ModelSpec, hazard_names, time_names, fixed=None):
        self.model = model
        self.hazard_names = tuple(hazard_names)
        self.time_names = tuple(time_names)
        self.p = len(self.hazard_names)
        self.pt = len(self.time_names)
        names = [f"beta_{n}" for n in self.hazard_names]
        names += [f"alpha_{n}" for n in self.time_names]
        names += list(model.baseline.param_names)
        kinds = ["id"] * (self.p + self.pt)
        kinds += ["log" if pos else "id" for pos in model.baseline.positive]
        if model.has_random_effects:
            names += list(model.re_family.param_names)
            kinds += ["log"]
            if model.re_family is REFamily.TWO_PIECE_NORMAL:
                kinds += ["atanh"]
        if len(set(names)) != len(names):
            raise ContractError(f"duplicate parameter names {names}")
        self.names = tuple(names)
        self.kinds = tuple(kinds)
        fixed = dict(fixed or {})
        unknown = set(fixed) - set(self.names)
        if unknown:
            raise ContractError(f"cannot fix unknown parameters {sorted(unknown)}; known: {self.names}")
        self.fixed = {k: float(v) for k, v in fixed.items()}
        self.free = np.array([n not in self.fixed for n in self.names])
        self._fixed_values = np.array([self.fixed.get(n, np.nan) for n in self.names])

    @property
    def dim(self) -> int:
        """Number of free (estimated) parameters."""
        return int(self.free.sum())

    @property
    def free_names(self) -> tuple[str, ...]:
        return tuple(n for n, f in zip(self.names, self.free) if f)

    def split(self, flat: np.ndarray) -> ParameterVector:
        p, pt, nt = self.p, self.pt, self.model.n_theta
        return ParameterVector(
            flat[:p], flat[p : p + pt], flat[p + pt : p + pt + nt], flat[p + pt + nt :]
        )

    def _forward(self, values: np.ndarray) -> np.ndarray:
        out = np.array(values, dtype=float)
        for j, kind in enumerate(self.kinds):
            if kind == "log":
                out[j] = np.log(values[j])
            elif kind == "atanh":
                out[j] = np.arctanh(values[j])
        return out

    def _backward(self, phi: np.ndarray) -> np.ndarray:
        out = np.array(phi, dtype=float)
        for j, kind in enumerate(self.kinds):
            if kind == "log":
                out[j] = np.exp(phi[j])
            elif kind == "atanh":
                out[j] = np.tanh(phi[j])
        return out

    def pack(self, params: ParameterVector) -> np.ndarray:
        """Natural-scale parameters -> free unconstrained vector."""
        flat = params.flat()
        if flat.size != len(self.names):
            raise ContractError(f"parameter vector has {flat.size} entries, layout expects {len(self.names)}")
        with np.errstate(divide="ignore", invalid="ignore"):
            phi = self._forward(flat)
        return phi[self.free]

    def unpack(self, phi_free: np.ndarray) -> ParameterVector:
        full = self._fixed_values.copy()
        with np.errstate(divide="ignore"):
            full[self.free] = self._backward(self._expand(phi_free))[self.free]
        return self.split(full)

    def _expand(self, phi_free):
        full = np.zeros(len(self.names))
        full[self.free] = phi_free
        return full

    def natural(self, phi_free: np.ndarray) -> np.ndarray:
        """Free natural-scale values for a free unconstrained vector."""
        return self.unpack(phi_free).flat()[self.free]

    def jacobian_diag(self, phi_free: np.ndarray) -> np.ndarray:
        """d(natural)/d(unconstrained) for the free parameters."""
        full = self._expand(phi_free)
        jac = np.ones(len(self.names))
        for j, kind in enumerate(self.kinds):
            if kind == "log":
                jac[j] = np.exp(full[j])
            elif kind == "atanh":
                jac[j] = 1.0 - np.tanh(full[j]) ** 2
        return jac[self.free]

    def check_identifiable(self) -> None:
        """Reject a Weibull baseline (PGW delta fixed at 1) when time-scale
        effects are present."""
        if self.model.baseline is BaselineFamily.PGW and self.pt > 0:
            if self.fixed.get("delta") == 1.0:
                raise IdentifiabilityError(
                    "PGW baseline with delta fixed at 1 is Weibull; with time-scale "
                    "covariates the general hazard structure is not identifiable"
                )
