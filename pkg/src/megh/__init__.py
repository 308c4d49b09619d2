"""Mixed-effects general hazard models for clustered survival data."""

from ._backend import active as active_backend
from ._backend import use_backend
from .baseline import BaselineFamily, BaselineHazard, H0, H0_inv, h0, log_h0
from .data import ClusteredDataset, ColumnRoles, KMCurve, km_by_cluster, load_dataset, write_dataset
from .diagnostics import (
    GradientDiagnostic,
    LRTCase,
    LRTResult,
    boundary_pvalue,
    delta_integral,
    diagnose,
    gradient_bands,
    gradient_function,
    lrt_from_fits,
    lrt_random_effects,
)
from .errors import (
    ContractError,
    DomainError,
    IdentifiabilityError,
    MEGHError,
    NumericError,
    QuadratureError,
    ValidationError,
)
from .estimation import FitConfig, FitResult, aic, covariance_and_se, fit
from .hazard import (
    HazardStructure,
    RegressionCoefficients,
    cond_cum_hazard,
    cond_log_hazard,
    cond_survival,
    structure_effects,
)
from .likelihood import MarginalLikelihood, cond_loglik_cluster, log_marginal, marginal_lik_cluster
from .model import ModelSpec, ParameterVector, ParamLayout
from .reffects import REFamily, RandomEffectsDist
from .simulation import BimodalEffects, CovariateSpec, SimConfig, run_study, simulate_times

__version__ = "0.1.0"

__all__ = [
    "BaselineFamily", "BaselineHazard", "H0", "H0_inv", "h0", "log_h0",
    "ClusteredDataset", "ColumnRoles", "KMCurve", "km_by_cluster", "load_dataset", "write_dataset",
    "GradientDiagnostic", "LRTCase", "LRTResult", "boundary_pvalue", "delta_integral", "diagnose",
    "gradient_bands", "gradient_function", "lrt_from_fits", "lrt_random_effects",
    "ContractError", "DomainError", "IdentifiabilityError", "MEGHError", "NumericError",
    "QuadratureError", "ValidationError",
    "FitConfig", "FitResult", "aic", "covariance_and_se", "fit",
    "HazardStructure", "RegressionCoefficients", "cond_cum_hazard", "cond_log_hazard",
    "cond_survival", "structure_effects",
    "MarginalLikelihood", "cond_loglik_cluster", "log_marginal", "marginal_lik_cluster",
    "ModelSpec", "ParameterVector", "ParamLayout",
    "REFamily", "RandomEffectsDist",
    "BimodalEffects", "CovariateSpec", "SimConfig", "run_study", "simulate_times",
    "active_backend", "use_backend", "__version__",
]
