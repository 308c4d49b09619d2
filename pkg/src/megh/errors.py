"""Exception hierarchy shared across the package."""


class MEGHError(Exception):
    """Base class for all package errors."""


class DomainError(MEGHError, ValueError):
    """An argument lies outside the domain of a function (e.g. t <= 0)."""


class ContractError(MEGHError, ValueError):
    """Inputs violate a structural contract such as matching dimensions."""


class ValidationError(MEGHError, ValueError):
    """A dataset or model specification failed validation.

    ``problems`` lists the individual findings (row/column references
    where available) so callers can report all of them at once.
    """

    def __init__(self, message, problems=None):
        self.problems = list(problems or [])
        if self.problems:
            message = message + ": " + "; ".join(self.problems)
        super().__init__(message)


class IdentifiabilityError(ValidationError):
    """The model is not identifiable (Weibull baseline in a GH structure)."""


class NumericError(MEGHError, ArithmeticError):
    """A numerical routine failed (quadrature, Hessian inversion, ...)."""


class QuadratureError(NumericError):
    def __init__(self, message, cluster=None, params=None):
        self.cluster = cluster
        self.params = params
        super().__init__(message)
