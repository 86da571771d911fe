"""Exception and warning types raised across the package."""


class HypTaylorError(Exception):
    """Base class for all package errors."""


class CoefficientOverflow(HypTaylorError, OverflowError):
    pass


class DomainError(HypTaylorError, ValueError):
    pass


class NearSingular(HypTaylorError, ArithmeticError):
    pass


class ShapeError(HypTaylorError, ValueError):
    pass


class ContractError(HypTaylorError, ValueError):
    pass


class NumericalError(HypTaylorError, ArithmeticError):
    pass


class ConfigError(HypTaylorError, ValueError):
    pass


class GraphError(HypTaylorError, ValueError):
    pass


class DomainWarning(UserWarning):
    """Series evaluated outside its radius of convergence; the value is still returned."""
