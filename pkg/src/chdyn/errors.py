"""Exception hierarchy shared by all modules."""


class ChdynError(Exception):
    """Base class for every error raised by the package."""


class DomainError(ChdynError, ValueError):
    """A value lies outside the admissible phase interval."""


class ConvergenceError(ChdynError, RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConfigError(ChdynError, ValueError):
    """Invalid grid or run configuration."""


class ShapeError(ChdynError, ValueError):
    """Field dimensions do not match the grid."""


class RegimeError(ChdynError, ValueError):
    """Parameters or field linkage inconsistent with the (L, sigma) regime."""


class MeanError(ChdynError, ValueError):
    """Right-hand side does not have zero generalized mean."""


class SolverError(ChdynError, RuntimeError):
    """Linear iterative solver stalled."""


class ParamError(ChdynError, ValueError):
    pass


class FitError(ChdynError, ValueError):
    """Rate fit impossible on the supplied data."""


class InitError(ChdynError, ValueError):
    """Inadmissible initial datum."""


class ParseError(ChdynError, ValueError):
    def __init__(self, message, line=None, field=None):
        super().__init__(message)
        self.line = line
        self.field = field


class ValidationError(ChdynError, ValueError):
    """Aggregates every constraint violation found in a config."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
