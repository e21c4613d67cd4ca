"""Exception types shared across the package.

The CLI maps these onto exit codes, so library code should raise one of
them (or a subclass) rather than bare exceptions when rejecting input or
reporting a numerical failure.
"""


class QrhError(Exception):
    """Base class for all package-specific errors."""


class DomainError(QrhError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class RangeError(QrhError, ValueError):
    """An argument is inside the domain but outside the supported
    evaluation range of the chosen algorithm."""


class DataError(QrhError, ValueError):
    """Input data (quote sets, path arrays, CSV files) is malformed,
    inconsistent or insufficient."""


class ConfigError(QrhError, ValueError):
    """A configuration file or parameter set cannot be parsed or
    validated."""


class UnsupportedParameterError(DomainError):
    """A parameter value is valid for the model but not supported by this
    particular operation (e.g. the parametric forward curve at alpha = 1,
    where Gamma(1 - alpha) has a pole)."""


class InfeasibleGridError(DomainError):
    """A calibration search grid contains points that violate the model
    parameter invariants."""


class PriceBoundsError(DomainError):
    """An option price lies at or outside its no-arbitrage bounds, so no
    implied volatility exists.  The message names the violated bound."""


class NumericalError(QrhError, RuntimeError):
    """An iterative routine failed to converge or produced a result that
    cannot be trusted."""
