"""Exception hierarchy.

The CLI maps :class:`InputError` to exit status 2 and every other
:class:`FireLPError` to exit status 1.
"""


class FireLPError(Exception):
    """Base class for all package errors."""


class InputError(FireLPError):
    """Malformed input file, unknown identifier or invalid configuration."""


class EstimationError(FireLPError):
    """A regression could not be fitted (empty sample, rank deficiency, ...)."""


class ConvergenceError(EstimationError):
    """Fixed-effect absorption did not converge."""
