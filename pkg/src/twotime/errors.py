"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: configuration problems exit with 2,
degenerate runs with 3 and resource limits with 4.
"""


class TwoTimeError(Exception):
    """Base class for all package errors."""


class StructuralError(TwoTimeError, ValueError):
    """Operand shapes or dimensions do not fit together."""


class ResourceError(TwoTimeError):
    """A requested Hilbert space or matrix exceeds the configured maximum."""


class DegenerateError(TwoTimeError):
    """The stochastic process cannot continue (zero vectors, impossible jumps)."""


class DegenerateInitialization(DegenerateError):
    """B|psi0> vanishes, so the correlator is identically zero."""


class DeadTrajectoryError(DegenerateError):
    """Both vectors of a pair have vanished."""


class RateSingularityError(DegenerateError):
    """The jump rate diverges (vanishing denominator <psi|A|phi>)."""


class ConvergenceError(TwoTimeError):
    """An iterative procedure did not converge within its horizon."""


class ConfigError(TwoTimeError, ValueError):
    """Malformed or inconsistent run configuration."""
