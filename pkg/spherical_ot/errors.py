"""Exception hierarchy for spherical_ot.

Every error carries the exit code the command line front end reports for it.
"""

from typing import Any, Dict, Optional


class SphericalOTError(Exception):
    """Base class for all library errors."""

    exit_code: int = 1

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = context

    def __str__(self) -> str:
        if not self.context:
            return self.message
        details = ", ".join(f"{key}={value}" for key, value in self.context.items())
        return f"{self.message} ({details})"


class ConfigError(SphericalOTError):
    """Malformed experiment configuration or missing input files."""

    exit_code = 1


class ArgumentError(SphericalOTError, ValueError):
    """A precondition on the arguments of an operation was violated."""

    exit_code = 1


class KernelDomainError(SphericalOTError, ValueError):
    """A cost kernel was evaluated outside the domain where it is defined."""

    exit_code = 1


class InfeasibleError(SphericalOTError):
    """Masses do not balance, or a map does not push the source onto the target."""

    exit_code = 2


class NoFinitePlanError(SphericalOTError):
    """Every coupling of the two measures charges the diagonal."""

    exit_code = 3


class NoSeparatedPlanError(NoFinitePlanError):
    """The slab construction cannot keep the plan away from the diagonal."""

    exit_code = 3


class ConvergenceError(SphericalOTError):
    """An iterative procedure ran out of iterations."""

    exit_code = 4

    def __init__(self, message: str, residuals: Optional[Any] = None, **context: Any):
        super().__init__(message, **context)
        self.residuals = residuals


class MonotonicityViolation(SphericalOTError):
    """A pair set is not c-cyclically monotone."""

    exit_code = 5


class VerificationFailed(SphericalOTError):
    """At least one verification suite failed."""

    exit_code = 5
