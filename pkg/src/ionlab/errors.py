"""Exception taxonomy shared across the toolkit.

Domain errors mean the caller handed us parameters outside the physical or
numerical domain of an operation; fit errors mean a curve fit could not
produce a trustworthy estimate. The CLI maps these onto distinct exit codes.
"""


class ToolkitError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(ToolkitError, ValueError):
    """Input violates a precondition (invalid parameter, unit, or range)."""


class ConfigError(ToolkitError, ValueError):
    """Run configuration is missing keys, has bad values, or fails schema."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class FitError(ToolkitError, RuntimeError):
    """A least-squares fit could not produce a usable estimate."""


class UnboundedDecayError(FitError):
    """All contrasts sit at 1 within errors; the decay time is unbounded."""


class FitConvergenceError(FitError):
    """The optimizer failed to converge or returned a degenerate covariance."""


class InfeasibleSequenceError(DomainError):
    """Pulse sequence cannot be scheduled (pulses outlast the free evolution)."""
