"""Exception hierarchy shared across the package.

Every error raised by rdstab derives from :class:`RdstabError`, so callers can
catch the whole family with one clause.  The CLI maps these onto exit codes
(validation problems -> 2, numerical breakdowns -> 4).
"""

from __future__ import annotations


class RdstabError(Exception):
    """Base class for all rdstab errors."""


class ValidationError(RdstabError):
    """A constructed object violates one of its declared invariants."""


class IrreducibilityError(ValidationError):
    """The transition matrix has a state that cannot reach every other state."""


class DomainError(RdstabError):
    """A point lies outside the admissible region of the system."""


class DomainEscapeError(DomainError):
    """An iterate left the declared domain during simulation.

    Attributes:
        t: first time index at which the escape happened.
        state: environment state at that time.
        value: the offending iterate.
    """

    def __init__(self, message: str, t: int, state: int | None = None, value=None):
        super().__init__(message)
        self.t = t
        self.state = state
        self.value = value


class EstimationError(RdstabError):
    """A Monte Carlo estimate encountered a non-finite sample.

    Attributes:
        t: sample index of the first bad value.
        window: the environment state window at that index.
    """

    def __init__(self, message: str, t: int, window=None):
        super().__init__(message)
        self.t = t
        self.window = window


class NumericalError(RdstabError):
    """A numerical routine failed or two independent routes disagree."""

    def __init__(self, message: str, payload=None):
        super().__init__(message)
        self.payload = payload


class UsageError(RdstabError):
    """A documented precondition of an operation was not met."""


class ConfigError(RdstabError):
    """A model file failed validation; carries structured diagnostics."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        lines = "; ".join(str(d) for d in self.diagnostics)
        super().__init__(f"invalid model configuration: {lines}")
