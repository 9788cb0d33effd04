"""Exception taxonomy shared by all modules.

The CLI maps these onto process exit codes: validation and configuration
problems exit 2, tolerance failures exit 1, solver breakdowns exit 3.
"""

from __future__ import annotations


class ConfigurationError(ValueError):
    """Bad run configuration: missing files, empty banks, invalid grids."""


class DomainError(ValueError):
    """Parameter outside the documented domain of an operation."""


class PreconditionError(ValueError):
    """A documented hypothesis of an operation is violated.

    The message names the violated hypothesis.
    """


class FormatError(ValueError):
    """Malformed field file. Carries the byte offset of the defect."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class UnsupportedVersionError(FormatError):
    """Field file with a recognized but unsupported magic/version."""


class SolverError(RuntimeError):
    """Iterative solver failed to converge. Carries the residual history."""

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class ContinuationError(SolverError):
    """Homotopy path failed after step-size exhaustion; keeps last good state."""

    def __init__(self, message: str, state=None, history=None):
        super().__init__(message, history)
        self.state = state


class BarrierError(SolverError):
    """Iterate touched the -1 barrier of the nonlinearity's domain."""


class PositivityLossError(SolverError):
    """Conformal factor lost positivity along the continuation path."""


class DegenerateMetricError(ValueError):
    """Metric violates the uniform ellipticity bounds; reports worst node."""


class SuperluminalDataError(ValueError):
    """Momentum data with |j|/z at or above the causal bound 1."""


class AdmissibilityError(ValueError):
    """Fluid data outside the invertibility region of the reconstruction map."""


class ToleranceFailure(RuntimeError):
    """A certified run finished but a residual exceeded its tolerance."""
