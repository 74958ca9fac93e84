"""
Error types for the workbench.

Every error is a ValueError so callers that only guard against bad input keep
working; the CLI maps the subclasses to distinct exit statuses.
"""

from typing import Any, Optional


class WorkbenchError(ValueError):
    """Base class for all workbench failures."""


class NormalizationError(WorkbenchError):
    """A vector, state or grid is not normalized within tolerance."""


class DimensionMismatchError(WorkbenchError):
    """Operands of incompatible dimensions were combined."""


class NonHermitianError(WorkbenchError):
    """An operator expected to be Hermitian is not."""


class NumericGuardError(WorkbenchError):
    """A numerical invariant (imaginary residue, norm drift, finiteness) failed."""


class ConstraintViolation(WorkbenchError):
    """A hidden-variable response left the interval [-1, 1]."""

    def __init__(self, message: str, hidden_value: Any = None, response: Optional[float] = None):
        super().__init__(message)
        self.hidden_value = hidden_value
        self.response = response


class ConfigError(WorkbenchError):
    """An experiment configuration is malformed."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key
