"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class HiddenOdeError(Exception):
    """Base class for all errors raised by hidden_ode."""


class ConfigurationError(HiddenOdeError, ValueError):
    """Inconsistent dimensions, unknown names or invalid settings."""


class NumericalError(HiddenOdeError, ArithmeticError):
    """A computation produced non-finite values.

    Attributes:
        component: index of the offending vector component, when known.
        step_index: filter step at which the failure happened, when known.
    """

    def __init__(self, message: str, *, component: int | None = None,
                 step_index: int | None = None):
        self.component = component
        self.step_index = step_index
        details = []
        if component is not None:
            details.append(f"component {component}")
        if step_index is not None:
            details.append(f"step {step_index}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)


class CovarianceDegeneracyError(NumericalError):
    """A matrix that must be symmetric positive definite failed Cholesky."""


class DivergenceError(NumericalError):
    """A rollout left the finite range; ``partial`` holds the states so far."""

    def __init__(self, message: str, partial, *, step_index: int | None = None,
                 component: int | None = None):
        self.partial = partial
        super().__init__(message, component=component, step_index=step_index)


class DatasetFormatError(HiddenOdeError, ValueError):
    """Malformed dataset CSV. ``line`` is 1-based."""

    def __init__(self, message: str, *, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CheckpointFormatError(HiddenOdeError, ValueError):
    """Malformed checkpoint or weight payload. ``position`` is a character offset."""

    def __init__(self, message: str, *, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (at char {position})"
        super().__init__(message)
