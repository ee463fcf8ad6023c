"""Exception hierarchy shared by every gridevd module."""

from __future__ import annotations


class GridError(Exception):
    """Base class for all gridevd errors."""


class ParseError(GridError):
    """Malformed case-file or disturbance text."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(GridError):
    """A network or configuration violates a structural invariant."""


class ContractError(GridError):
    """A caller broke an operation precondition."""


class SingularMatrixError(GridError):
    """Elimination met a pivot below the singularity threshold."""

    def __init__(self, message: str, pivot: int | None = None):
        self.pivot = pivot
        super().__init__(message)


class DegenerateError(GridError):
    """No direction of improvement exists (zero matrix or zero eigenvalue)."""


class SaturationError(GridError):
    """A generator set-point would leave its voltage band."""


class DivergenceError(GridError):
    """An iterative solver exhausted its iteration budget."""

    def __init__(self, message: str, trace: list[float] | None = None):
        self.trace = list(trace or [])
        super().__init__(message)
