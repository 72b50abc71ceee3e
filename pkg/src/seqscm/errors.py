"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`SeqScmError`.
The CLI maps the three families below to exit codes: validation problems (2),
scorer/backend failures (3), everything else counts as a usage or runtime error.
"""

from __future__ import annotations


class SeqScmError(Exception):
    """Base class for all package errors."""


# --- validation family ------------------------------------------------------


class ValidationError(SeqScmError):
    """Input model, spec document or dataset violates a stated invariant."""


class SpecSyntaxError(ValidationError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class SpecSchemaError(ValidationError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class SpecSemanticError(ValidationError):
    pass


class CycleError(ValidationError):
    def __init__(self, components: list[list[str]]):
        self.components = components
        names = "; ".join("{" + ", ".join(c) + "}" for c in components)
        super().__init__(f"graph contains a cycle through {names}")


class UnknownNodeError(ValidationError, KeyError):
    def __str__(self) -> str:  # KeyError would repr() the message
        return str(self.args[0]) if self.args else ""


class InsufficientVariationsError(ValidationError):
    pass


class VariationMismatchError(ValidationError):
    pass


class MissingParentError(SeqScmError):
    pass


class StateSpaceTooLargeError(SeqScmError):
    pass


# --- scorer family ----------------------------------------------------------


class ScorerError(SeqScmError):
    """A scorer backend failed; sampling runs should abort."""

    def __init__(self, message: str, variable: str | None = None):
        self.variable = variable
        super().__init__(message if variable is None else f"[{variable}] {message}")


class RemoteUnreachableError(ScorerError):
    pass


class RemoteProtocolError(ScorerError):
    pass


class AllZeroWeightError(ScorerError):
    pass


# --- estimation / metrics ---------------------------------------------------


class EstimationError(SeqScmError):
    pass


class SingleArmError(EstimationError):
    pass


class EmptyArmError(EstimationError):
    pass


class MetricError(SeqScmError):
    pass


class LengthMismatchError(MetricError, ValueError):
    pass


class ZeroDenominatorError(MetricError, ZeroDivisionError):
    pass


class ZeroVarianceError(MetricError):
    pass


class TooFewUnitsError(MetricError):
    pass


class LogOfZeroError(SeqScmError, ValueError):
    pass
