"""
Exception types raised by the Theseus toolkit.

Every error derives from TheseusError and from the closest built-in
exception, so callers may catch either.
"""

from typing import Any, Optional


class TheseusError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(TheseusError, ValueError):
    """Operand shapes violate an operation's contract."""

    def __init__(self, op: str, *shapes: Any, detail: str = ""):
        self.op = op
        self.shapes = shapes
        shape_text = ", ".join(str(list(s)) for s in shapes)
        message = f"{op}: incompatible shapes {shape_text}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class NumericError(TheseusError, ArithmeticError):
    """A non-finite value appeared where finite values are required."""

    def __init__(self, message: str, last_good: Optional[Any] = None):
        super().__init__(message)
        self.last_good = last_good


class TapeError(TheseusError, RuntimeError):
    """Backward was requested for a tensor the tape did not produce."""


class IndexRangeError(TheseusError, IndexError):
    """A label or token id lies outside its valid range."""


class ParameterError(TheseusError, ValueError):
    """A scalar argument is outside its valid range."""


class CompressionMapError(TheseusError, ValueError):
    """A compression map does not partition the predecessor layers."""


class ConfigError(TheseusError, ValueError):
    """A model, training or run configuration is invalid."""


class DataError(TheseusError, ValueError):
    """A split or input file holds no usable examples."""


class FormatError(TheseusError, ValueError):
    """An input file does not follow its expected layout."""


class OptimizerStateError(TheseusError, RuntimeError):
    """The optimizer was asked to update a parameter with no gradient."""
