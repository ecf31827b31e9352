# planemorph/common/exceptions.py
"""
Exceptions module for planemorph.

This module provides the custom exception hierarchy shared by every planemorph
subpackage. I/O codecs define their own subclasses next to the codec
(see ``planemorph.io.mvol`` and ``planemorph.io.checkpoint``).
"""

from typing import Any, Dict, Optional, Sequence


class LibraryError(Exception):
    """Base exception class for all planemorph errors."""
    pass


class ConfigurationError(LibraryError):
    """Raised when a configuration document is invalid.

    Attributes:
        message (str): The error message.
        key_path (Optional[str]): Dotted path of the offending key
            (e.g. ``"model.variant"``), if known.
    """
    def __init__(self, message: str, key_path: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.key_path = key_path

    def __str__(self):
        parts = [self.message]
        if self.key_path:
            parts.append(f"Key: {self.key_path}")
        return " | ".join(parts)


class InvalidParameterError(LibraryError):
    """Raised when an operation's precondition is violated."""
    def __init__(self, message: str, parameter: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.parameter = parameter

    def __str__(self):
        parts = [self.message]
        if self.parameter:
            parts.append(f"Parameter: {self.parameter}")
        return " | ".join(parts)


class ShapeMismatchError(InvalidParameterError):
    """Raised when two grids that must agree in shape do not."""
    def __init__(self, message: str, expected: Optional[Sequence[int]] = None,
                 actual: Optional[Sequence[int]] = None, parameter: Optional[str] = None):
        super().__init__(message, parameter=parameter)
        self.expected = tuple(expected) if expected is not None else None
        self.actual = tuple(actual) if actual is not None else None

    def __str__(self):
        parts = [super().__str__()]
        if self.expected is not None:
            parts.append(f"Expected: {self.expected}")
        if self.actual is not None:
            parts.append(f"Actual: {self.actual}")
        return " | ".join(parts)


class LatticeDivisibilityError(ShapeMismatchError):
    """Raised when a token lattice cannot be split into the requested blocks."""
    pass


class DivergenceError(LibraryError):
    """Raised when training produces a non-finite loss.

    Attributes:
        epoch (Optional[int]): 1-based epoch index at failure.
        step (Optional[int]): 1-based global optimization step at failure.
        components (Dict[str, Any]): Loss components observed at failure.
    """
    def __init__(self, message: str, epoch: Optional[int] = None, step: Optional[int] = None,
                 components: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.epoch = epoch
        self.step = step
        self.components = dict(components or {})

    def __str__(self):
        parts = [self.message]
        if self.epoch is not None:
            parts.append(f"Epoch: {self.epoch}")
        if self.step is not None:
            parts.append(f"Step: {self.step}")
        if self.components:
            parts.append("Components: " + ", ".join(f"{k}={v}" for k, v in self.components.items()))
        return " | ".join(parts)
