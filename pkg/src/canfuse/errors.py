"""Exception types shared across the package."""

from __future__ import annotations


class CanfuseError(Exception):
    """Base class for all package-specific errors."""


class ParseError(CanfuseError):
    """A log row could not be parsed; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class OrderingError(ParseError):
    """Timestamps in a log file went backwards."""


class ConfigError(CanfuseError):
    """Invalid configuration value or combination."""


class AlignmentError(CanfuseError):
    """Row counts of inputs that must be frame-aligned disagree."""


class DivergenceError(CanfuseError):
    """Training produced a non-finite loss; carries the epoch it happened in."""

    def __init__(self, epoch: int, message: str = ""):
        detail = message or "non-finite training loss"
        super().__init__(f"epoch {epoch}: {detail}")
        self.epoch = epoch


class ValidationError(CanfuseError):
    """CLI-level validation failure (bad flag value, missing artifact, ...)."""
