"""Exception types shared across the package."""

from __future__ import annotations


class LdpflError(Exception):
    """Base class for all package errors."""


class DomainError(LdpflError, ValueError):
    """An argument lies outside the domain where the operation is defined."""


class ConfigError(LdpflError, ValueError):
    """Invalid or inconsistent experiment configuration."""


class ParseError(LdpflError, ValueError):
    """Malformed dataset input.  ``line`` is 1-based, or None for whole-input errors."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        self.reason = message
        super().__init__(f"line {line}: {message}" if line is not None else message)


class InsufficientDataError(LdpflError, ValueError):
    pass


class DivergenceError(LdpflError, ArithmeticError):
    """Iterates blew up (non-finite or norm above the guard threshold)."""

    def __init__(self, message: str, round: int):
        self.round = round
        super().__init__(f"round {round}: {message}")


class ConvergenceError(LdpflError, RuntimeError):
    """Iterative solver hit its iteration cap; the best iterate is attached."""

    def __init__(self, message: str, best=None):
        self.best = best
        super().__init__(message)
