"""Shared error types.

Module-specific errors live next to the code that raises them; this module
only holds the bases that cut across modules and the CLI exit-code mapping.
"""

from __future__ import annotations


class SimulationError(Exception):
    """Base for all errors raised by this package."""


class ParseError(SimulationError):
    """A data file or scenario line could not be parsed.

    Carries the 1-based line number of the offending line.
    """

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InvariantViolation(SimulationError):
    """A domain-type invariant would be broken by the attempted operation."""
