"""Exception hierarchy shared across the package."""

from __future__ import annotations

from typing import Any


class ExoPPOError(Exception):
    """Base class for every error raised by exoppo."""


class ConfigurationError(ExoPPOError):
    """Invalid configuration, network shape or incompatible components."""


class InputError(ExoPPOError, ValueError):
    """A caller passed a value outside an operation's domain."""


class TrainingError(ExoPPOError):
    """Numerical failure during optimisation.

    ``payload`` carries diagnostics (step counter, offending magnitudes, ...).
    """

    def __init__(self, message: str, **payload: Any) -> None:
        super().__init__(message)
        self.payload = payload

    def __str__(self) -> str:
        base = super().__str__()
        if not self.payload:
            return base
        details = ", ".join(f"{k}={v!r}" for k, v in self.payload.items())
        return f"{base} ({details})"


class FileFormatError(ExoPPOError):
    """A checkpoint or dataset file is malformed or has the wrong magic."""
