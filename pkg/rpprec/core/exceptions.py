"""Exception hierarchy shared by every rpprec module."""

from __future__ import annotations

from typing import Optional


class RPPError(Exception):
    """Base class for all rpprec failures."""


class IngestionError(RPPError, ValueError):
    """Raised when an input file or row cannot be ingested."""

    def __init__(self, message: str, *, row: Optional[int] = None, path: Optional[str] = None):
        self.row = row
        self.path = path
        prefix = []
        if path:
            prefix.append(str(path))
        if row is not None:
            prefix.append(f"row {row}")
        super().__init__(f"{': '.join(prefix)}: {message}" if prefix else message)


class ValidationError(RPPError, ValueError):
    """Raised when a domain value violates its invariants."""

    def __init__(self, message: str, *, pattern: Optional[str] = None):
        self.pattern = pattern
        super().__init__(f"{pattern}: {message}" if pattern else message)


class ConfigError(RPPError, ValueError):
    """Raised for unusable configuration (maps to CLI exit code 2)."""


class EnvironmentFailure(RPPError, RuntimeError):
    """Hard failure of an LLM backend after retries are exhausted."""


class CheckpointError(RPPError, ValueError):
    """Raised for corrupt, truncated or incompatible checkpoints."""


class NumericalError(RPPError, ArithmeticError):
    """Raised when a forward pass produces non-finite activations."""

    def __init__(self, message: str, *, layer: Optional[int] = None):
        self.layer = layer
        super().__init__(f"layer {layer}: {message}" if layer is not None else message)


class TapeError(RPPError, RuntimeError):
    """Raised when a backward pass has no matching forward tape."""
