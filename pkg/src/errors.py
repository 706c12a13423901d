"""
File: src/errors.py
Task: Tool-friendly exception hierarchy. Every error carries a JSON-able
`payload` so pipeline nodes can store it in state and routers can divert
the run to the report node instead of crashing.
"""

from __future__ import annotations

from typing import Any, Dict, Optional


class WorkbenchError(Exception):
    def __init__(self, message: str, payload: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.payload = payload or {}

    def to_dict(self) -> Dict[str, Any]:
        return {"message": str(self), "payload": self.payload, "kind": type(self).__name__}


class ConfigError(WorkbenchError):
    """Config failed validation; payload["errors"] lists every violation."""


class MissingArtifactError(WorkbenchError):
    """An upstream stage output is absent; payload["expected_path"] names it."""


class NonFiniteInputError(WorkbenchError):
    pass


class DivergenceError(WorkbenchError):
    pass


class TrainingAbortedError(WorkbenchError):
    """Raised by training loops; payload carries diagnostics and the last-good update index."""


class AcceptanceError(WorkbenchError):
    pass


class CoverageError(WorkbenchError):
    """Recorded excitation misses part of the state space; payload["coverage"] maps joint -> covered."""
