"""
Exception types shared across mapwave modules.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical failures exit with 3.
"""

from __future__ import annotations

from typing import Sequence


class MapwaveError(Exception):
    """Base class for all mapwave errors."""

    exit_code = 3


class DomainError(MapwaveError, ValueError):
    """An argument lies outside the domain of a function or map."""


class ConfigError(MapwaveError):
    exit_code = 2


class CheckpointError(MapwaveError):
    exit_code = 2


class OracleUnavailableError(MapwaveError):
    exit_code = 2

    def __init__(self, requested: str, available: Sequence[str]):
        self.requested = requested
        self.available = list(available)
        super().__init__(
            f"No oracle '{requested}' for this geometry; available: {', '.join(self.available) or 'none'}"
        )


class OracleAccuracyError(MapwaveError):
    def __init__(self, message: str, boundary_residual: float):
        self.boundary_residual = boundary_residual
        super().__init__(message)


class ConvergenceError(MapwaveError):
    def __init__(self, message: str, *, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")


class NonFiniteLossError(MapwaveError):
    def __init__(self, index: int, value: float | complex | None = None):
        self.index = index
        self.value = value
        super().__init__(f"Non-finite residual at collocation point {index}: {value}")


class TrainingDivergedError(MapwaveError):
    def __init__(self, stage: str, iteration: int, loss: float, history: list):
        self.stage = stage
        self.iteration = iteration
        self.loss = loss
        self.history = history
        super().__init__(f"{stage} diverged at iteration {iteration} (loss={loss:.3e})")
