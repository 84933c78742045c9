"""
Collocation sampling, the residual-only loss and the two-stage optimizer.

Adam runs through ``torch.optim.Adam``. L-BFGS is a two-loop recursion on
the flat parameter vector with a strong-Wolfe step from
``scipy.optimize.line_search``; loss and gradient come from torch.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np
import torch
from scipy.optimize import line_search
from scipy.stats import qmc
from torch import nn

from diff_engine import flat_gradient, mean_squared_modulus
from errors import ConfigError, MapwaveError, TrainingDivergedError
from mapping import XI_CEILING
from residual import POLE_BAND, ResidualSpec


logger = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1e12
TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleSet:
    points: np.ndarray
    seed: int
    bounds: tuple = ()

    @property
    def count(self) -> int:
        return int(self.points.shape[0])

    def tensor(self) -> torch.Tensor:
        return torch.as_tensor(self.points, dtype=torch.float64)


def default_bounds(coords: int, dimension: int = 2) -> list[tuple[float, float]]:
    """(xi, theta[, phi]) sampling box; 3D polar angles stay out of the pole band."""
    bounds = [(-1.0, XI_CEILING)]
    if dimension == 2:
        bounds.append((0.0, TWO_PI))
    else:
        bounds.append((POLE_BAND, math.pi - POLE_BAND))
        if coords == 3:
            bounds.append((0.0, TWO_PI))
    return bounds


def latin_hypercube(count: int, bounds: Sequence[tuple[float, float]], seed: int) -> SampleSet:
    if count < 1:
        raise ConfigError(f"collocation count must be >= 1, got {count}")
    lower = np.array([lo for lo, _ in bounds], dtype=np.float64)
    upper = np.array([hi for _, hi in bounds], dtype=np.float64)
    sampler = qmc.LatinHypercube(d=len(bounds), seed=np.random.default_rng(seed))
    unit = sampler.random(n=count)
    points = qmc.scale(unit, lower, upper)
    return SampleSet(points=points, seed=int(seed), bounds=tuple(tuple(b) for b in bounds))


# ---------------------------------------------------------------------------
# Loss and schedule
# ---------------------------------------------------------------------------


def loss(field_module: nn.Module, samples: SampleSet, residual: ResidualSpec) -> torch.Tensor:
    """Mean |residual|^2 over the collocation set, kept on the autograd graph."""
    values = residual.evaluate(field_module, samples.tensor(), create_graph=True)
    return mean_squared_modulus(values)


@dataclass(frozen=True)
class TrainSchedule:
    adam_iters: int = 2000
    adam_lr: float = 1e-3
    lbfgs_max_iters: int = 3000
    lbfgs_memory: int = 50
    c1: float = 1e-4
    c2: float = 0.9
    grad_tol: float = 1e-9
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.adam_iters < 0 or self.lbfgs_max_iters < 0:
            raise ConfigError("iteration budgets must be >= 0")
        if not self.adam_lr > 0.0:
            raise ConfigError(f"adam_lr must be > 0, got {self.adam_lr}")
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ConfigError(f"Wolfe constants need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")
        if self.lbfgs_memory < 1:
            raise ConfigError(f"lbfgs_memory must be >= 1, got {self.lbfgs_memory}")
        if not self.grad_tol >= 0.0:
            raise ConfigError("grad_tol must be >= 0")


class HistoryRow(NamedTuple):
    iteration: int
    stage: str
    loss: float


@dataclass
class TrainState:
    """Module under training plus a closure returning its scalar loss tensor."""

    module: nn.Module
    objective: Callable[[], torch.Tensor]
    history: list = field(default_factory=list)
    adam_iters: int = 0
    lbfgs_iters: int = 0
    stop_reason: str = ""
    memory: "CurvatureMemory | None" = None

    def parameters(self) -> list[torch.Tensor]:
        return [p for p in self.module.parameters() if p.requires_grad]

    def record(self, stage: str, iteration: int, value: float) -> None:
        self.history.append(HistoryRow(iteration, stage, float(value)))

    @property
    def final_loss(self) -> float:
        return self.history[-1].loss if self.history else float("nan")


def _check_divergence(state: TrainState, stage: str, iteration: int, value: float) -> None:
    if not math.isfinite(value) or value > DIVERGENCE_THRESHOLD:
        raise TrainingDivergedError(stage, iteration, value, list(state.history))


def run_adam(schedule: TrainSchedule, state: TrainState) -> TrainState:
    parameters = state.parameters()
    optimizer = torch.optim.Adam(parameters, lr=schedule.adam_lr, betas=(0.9, 0.999), eps=1e-8)
    for iteration in range(schedule.adam_iters):
        optimizer.zero_grad(set_to_none=False)
        value = state.objective()
        loss_value = float(value.detach())
        _check_divergence(state, "adam", iteration, loss_value)
        state.record("adam", iteration, loss_value)
        if schedule.log_every and iteration % schedule.log_every == 0:
            logger.info("adam iter %d loss %.6e", iteration, loss_value)
        value.backward()
        optimizer.step()
        state.adam_iters = iteration + 1
    if state.history:
        logger.info("adam finished after %d iterations, loss %.6e", state.adam_iters, state.final_loss)
    return state


# ---------------------------------------------------------------------------
# L-BFGS
# ---------------------------------------------------------------------------


class CurvatureMemory:
    """Most recent (s, y) pairs and the two-loop inverse-Hessian action."""

    def __init__(self, memory: int):
        self._pairs: deque = deque(maxlen=memory)

    def __len__(self) -> int:
        return len(self._pairs)

    @property
    def pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(s, y) for _, s, y in self._pairs]

    def append(self, s: np.ndarray, y: np.ndarray) -> bool:
        s_dot_y = float(s @ y)
        if not s_dot_y > 0.0:
            return False
        self._pairs.append((1.0 / s_dot_y, s.copy(), y.copy()))
        return True

    def inverse_action(self, vector: np.ndarray, scale: float) -> np.ndarray:
        q = vector.copy()
        alphas = []
        for rho, s, y in reversed(self._pairs):
            alpha = rho * float(s @ q)
            q -= alpha * y
            alphas.append(alpha)
        alphas.reverse()
        r = q * scale
        for (rho, s, y), alpha in zip(self._pairs, alphas):
            beta = rho * float(y @ r)
            r += (alpha - beta) * s
        return r


class _FlatObjective:
    """Loss and gradient at a flat parameter vector, cached on the last point."""

    def __init__(self, state: TrainState):
        self.state = state
        self.parameters = state.parameters()
        self._key: bytes | None = None
        self._value = 0.0
        self._grad = np.zeros(0)
        self.evaluations = 0

    def current(self) -> np.ndarray:
        return nn.utils.parameters_to_vector(self.parameters).detach().cpu().numpy().copy()

    def assign(self, x: np.ndarray) -> None:
        with torch.no_grad():
            nn.utils.vector_to_parameters(torch.as_tensor(x, dtype=torch.float64), self.parameters)

    def _evaluate(self, x: np.ndarray) -> None:
        key = x.tobytes()
        if key == self._key:
            return
        self.assign(x)
        value = self.state.objective()
        grad = flat_gradient(value, self.parameters)
        self._key = key
        self._value = float(value.detach())
        self._grad = grad.detach().cpu().numpy().astype(np.float64)
        self.evaluations += 1

    def value(self, x: np.ndarray) -> float:
        self._evaluate(x)
        return self._value

    def gradient(self, x: np.ndarray) -> np.ndarray:
        self._evaluate(x)
        return self._grad.copy()


def run_lbfgs(schedule: TrainSchedule, state: TrainState) -> TrainState:
    objective = _FlatObjective(state)
    x = objective.current()
    f = objective.value(x)
    g = objective.gradient(x)
    memory = CurvatureMemory(schedule.lbfgs_memory)
    state.memory = memory
    scale = 1.0 / max(float(np.linalg.norm(g)), 1e-300)
    state.stop_reason = "max_iters"
    state.record("lbfgs", 0, f)

    for iteration in range(1, schedule.lbfgs_max_iters + 1):
        if float(np.max(np.abs(g), initial=0.0)) <= schedule.grad_tol:
            state.stop_reason = "grad_tol"
            break
        direction = -memory.inverse_action(g, scale)
        if not float(direction @ g) < 0.0:
            direction = -g * scale
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                alpha, _, _, new_f, _, _ = line_search(
                    objective.value,
                    objective.gradient,
                    x,
                    direction,
                    gfk=g,
                    old_fval=f,
                    c1=schedule.c1,
                    c2=schedule.c2,
                    maxiter=25,
                )
        except MapwaveError as exc:
            logger.info("lbfgs trial step failed at iteration %d: %s", iteration, exc)
            alpha, new_f = None, None
        if alpha is None or new_f is None or not math.isfinite(new_f) or new_f > f:
            state.stop_reason = "line_search"
            logger.info("lbfgs line search failed at iteration %d; keeping best iterate", iteration)
            break
        step = alpha * direction
        x_new = x + step
        g_new = objective.gradient(x_new)
        change = g_new - g
        if memory.append(step, change):
            scale = float(step @ change) / float(change @ change)
        f, x, g = float(new_f), x_new, g_new
        state.lbfgs_iters = iteration
        state.record("lbfgs", iteration, f)
        if schedule.log_every and iteration % schedule.log_every == 0:
            logger.info("lbfgs iter %d loss %.6e", iteration, f)

    objective.assign(x)
    logger.info(
        "lbfgs stopped (%s) after %d iterations, loss %.6e", state.stop_reason, state.lbfgs_iters, f
    )
    return state


def train(schedule: TrainSchedule, state: TrainState) -> TrainState:
    run_adam(schedule, state)
    return run_lbfgs(schedule, state)


def write_loss_history(path: Path, history: Sequence[HistoryRow]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "stage", "loss"])
        for row in history:
            writer.writerow([row.iteration, row.stage, repr(float(row.loss))])
    return path


def read_loss_history(path: Path) -> list[HistoryRow]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        try:
            return [HistoryRow(int(row["iteration"]), row["stage"], float(row["loss"])) for row in reader]
        except (KeyError, ValueError) as exc:
            raise MapwaveError(f"Malformed loss history: {path}") from exc
