"""
Soft-constraint PINN on a truncated annulus, kept as a comparator.

The network sees raw polar coordinates (r scaled to [-1, 1], theta) and
its output is the field itself. Boundary and far-field behaviour enter
only through penalty terms:

    lambda_pde MSE(Laplace u + k^2 u) + lambda_bc MSE(u - g_D on Gamma)
        + lambda_rad MSE(u_r - i k u + u / (2 r) on Gamma_out)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from diff_engine import jet_eval, mean_squared_modulus
from errors import ConfigError, MapwaveError
from geometry import BoundaryData
from training import SampleSet, TrainSchedule, TrainState, latin_hypercube, run_adam, run_lbfgs


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SoftLossSpec:
    lambda_pde: float = 1.0
    lambda_bc: float = 1.0
    lambda_rad: float = 1.0
    r_out: float = 6.0
    interior_points: int = 4000
    boundary_points: int = 400

    def validate(self, r_b: float) -> None:
        for name in ("lambda_pde", "lambda_bc", "lambda_rad"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"baseline.{name} must be >= 0")
        if not self.r_out > r_b:
            raise ConfigError(f"baseline.r_out must exceed the boundary radius {r_b}")
        if self.interior_points < 1 or self.boundary_points < 1:
            raise ConfigError("baseline point counts must be >= 1")


class BaselineField(nn.Module):
    """u(r, theta) = scale * N(rho, theta) with rho the radius mapped to [-1, 1]."""

    def __init__(self, net: nn.Module, r_b: float, r_out: float, scale: float = 1.0):
        super().__init__()
        self.net = net
        self.r_b = float(r_b)
        self.r_out = float(r_out)
        self.scale = float(scale)

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        rho = 2.0 * (points[:, 0] - self.r_b) / (self.r_out - self.r_b) - 1.0
        return self.scale * self.net(torch.stack([rho, points[:, 1]], dim=-1))


@dataclass(frozen=True)
class BaselineSamples:
    interior: torch.Tensor
    boundary: torch.Tensor
    outer: torch.Tensor


def baseline_samples(spec: SoftLossSpec, r_b: float, seed: int) -> BaselineSamples:
    interior: SampleSet = latin_hypercube(spec.interior_points, [(r_b, spec.r_out), (0.0, 2.0 * math.pi)], seed)
    theta = 2.0 * math.pi * np.arange(spec.boundary_points) / spec.boundary_points
    boundary = np.stack([np.full_like(theta, r_b), theta], -1)
    outer = np.stack([np.full_like(theta, spec.r_out), theta], -1)
    return BaselineSamples(
        interior=interior.tensor(),
        boundary=torch.as_tensor(boundary, dtype=torch.float64),
        outer=torch.as_tensor(outer, dtype=torch.float64),
    )


def soft_loss(
    field: nn.Module, samples: BaselineSamples, spec: SoftLossSpec, k: float, boundary: BoundaryData
) -> torch.Tensor:
    total = torch.zeros((), dtype=torch.float64)
    if spec.lambda_pde:
        jet = jet_eval(field, samples.interior, create_graph=True)
        r = samples.interior[:, 0]
        pde = jet.hess[:, 0, 0] + jet.grad[:, 0] / r + jet.hess[:, 1, 1] / r**2 + k * k * jet.value
        total = total + spec.lambda_pde * mean_squared_modulus(pde)
    if spec.lambda_bc:
        target = boundary(samples.boundary[:, 1])
        total = total + spec.lambda_bc * mean_squared_modulus(field(samples.boundary) - target)
    if spec.lambda_rad:
        jet = jet_eval(field, samples.outer, create_graph=True)
        r = samples.outer[:, 0]
        absorbing = jet.grad[:, 0] - 1j * k * jet.value + jet.value / (2.0 * r)
        total = total + spec.lambda_rad * mean_squared_modulus(absorbing)
    return total


@dataclass
class BaselineOutcome:
    field: BaselineField
    state: TrainState
    failure: str = ""

    @property
    def diverged(self) -> bool:
        return bool(self.failure)


def build_baseline_field(net: nn.Module, spec: SoftLossSpec, boundary: BoundaryData, r_b: float) -> BaselineField:
    """Wrap ``net`` with the output scale max |g_D| sampled around the boundary."""
    samples = boundary(torch.linspace(0.0, 2.0 * math.pi, 64, dtype=torch.float64))
    scale = float(torch.max(torch.abs(samples))) or 1.0
    return BaselineField(net, r_b, spec.r_out, scale)


def run_baseline(
    net: nn.Module,
    spec: SoftLossSpec,
    schedule: TrainSchedule,
    k: float,
    boundary: BoundaryData,
    r_b: float,
    seed: int,
) -> BaselineOutcome:
    """Train the soft-constraint field with the shared optimizer stack."""
    spec.validate(r_b)
    field = build_baseline_field(net, spec, boundary, r_b)
    samples = baseline_samples(spec, r_b, seed)
    state = TrainState(field, lambda: soft_loss(field, samples, spec, k, boundary))
    try:
        run_adam(schedule, state)
        run_lbfgs(schedule, state)
    except MapwaveError as exc:
        logger.warning("baseline training failed: %s", exc)
        return BaselineOutcome(field, state, failure=str(exc))
    return BaselineOutcome(field, state)
