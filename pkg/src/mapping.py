"""
Algebraic compactification between xi in [-1, 1) and radius r in [r_b, inf).

    r = r_b(angles) + L (1 + xi) / (1 - xi)

Every function accepts NumPy arrays or torch tensors and returns the same
kind, so the same map drives grid generation and the differentiable field.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch

from errors import DomainError


XI_CEILING = 0.999


def _is_torch(value) -> bool:
    return isinstance(value, torch.Tensor)


def _any(mask) -> bool:
    if _is_torch(mask):
        return bool(torch.any(mask))
    return bool(np.any(mask))


@dataclass(frozen=True)
class MapSpec:
    r_in: float
    scale: float
    boundary_offset: Optional[Callable] = None

    def __post_init__(self):
        if not self.scale > 0.0:
            raise DomainError(f"scaling parameter L must be > 0, got {self.scale}")
        if not self.r_in > 0.0:
            raise DomainError(f"reference radius R_in must be > 0, got {self.r_in}")

    @property
    def angle_dependent(self) -> bool:
        return self.boundary_offset is not None

    def boundary_radius(self, *angles):
        if self.boundary_offset is None or not angles:
            if angles and (_is_torch(angles[0]) or np.ndim(angles[0]) > 0):
                base = angles[0]
                return base * 0.0 + self.r_in
            return self.r_in
        return self.boundary_offset(*angles)


def _check_xi(xi) -> None:
    if _any(xi >= 1.0) or _any(xi < -1.0):
        raise DomainError("xi must satisfy -1 <= xi < 1 (xi = 1 maps to infinity)")


def forward_map(spec: MapSpec, xi, *angles):
    _check_xi(xi)
    return spec.boundary_radius(*angles) + spec.scale * (1.0 + xi) / (1.0 - xi)


def inverse_map(spec: MapSpec, r, *angles):
    r_b = spec.boundary_radius(*angles)
    offset = r - r_b
    # Tolerate rounding on the boundary itself.
    if _any(offset < -1e-12 * (1.0 + abs(spec.r_in))):
        raise DomainError("radius lies inside the boundary (r < r_b)")
    return (offset - spec.scale) / (offset + spec.scale)


def jacobian(spec: MapSpec, xi):
    """Return (J, J') with J = dr/dxi."""
    _check_xi(xi)
    one_minus = 1.0 - xi
    return 2.0 * spec.scale / one_minus**2, 4.0 * spec.scale / one_minus**3


def _boundary_radius_gradient(spec: MapSpec, angles) -> list:
    tensors = [torch.as_tensor(a, dtype=torch.float64).detach().clone().requires_grad_(True) for a in angles]
    r_b = spec.boundary_radius(*tensors)
    if not _is_torch(r_b) or not r_b.requires_grad:
        return [torch.zeros_like(t) for t in tensors]
    grads = torch.autograd.grad(r_b.sum(), tensors, allow_unused=True)
    return [torch.zeros_like(t) if g is None else g for g, t in zip(grads, tensors)]


def map_partials(spec: MapSpec, xi, *angles) -> tuple:
    """Partials of xi(r, angles): (dxi/dr, dxi/dtheta[, dxi/dphi]) at fixed r."""
    J, _ = jacobian(spec, xi)
    inv_j = 1.0 / J
    if not spec.angle_dependent:
        zeros = [inv_j * 0.0 for _ in angles]
        return (inv_j, *zeros)
    grads = _boundary_radius_gradient(spec, angles)
    if not _is_torch(xi):
        grads = [g.numpy() for g in grads]
    return (inv_j, *[-g * inv_j for g in grads])
