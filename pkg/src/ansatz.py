"""
Hard-constraint field constructions.

Every field here is an ``nn.Module`` over computational coordinates
(xi, theta[, phi]) wrapping an ``EnvelopeNet``. Boundary and radiation
conditions hold for any network parameters:

    Dirichlet:  u = Phi(r) [A(angles) + (1 + xi) N],  A = g_D / Phi(r_b)
    Neumann:    u = Phi(r) E,  E = N - d (dN/dn - h),  h = (g_N - N dPhi/dn) / Phi

where Phi is the outgoing asymptotic factor e^{i phase(r)} / r^{(dim-1)/2}.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch import nn

from diff_engine import Jet, jet_eval
from errors import DomainError
from geometry import BoundaryData, GeometrySpec
from mapping import MapSpec, forward_map, jacobian


logger = logging.getLogger(__name__)

ANSATZ_KINDS = ("dirichlet_radial", "neumann_shielded", "wkb_radial")


def _xp(value):
    return torch if isinstance(value, torch.Tensor) else np


@dataclass(frozen=True)
class WavenumberModel:
    """k(r) = k_inf (1 + alpha e^{-(r - r0)/decay}); alpha = 0 is a constant k."""

    k_inf: float
    alpha: float = 0.0
    decay: float = 1.0
    r0: float = 1.0

    def __post_init__(self):
        if not self.k_inf > 0.0:
            raise DomainError(f"wavenumber must be > 0, got {self.k_inf}")
        if self.alpha < 0.0:
            raise DomainError(f"perturbation alpha must be >= 0, got {self.alpha}")
        if not self.decay > 0.0:
            raise DomainError(f"decay length must be > 0, got {self.decay}")

    @property
    def is_constant(self) -> bool:
        return self.alpha == 0.0

    def k(self, r):
        if self.is_constant:
            return r * 0.0 + self.k_inf
        xp = _xp(r)
        return self.k_inf * (1.0 + self.alpha * xp.exp(-(r - self.r0) / self.decay))

    def phase(self, r):
        """Integral of k from r0 to r."""
        if self.is_constant:
            return self.k_inf * (r - self.r0)
        xp = _xp(r)
        return self.k_inf * (r - self.r0) + self.k_inf * self.alpha * self.decay * (
            1.0 - xp.exp(-(r - self.r0) / self.decay)
        )


@dataclass(frozen=True)
class AsymptoticFactor:
    wavenumber: WavenumberModel
    dimension: int = 2
    r_ref: float = 1.0

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise DomainError(f"dimension must be 2 or 3, got {self.dimension}")

    @property
    def decay_power(self) -> float:
        return 0.5 * (self.dimension - 1)

    def phase(self, r, r_ref=None):
        r_ref = self.r_ref if r_ref is None else r_ref
        return self.wavenumber.phase(r) - self.wavenumber.phase(r_ref)

    def __call__(self, r, r_ref=None):
        phase = self.phase(r, r_ref)
        modulus = r ** (-self.decay_power)
        if isinstance(r, torch.Tensor):
            return torch.complex(modulus * torch.cos(phase), modulus * torch.sin(phase))
        return modulus * np.exp(1j * phase)

    def radial_derivative(self, r, r_ref=None):
        """dPhi/dr = (i k(r) - m / r) Phi."""
        return (1j * self.wavenumber.k(r) - self.decay_power / r) * self(r, r_ref)


def phi_factor(factor: AsymptoticFactor, r, r_ref: Optional[float] = None) -> Jet:
    """Factor value with exact first and second r-derivatives."""
    r = torch.as_tensor(r, dtype=torch.float64).reshape(-1)
    floor = factor.r_ref if r_ref is None else r_ref
    if bool(torch.any(r <= 0.0)) or bool(torch.any(r < floor - 1e-12)):
        raise DomainError("factor is evaluated at radii below its reference radius")
    return jet_eval(lambda x: factor(x[:, 0], r_ref), r[:, None])


def _split(points: torch.Tensor):
    return points[:, 0], [points[:, i] for i in range(1, points.shape[1])]


class DirichletRadialField(nn.Module):
    """Phi(r) [A + (1 + xi) N]; also serves the WKB factor for variable k."""

    def __init__(self, net: nn.Module, factor: AsymptoticFactor, map_spec: MapSpec, boundary: BoundaryData):
        super().__init__()
        if boundary.kind != "dirichlet":
            raise DomainError("radial Dirichlet ansatz needs Dirichlet boundary data")
        self.net = net
        self.factor = factor
        self.map_spec = map_spec
        self.boundary = boundary

    def boundary_coefficient(self, angles) -> torch.Tensor:
        r_b = self.map_spec.boundary_radius(*angles)
        return self.boundary(*angles) / self.factor(r_b, r_b)

    def carrier(self, points: torch.Tensor) -> torch.Tensor:
        xi, angles = _split(points)
        r = forward_map(self.map_spec, xi, *angles)
        return self.factor(r, self.map_spec.boundary_radius(*angles))

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        xi, angles = _split(points)
        r_b = self.map_spec.boundary_radius(*angles)
        r = forward_map(self.map_spec, xi, *angles)
        bracket = self.boundary_coefficient(angles) + (1.0 + xi) * self.net(points)
        return self.factor(r, r_b) * bracket


class NeumannShieldedField(nn.Module):
    """Phi E with the first-order shielded envelope on a circle or sphere of radius a."""

    def __init__(
        self,
        net: nn.Module,
        factor: AsymptoticFactor,
        map_spec: MapSpec,
        boundary: BoundaryData,
        geometry: GeometrySpec,
    ):
        super().__init__()
        if boundary.kind != "neumann":
            raise DomainError("shielded envelope needs Neumann boundary data")
        if not geometry.has_normal_consistency:
            raise DomainError(f"{geometry.kind} has no consistent normal for Neumann data")
        if not geometry.is_circular or map_spec.angle_dependent:
            raise DomainError("Neumann shielded envelope is implemented for circular boundaries")
        self.net = net
        self.factor = factor
        self.map_spec = map_spec
        self.boundary = boundary
        self.radius = float(geometry.params["radius"])

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        with torch.enable_grad():
            if not points.requires_grad:
                points = points.detach().clone().requires_grad_(True)
            xi, angles = _split(points)
            r = forward_map(self.map_spec, xi, *angles)
            jac, _ = jacobian(self.map_spec, xi)
            raw = self.net(points)
            (d_re,) = torch.autograd.grad(raw.real.sum(), points, create_graph=True)
            (d_im,) = torch.autograd.grad(raw.imag.sum(), points, create_graph=True)
            # grad(d) is the radial unit vector, so grad(N).grad(d) = N_xi / J.
            raw_r = torch.complex(d_re[:, 0], d_im[:, 0]) / jac
            phi = self.factor(r, self.radius)
            phi_r = self.factor.radial_derivative(r, self.radius)
            target = (self.boundary(*angles) - raw * phi_r) / phi
            distance = r - self.radius
            envelope = raw - distance * (raw_r - target)
            return phi * envelope


@dataclass(frozen=True)
class AnsatzSpec:
    kind: str
    geometry: GeometrySpec
    boundary: BoundaryData
    map_spec: MapSpec
    factor: AsymptoticFactor

    def __post_init__(self):
        if self.kind not in ANSATZ_KINDS:
            raise DomainError(f"Unknown ansatz kind: {self.kind}")
        expected = "neumann" if self.kind == "neumann_shielded" else "dirichlet"
        if self.boundary.kind != expected:
            raise DomainError(f"{self.kind} ansatz needs {expected} boundary data")
        if self.kind == "wkb_radial" and self.factor.dimension != 2:
            raise DomainError("WKB factor is defined for 2D radial problems")

    def build(self, net: nn.Module) -> nn.Module:
        if self.kind == "neumann_shielded":
            return NeumannShieldedField(net, self.factor, self.map_spec, self.boundary, self.geometry)
        return DirichletRadialField(net, self.factor, self.map_spec, self.boundary)


def dirichlet_field(spec: AnsatzSpec, net: nn.Module, points, *, create_graph: bool = False) -> Jet:
    if spec.kind == "neumann_shielded":
        raise DomainError("dirichlet_field called with a Neumann ansatz")
    return jet_eval(spec.build(net), points, create_graph=create_graph)


def neumann_field(spec: AnsatzSpec, net: nn.Module, points, *, create_graph: bool = False) -> Jet:
    if spec.kind != "neumann_shielded":
        raise DomainError("neumann_field called with a Dirichlet ansatz")
    return jet_eval(spec.build(net), points, create_graph=create_graph)


def sommerfeld_defect(field: nn.Module, k_inf: float, points, map_spec: MapSpec, dimension: int = 2) -> np.ndarray:
    """r^{(d-1)/2} |du/dr - i k u| at computational points, one value per point."""
    points = torch.as_tensor(points, dtype=torch.float64)
    jet = jet_eval(field, points)
    xi, angles = _split(points)
    r = forward_map(map_spec, xi, *angles)
    jac, _ = jacobian(map_spec, xi)
    radial = jet.grad[:, 0] / jac
    defect = r ** (0.5 * (dimension - 1)) * torch.abs(radial - 1j * k_inf * jet.value)
    return defect.detach().numpy()
