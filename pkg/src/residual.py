"""
Helmholtz residuals Laplace(u) + k^2 u - f over computational coordinates.

The explicit polar form differentiates in (xi, theta) and applies the map
Jacobians by hand. The other forms differentiate the field composed with
the inverse map directly in physical (r, theta[, phi]), which also covers
angle-dependent boundary radii.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import torch
from torch import nn

from ansatz import WavenumberModel
from diff_engine import Jet, jet_eval
from errors import DomainError
from mapping import MapSpec, forward_map, inverse_map, jacobian


RESIDUAL_FORMS = ("explicit_polar", "chain_rule_general", "spherical_axisym", "spherical_full")
POLE_BAND = 1e-2

Wavenumber = Union[float, WavenumberModel]
Source = Optional[Callable[..., torch.Tensor]]


def _k_squared(k: Wavenumber, r: torch.Tensor):
    if isinstance(k, WavenumberModel):
        return k.k(r) ** 2
    return float(k) ** 2


def _subtract_source(residual: torch.Tensor, source: Source, r, angles) -> torch.Tensor:
    if source is None:
        return residual
    return residual - source(r, *angles)


def residual_polar(jet: Jet, points, map_spec: MapSpec, k: Wavenumber, source: Source = None) -> torch.Tensor:
    """(1/J^2) u_xixi + (1/(rJ) - J'/J^3) u_xi + u_thetatheta / r^2 + k^2 u."""
    if map_spec.angle_dependent:
        raise DomainError("explicit polar residual needs a constant boundary radius")
    points = torch.as_tensor(points, dtype=torch.float64).detach()
    xi, theta = points[:, 0], points[:, 1]
    r = forward_map(map_spec, xi, theta)
    jac, jac_prime = jacobian(map_spec, xi)
    residual = (
        jet.hess[:, 0, 0] / jac**2
        + (1.0 / (r * jac) - jac_prime / jac**3) * jet.grad[:, 0]
        + jet.hess[:, 1, 1] / r**2
        + _k_squared(k, r) * jet.value
    )
    return _subtract_source(residual, source, r, [theta])


def residual_variable_k(jet: Jet, points, map_spec: MapSpec, k_model: WavenumberModel, source: Source = None):
    return residual_polar(jet, points, map_spec, k_model, source)


def physical_jet(field: Callable, points, map_spec: MapSpec, *, create_graph: bool = False):
    """Jet of the field in physical (r, angles) at the images of computational points."""
    points = torch.as_tensor(points, dtype=torch.float64).detach()
    angles = [points[:, i] for i in range(1, points.shape[1])]
    r = forward_map(map_spec, points[:, 0], *angles)

    def composed(x: torch.Tensor) -> torch.Tensor:
        x_angles = [x[:, i] for i in range(1, x.shape[1])]
        xi = inverse_map(map_spec, x[:, 0], *x_angles)
        return field(torch.stack([xi, *x_angles], dim=-1))

    physical = torch.stack([r, *angles], dim=-1)
    return jet_eval(composed, physical, create_graph=create_graph), r


def residual_general(
    field: Callable, points, map_spec: MapSpec, k: Wavenumber, source: Source = None, *, create_graph: bool = False
) -> torch.Tensor:
    jet, r = physical_jet(field, points, map_spec, create_graph=create_graph)
    theta = torch.as_tensor(points, dtype=torch.float64)[:, 1]
    laplacian = jet.hess[:, 0, 0] + jet.grad[:, 0] / r + jet.hess[:, 1, 1] / r**2
    return _subtract_source(laplacian + _k_squared(k, r) * jet.value, source, r, [theta])


def residual_spherical(
    field: Callable,
    points,
    map_spec: MapSpec,
    k: Wavenumber,
    mode: str = "axisym",
    source: Source = None,
    *,
    create_graph: bool = False,
) -> torch.Tensor:
    points = torch.as_tensor(points, dtype=torch.float64).detach()
    expected = 2 if mode == "axisym" else 3
    if mode not in ("axisym", "full"):
        raise DomainError(f"Unknown spherical residual mode: {mode}")
    if points.shape[1] != expected:
        raise DomainError(f"{mode} spherical residual expects {expected} coordinates")
    theta = points[:, 1]
    if bool(torch.any(theta < POLE_BAND)) or bool(torch.any(theta > torch.pi - POLE_BAND)):
        raise DomainError("spherical residual is not evaluated inside the pole band")
    jet, r = physical_jet(field, points, map_spec, create_graph=create_graph)
    sin_t = torch.sin(theta)
    angular = jet.hess[:, 1, 1] + torch.cos(theta) / sin_t * jet.grad[:, 1]
    if mode == "full":
        angular = angular + jet.hess[:, 2, 2] / sin_t**2
    laplacian = jet.hess[:, 0, 0] + 2.0 * jet.grad[:, 0] / r + angular / r**2
    angles = [points[:, i] for i in range(1, points.shape[1])]
    return _subtract_source(laplacian + _k_squared(k, r) * jet.value, source, r, angles)


@dataclass(frozen=True)
class ResidualSpec:
    form: str
    map_spec: MapSpec
    wavenumber: Wavenumber
    dimension: int = 2
    source: Source = None

    def __post_init__(self):
        if self.form not in RESIDUAL_FORMS:
            raise DomainError(f"Unknown residual form: {self.form}")
        spherical = self.form.startswith("spherical")
        if spherical != (self.dimension == 3):
            raise DomainError(f"residual form {self.form} does not match dimension {self.dimension}")

    @property
    def coords(self) -> int:
        return 3 if self.form == "spherical_full" else 2

    def evaluate(self, field: nn.Module, points, *, create_graph: bool = True) -> torch.Tensor:
        if self.form == "explicit_polar":
            jet = jet_eval(field, points, create_graph=create_graph)
            return residual_polar(jet, points, self.map_spec, self.wavenumber, self.source)
        if self.form == "chain_rule_general":
            return residual_general(
                field, points, self.map_spec, self.wavenumber, self.source, create_graph=create_graph
            )
        mode = "axisym" if self.form == "spherical_axisym" else "full"
        return residual_spherical(
            field, points, self.map_spec, self.wavenumber, mode, self.source, create_graph=create_graph
        )
