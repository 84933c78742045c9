"""
Inner-boundary descriptions: polar boundary radius, signed distance,
outward normals, incident fields and boundary data.

Angles follow the scattering convention: in 2D theta is measured from +x;
in 3D the polar axis is +x (the incidence direction) and phi is measured
around it, so the unit direction is (cos t, sin t cos p, sin t sin p).

Boundary-radius and field helpers work on NumPy arrays and torch tensors
alike; distance queries are NumPy only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

from errors import ConvergenceError, DomainError


logger = logging.getLogger(__name__)

GEOMETRY_KINDS = ("circle", "ellipse", "regular_polygon", "sphere", "ellipsoid", "canyon_cavity")
NEWTON_MAX_ITERS = 50
NEWTON_STARTS = 8


def _xp(value):
    return torch if isinstance(value, torch.Tensor) else np


def direction_vector(theta, phi=None):
    """Unit direction for polar angles (2D if phi is None)."""
    xp = _xp(theta)
    if phi is None:
        return xp.stack([xp.cos(theta), xp.sin(theta)], -1)
    return xp.stack(
        [xp.cos(theta), xp.sin(theta) * xp.cos(phi), xp.sin(theta) * xp.sin(phi)], -1
    )


def cartesian_to_polar(points: np.ndarray) -> tuple:
    """Return (r, theta[, phi]) in the module's angle convention."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[-1] == 2:
        r = np.hypot(points[..., 0], points[..., 1])
        theta = np.mod(np.arctan2(points[..., 1], points[..., 0]), 2.0 * np.pi)
        return r, theta
    r = np.linalg.norm(points, axis=-1)
    cos_t = np.clip(points[..., 0] / np.where(r > 0, r, 1.0), -1.0, 1.0)
    theta = np.arccos(cos_t)
    phi = np.mod(np.arctan2(points[..., 2], points[..., 1]), 2.0 * np.pi)
    return r, theta, phi


@dataclass(frozen=True)
class GeometrySpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in GEOMETRY_KINDS:
            raise DomainError(f"Unknown geometry kind: {self.kind}")
        for key, value in self.params.items():
            if key != "rotation" and key != "n_sides" and not float(value) > 0.0:
                raise DomainError(f"{self.kind} parameter {key} must be > 0")
        if self.kind == "regular_polygon" and int(self.params.get("n_sides", 0)) < 3:
            raise DomainError("regular_polygon needs n_sides >= 3")

    # -- constructors -------------------------------------------------------

    @classmethod
    def circle(cls, radius: float = 1.0) -> "GeometrySpec":
        return cls("circle", {"radius": float(radius)})

    @classmethod
    def ellipse(cls, a: float = 2.0, b: float = 1.0) -> "GeometrySpec":
        return cls("ellipse", {"a": float(a), "b": float(b)})

    @classmethod
    def regular_polygon(cls, n_sides: int, circumradius: float, rotation: Optional[float] = None) -> "GeometrySpec":
        # rotation is the direction of a mid-side normal; 0 puts a flat side facing +x.
        rotation = 0.0 if rotation is None else float(rotation)
        return cls(
            "regular_polygon",
            {"n_sides": int(n_sides), "circumradius": float(circumradius), "rotation": rotation},
        )

    @classmethod
    def sphere(cls, radius: float = 1.0) -> "GeometrySpec":
        return cls("sphere", {"radius": float(radius)})

    @classmethod
    def ellipsoid(cls, a: float = 2.0, b: float = 1.0, c: float = 1.0) -> "GeometrySpec":
        return cls("ellipsoid", {"a": float(a), "b": float(b), "c": float(c)})

    @classmethod
    def canyon_cavity(cls, a: float = 1.0) -> "GeometrySpec":
        return cls("canyon_cavity", {"radius": float(a)})

    # -- properties ---------------------------------------------------------

    @property
    def dimension(self) -> int:
        return 3 if self.kind in ("sphere", "ellipsoid") else 2

    @property
    def is_circular(self) -> bool:
        return self.kind in ("circle", "sphere", "canyon_cavity")

    @property
    def has_normal_consistency(self) -> bool:
        return self.kind != "regular_polygon"

    @property
    def reference_radius(self) -> float:
        """Background radius R_in: the radius itself, or the smallest polar radius."""
        p = self.params
        if self.is_circular:
            return p["radius"]
        if self.kind == "ellipse":
            return min(p["a"], p["b"])
        if self.kind == "ellipsoid":
            return min(p["a"], p["b"], p["c"])
        return p["circumradius"] * math.cos(math.pi / p["n_sides"])

    @property
    def max_radius(self) -> float:
        p = self.params
        if self.is_circular:
            return p["radius"]
        if self.kind == "ellipse":
            return max(p["a"], p["b"])
        if self.kind == "ellipsoid":
            return max(p["a"], p["b"], p["c"])
        return p["circumradius"]

    def vertices(self) -> np.ndarray:
        if self.kind != "regular_polygon":
            return np.zeros((0, 2))
        n = int(self.params["n_sides"])
        # rotation names a mid-side direction; vertices sit pi/n either side of it.
        angles = self.params["rotation"] + math.pi / n + 2.0 * math.pi * np.arange(n) / n
        return self.params["circumradius"] * np.stack([np.cos(angles), np.sin(angles)], -1)

    # -- boundary -----------------------------------------------------------

    def boundary_radius(self, theta, phi=None):
        xp = _xp(theta)
        p = self.params
        if self.is_circular:
            return theta * 0.0 + p["radius"]
        if self.kind == "ellipse":
            a, b = p["a"], p["b"]
            return a * b / xp.sqrt((b * xp.cos(theta)) ** 2 + (a * xp.sin(theta)) ** 2)
        if self.kind == "ellipsoid":
            if phi is None:
                phi = theta * 0.0
            d = direction_vector(theta, phi)
            inv = (d[..., 0] / p["a"]) ** 2 + (d[..., 1] / p["b"]) ** 2 + (d[..., 2] / p["c"]) ** 2
            return 1.0 / xp.sqrt(inv)
        n = int(p["n_sides"])
        sector = 2.0 * math.pi / n
        apothem = p["circumradius"] * math.cos(math.pi / n)
        # Angle measured from the nearest mid-side direction, wrapped into [-pi/n, pi/n).
        local = (theta - p["rotation"] + math.pi / n) % sector - math.pi / n
        return apothem / xp.cos(local)

    def boundary_point(self, theta, phi=None):
        r_b = self.boundary_radius(theta, phi)
        if self.dimension == 3:
            if phi is None:
                phi = theta * 0.0
            return r_b[..., None] * direction_vector(theta, phi)
        return r_b[..., None] * direction_vector(theta)

    def outward_normal(self, points: np.ndarray) -> np.ndarray:
        """Analytic outward unit normal at boundary points (smooth geometries)."""
        points = np.asarray(points, dtype=np.float64)
        p = self.params
        if self.is_circular:
            normal = points.copy()
        elif self.kind == "ellipse":
            normal = points / np.array([p["a"] ** 2, p["b"] ** 2])
        elif self.kind == "ellipsoid":
            normal = points / np.array([p["a"] ** 2, p["b"] ** 2, p["c"] ** 2])
        else:
            raise DomainError("regular_polygon has no normal at its corners; use edge normals")
        return normal / np.linalg.norm(normal, axis=-1, keepdims=True)

    def sample_boundary(self, count: int, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        theta = rng.uniform(0.0, 2.0 * np.pi, count)
        if self.dimension == 3:
            polar = np.arccos(rng.uniform(-1.0, 1.0, count))
            return self.boundary_point(polar, theta)
        return self.boundary_point(theta)

    # -- distance -----------------------------------------------------------

    def distance(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Signed distance d (positive outside) and its gradient at each point."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if points.shape[-1] != self.dimension:
            raise DomainError(f"{self.kind} expects {self.dimension}D points")
        if self.is_circular:
            r = np.linalg.norm(points, axis=-1)
            if np.any(r == 0.0):
                raise DomainError("distance gradient undefined at the origin")
            return r - self.params["radius"], points / r[:, None]
        if self.kind == "ellipse":
            return _ellipse_distance(points, self.params["a"], self.params["b"])
        if self.kind == "ellipsoid":
            axes = np.array([self.params["a"], self.params["b"], self.params["c"]])
            return _ellipsoid_distance(points, axes)
        return _polygon_distance(points, self.vertices())


def _ellipse_distance(points: np.ndarray, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    distances = np.empty(len(points))
    gradients = np.empty_like(points)
    starts = 2.0 * np.pi * np.arange(NEWTON_STARTS) / NEWTON_STARTS
    tol = 1e-14 * max(a, b) ** 2
    for idx, (x, y) in enumerate(points):
        best_t, best_d2 = None, np.inf
        last_residual = np.inf
        for t in starts:
            for _ in range(NEWTON_MAX_ITERS):
                s, c = math.sin(t), math.cos(t)
                f = (b * b - a * a) * s * c + a * x * s - b * y * c
                df = (b * b - a * a) * (c * c - s * s) + a * x * c + b * y * s
                last_residual = abs(f)
                if abs(f) <= tol:
                    break
                if df == 0.0:
                    break
                step = f / df
                t -= max(-0.5, min(0.5, step))
                if abs(step) < 1e-16:
                    break
            s, c = math.sin(t), math.cos(t)
            f = (b * b - a * a) * s * c + a * x * s - b * y * c
            if abs(f) > 1e-9 * max(a, b) ** 2:
                continue
            d2 = (a * c - x) ** 2 + (b * s - y) ** 2
            if d2 < best_d2:
                best_t, best_d2 = t, d2
        if best_t is None:
            raise ConvergenceError(
                f"ellipse projection failed for point ({x:.6g}, {y:.6g})",
                iterations=NEWTON_MAX_ITERS,
                residual=last_residual,
            )
        s, c = math.sin(best_t), math.cos(best_t)
        foot = np.array([a * c, b * s])
        inside = (x / a) ** 2 + (y / b) ** 2 < 1.0
        dist = math.sqrt(best_d2)
        normal = np.array([b * c, a * s])
        normal /= np.linalg.norm(normal)
        if dist > 1e-12:
            grad = (np.array([x, y]) - foot) / dist
            if inside:
                grad = -grad
        else:
            grad = normal
        distances[idx] = -dist if inside else dist
        gradients[idx] = grad
    return distances, gradients


def _ellipsoid_distance(points: np.ndarray, axes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exterior projection through the Lagrange multiplier equation, solved by Newton."""
    sq = axes**2
    distances = np.empty(len(points))
    gradients = np.empty_like(points)
    for idx, x in enumerate(points):
        level = float(np.sum((x / axes) ** 2))
        if level < 1.0 - 1e-12:
            raise DomainError("ellipsoid distance is only defined outside the body")
        lam = 0.0
        g = level - 1.0
        iterations = 0
        while abs(g) > 1e-15 and iterations < NEWTON_MAX_ITERS:
            denom = sq + lam
            g = float(np.sum(x * x * sq / denom**2)) - 1.0
            dg = float(-2.0 * np.sum(x * x * sq / denom**3))
            lam -= g / dg
            lam = max(lam, 0.0)
            iterations += 1
        if abs(g) > 1e-10:
            raise ConvergenceError("ellipsoid projection failed", iterations=iterations, residual=abs(g))
        foot = x * sq / (sq + lam)
        diff = x - foot
        dist = float(np.linalg.norm(diff))
        if dist > 1e-12:
            grad = diff / dist
        else:
            grad = x / sq
            grad /= np.linalg.norm(grad)
        distances[idx] = dist
        gradients[idx] = grad
    return distances, gradients


def _polygon_distance(points: np.ndarray, vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    start = vertices
    end = np.roll(vertices, -1, axis=0)
    edge = end - start
    edge_len2 = np.sum(edge**2, axis=-1)
    rel = points[:, None, :] - start[None, :, :]
    t = np.clip(np.sum(rel * edge[None], axis=-1) / edge_len2[None], 0.0, 1.0)
    foot = start[None] + t[..., None] * edge[None]
    diff = points[:, None, :] - foot
    dist = np.linalg.norm(diff, axis=-1)
    nearest = np.argmin(dist, axis=1)
    rows = np.arange(len(points))
    d = dist[rows, nearest]
    edge_normals = np.stack([edge[:, 1], -edge[:, 0]], -1) / np.sqrt(edge_len2)[:, None]
    # Counter-clockwise vertices: (dy, -dx) points outward.
    side = np.einsum("nkd,kd->nk", rel, edge_normals)
    inside = np.all(side < 0.0, axis=1)
    grad = np.where(
        (d > 1e-12)[:, None],
        diff[rows, nearest] / np.where(d > 1e-12, d, 1.0)[:, None],
        edge_normals[nearest],
    )
    grad = np.where(inside[:, None], -grad, grad)
    return np.where(inside, -d, d), grad


# ---------------------------------------------------------------------------
# Incident fields and boundary data
# ---------------------------------------------------------------------------


def incidence_direction(theta_inc: float, dimension: int = 2) -> np.ndarray:
    if dimension == 3:
        return np.array([math.cos(theta_inc), math.sin(theta_inc), 0.0])
    return np.array([math.cos(theta_inc), math.sin(theta_inc)])


def _plane_wave(k: float, direction, points):
    xp = _xp(points)
    direction = direction if xp is np else torch.as_tensor(direction, dtype=points.dtype)
    phase = k * (points * direction).sum(-1)
    value = xp.cos(phase) + 1j * xp.sin(phase)
    gradient = (1j * k) * value[..., None] * direction
    return value, gradient


def incident_field(k: float, direction, points):
    """Plane wave e^{i k x.d} and its gradient; direction may be an angle (2D)."""
    if np.ndim(direction) == 0:
        direction = incidence_direction(float(direction), 2)
    direction = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-12:
        raise DomainError("incidence direction must be a unit vector")
    return _plane_wave(k, direction, points)


def canyon_background_gradient(k: float, theta_inc: float, points):
    """u0 = u_inc + u_ref (mirror image across y = 0) and its gradient."""
    if not k > 0.0:
        raise DomainError("wavenumber must be > 0")
    down = np.array([math.cos(theta_inc), math.sin(theta_inc)])
    mirrored = np.array([math.cos(theta_inc), -math.sin(theta_inc)])
    u_inc, g_inc = _plane_wave(k, down, points)
    u_ref, g_ref = _plane_wave(k, mirrored, points)
    return u_inc + u_ref, g_inc + g_ref


def background_field_canyon(k: float, theta_inc: float, points):
    """Value of u0 and its radial derivative x_hat . grad(u0)."""
    value, gradient = canyon_background_gradient(k, theta_inc, points)
    xp = _xp(points)
    radius = xp.sqrt((points**2).sum(-1))
    radial = (gradient * points).sum(-1) / radius
    return value, radial


@dataclass(frozen=True)
class BoundaryData:
    """Dirichlet or Neumann data as a function of the boundary angles."""

    kind: str
    value_fn: Callable
    description: str = ""

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann"):
            raise DomainError(f"Unknown boundary condition kind: {self.kind}")

    def __call__(self, theta, phi=None):
        if phi is None:
            return self.value_fn(theta)
        return self.value_fn(theta, phi)


def constant_dirichlet(u0: float) -> BoundaryData:
    def value(theta, phi=None):
        return theta * 0.0 + complex(u0)

    return BoundaryData("dirichlet", value, f"u = {u0}")


def sound_soft(geometry: GeometrySpec, k: float, theta_inc: float = 0.0) -> BoundaryData:
    direction = incidence_direction(theta_inc, geometry.dimension)

    def value(theta, phi=None):
        points = geometry.boundary_point(theta, phi)
        return -_plane_wave(k, direction, points)[0]

    return BoundaryData("dirichlet", value, "u_s = -u_inc")


def sound_hard(geometry: GeometrySpec, k: float, theta_inc: float = 0.0) -> BoundaryData:
    if not geometry.is_circular:
        raise DomainError("Neumann data is supported on circular boundaries only")
    direction = incidence_direction(theta_inc, geometry.dimension)

    def value(theta, phi=None):
        points = geometry.boundary_point(theta, phi)
        _, gradient = _plane_wave(k, direction, points)
        normal = points / geometry.params["radius"]
        return -(gradient * normal).sum(-1)

    return BoundaryData("neumann", value, "du_s/dn = -du_inc/dn")


def canyon_neumann(k: float, theta_inc: float, a: float) -> BoundaryData:
    def value(theta, phi=None):
        points = a * direction_vector(theta)
        return -background_field_canyon(k, theta_inc, points)[1]

    return BoundaryData("neumann", value, "du_s/dr = -du0/dr at r = a")


def homogeneous_neumann() -> BoundaryData:
    def value(theta, phi=None):
        return theta * 0.0 + 0j

    return BoundaryData("neumann", value, "du/dn = 0")
