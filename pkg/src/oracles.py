"""
Reference solutions used to score trained fields.

All evaluators take Cartesian points of shape (M, dim) and return complex
values, so predictions and references share one grid format.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg, sparse, special
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import spsolve

from ansatz import WavenumberModel
from complex_special import MAX_ORDER, wiscombe_order
from errors import DomainError, OracleAccuracyError
from geometry import (
    BoundaryData,
    GeometrySpec,
    background_field_canyon,
    cartesian_to_polar,
    direction_vector,
)


logger = logging.getLogger(__name__)

MFS_SOURCE_SCALE = 0.8
MFS_WARN_RESIDUAL = 1e-6
MFS_FAIL_RESIDUAL = 1e-3
EVAL_CHUNK = 2048
FDM_MIN_POINTS = 10_000


@dataclass(frozen=True)
class OracleField:
    name: str
    evaluator: Callable[[np.ndarray], np.ndarray]
    validity: str
    metadata: dict = field(default_factory=dict)

    def __call__(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.asarray(self.evaluator(points), dtype=np.complex128)


def _truncation(n_max: Optional[int], size_parameter: float) -> int:
    n_max = wiscombe_order(size_parameter) if n_max is None else int(n_max)
    if n_max < 0 or n_max > MAX_ORDER:
        raise DomainError(f"series truncation must be in [0, {MAX_ORDER}], got {n_max}")
    return n_max


def _neumann_factors(n_max: int) -> np.ndarray:
    eps = np.full(n_max + 1, 2.0)
    eps[0] = 1.0
    return eps


# ---------------------------------------------------------------------------
# Analytic radiation and Mie series
# ---------------------------------------------------------------------------


def radiation_exact(k: float, u0: complex, r, r0: float = 1.0):
    """u0 H0(k r) / H0(k r0) for the pulsating cylinder of radius r0."""
    r = np.asarray(r, dtype=np.float64)
    if not k > 0.0:
        raise DomainError(f"wavenumber must be > 0, got {k}")
    if np.any(r < r0 * (1.0 - 1e-12)):
        raise DomainError("radiation solution is defined for r >= r0")
    r = np.maximum(r, r0)
    value = complex(u0) * special.hankel1(0, k * r) / special.hankel1(0, k * r0)
    return value.item() if value.ndim == 0 else value


def radiation_field(k: float, u0: complex, r0: float = 1.0) -> OracleField:
    def evaluate(points):
        return radiation_exact(k, u0, np.linalg.norm(points, axis=-1), r0)

    return OracleField("radiation_exact", evaluate, f"r >= {r0}", {"k": k, "u0": complex(u0).real})


def mie2d(k: float, r_in: float, r, theta, n_max: Optional[int] = None, *, condition: str = "dirichlet", theta_inc: float = 0.0):
    """Scattered field of a plane wave on a sound-soft (or sound-hard) cylinder."""
    r = np.asarray(r, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(r < r_in * (1.0 - 1e-12)):
        raise DomainError("Mie series is evaluated outside the cylinder only")
    n_max = _truncation(n_max, k * r_in)
    orders = np.arange(n_max + 1)
    x = k * r_in
    if condition == "dirichlet":
        ratio = special.jv(orders, x) / special.hankel1(orders, x)
    elif condition == "neumann":
        ratio = special.jvp(orders, x) / special.h1vp(orders, x)
    else:
        raise DomainError(f"Unknown boundary condition: {condition}")
    coefficients = -_neumann_factors(n_max) * (1j**orders) * ratio
    flat_r, flat_t = np.broadcast_arrays(r, theta)
    radial = special.hankel1(orders[:, None], k * flat_r.reshape(1, -1))
    angular = np.cos(orders[:, None] * (flat_t.reshape(1, -1) - theta_inc))
    value = np.sum(coefficients[:, None] * radial * angular, axis=0).reshape(flat_r.shape)
    return value.item() if value.ndim == 0 else value


def mie2d_field(k: float, r_in: float, *, condition: str = "dirichlet", theta_inc: float = 0.0, n_max=None) -> OracleField:
    n_max = _truncation(n_max, k * r_in)
    logger.debug("mie2d truncation order %d (k r = %.3f)", n_max, k * r_in)

    def evaluate(points):
        r, theta = cartesian_to_polar(points)
        return mie2d(k, r_in, r, theta, n_max, condition=condition, theta_inc=theta_inc)

    return OracleField("mie2d", evaluate, f"r >= {r_in}", {"n_max": n_max, "condition": condition})


def mie3d(k: float, r0: float, r, theta, n_max: Optional[int] = None, *, condition: str = "dirichlet"):
    """Scattered field of a +x plane wave on a sphere; theta is measured from +x."""
    r = np.asarray(r, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(r < r0 * (1.0 - 1e-12)):
        raise DomainError("Mie series is evaluated outside the sphere only")
    n_max = _truncation(n_max, k * r0)
    orders = np.arange(n_max + 1)
    x = k * r0
    h_x = special.spherical_jn(orders, x) + 1j * special.spherical_yn(orders, x)
    if condition == "dirichlet":
        ratio = special.spherical_jn(orders, x) / h_x
    elif condition == "neumann":
        h_prime = special.spherical_jn(orders, x, derivative=True) + 1j * special.spherical_yn(
            orders, x, derivative=True
        )
        ratio = special.spherical_jn(orders, x, derivative=True) / h_prime
    else:
        raise DomainError(f"Unknown boundary condition: {condition}")
    coefficients = -(1j**orders) * (2 * orders + 1) * ratio
    flat_r, flat_t = np.broadcast_arrays(r, theta)
    kr = k * flat_r.reshape(1, -1)
    radial = special.spherical_jn(orders[:, None], kr) + 1j * special.spherical_yn(orders[:, None], kr)
    angular = special.eval_legendre(orders[:, None], np.cos(flat_t.reshape(1, -1)))
    value = np.sum(coefficients[:, None] * radial * angular, axis=0).reshape(flat_r.shape)
    return value.item() if value.ndim == 0 else value


def mie3d_field(k: float, r0: float, *, condition: str = "dirichlet", n_max=None) -> OracleField:
    n_max = _truncation(n_max, k * r0)
    logger.debug("mie3d truncation order %d (k r = %.3f)", n_max, k * r0)

    def evaluate(points):
        r, theta, _ = cartesian_to_polar(points)
        return mie3d(k, r0, r, theta, n_max, condition=condition)

    return OracleField("mie3d", evaluate, f"r >= {r0}", {"n_max": n_max, "condition": condition})


# ---------------------------------------------------------------------------
# Radial finite differences for variable wavenumber
# ---------------------------------------------------------------------------

# Fourth-order stencils as (offset, weight) lists, scaled by 1/(12 h^2) or 1/(12 h).
_D2_CENTRAL = ((-2, -1.0), (-1, 16.0), (0, -30.0), (1, 16.0), (2, -1.0))
_D1_CENTRAL = ((-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0))
_D2_NEAR_START = ((-1, 10.0), (0, -15.0), (1, -4.0), (2, 14.0), (3, -6.0), (4, 1.0))
_D1_NEAR_START = ((-1, -3.0), (0, -10.0), (1, 18.0), (2, -6.0), (3, 1.0))
_D2_NEAR_END = tuple((-o, w) for o, w in _D2_NEAR_START)
_D1_NEAR_END = tuple((-o, -w) for o, w in _D1_NEAR_START)
_D1_ONE_SIDED_END = ((0, 25.0), (-1, -48.0), (-2, 36.0), (-3, -16.0), (-4, 3.0))


@dataclass(frozen=True)
class RadialProfile(OracleField):
    radii: np.ndarray = field(default_factory=lambda: np.zeros(0))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.complex128))
    interpolant: Optional[Callable] = None

    def profile(self, r) -> np.ndarray:
        return np.asarray(self.interpolant(r))


def radial_fdm(
    k_model: WavenumberModel,
    u0: complex,
    r_max: float,
    n_grid: int,
    *,
    r0: float = 1.0,
    outgoing: str = "first_order",
) -> RadialProfile:
    """Solve u'' + u'/r + k(r)^2 u = 0 on [r0, r_max] with u(r0) = u0."""
    if n_grid < FDM_MIN_POINTS:
        raise DomainError(f"n_grid must be >= {FDM_MIN_POINTS}, got {n_grid}")
    if r_max < 20.0 / k_model.k_inf + 10.0:
        raise DomainError(f"r_max must be >= 20/k + 10 = {20.0 / k_model.k_inf + 10.0:.3f}")
    if outgoing not in ("first_order", "dtn"):
        raise DomainError(f"Unknown outgoing condition: {outgoing}")
    n = int(n_grid)
    h = (r_max - r0) / n
    radii = r0 + h * np.arange(n + 1)
    k_sq = k_model.k(radii) ** 2
    rows: list[int] = []
    cols: list[int] = []
    vals: list[complex] = []
    rhs = np.zeros(n, dtype=np.complex128)

    def put(row: int, node: int, weight: complex) -> None:
        if node == 0:
            rhs[row - 1] -= weight * u0
        else:
            rows.append(row - 1)
            cols.append(node - 1)
            vals.append(weight)

    d2_scale = 1.0 / (12.0 * h * h)
    d1_scale = 1.0 / (12.0 * h)
    for i in range(1, n):
        if i == 1:
            d2, d1 = _D2_NEAR_START, _D1_NEAR_START
        elif i == n - 1:
            d2, d1 = _D2_NEAR_END, _D1_NEAR_END
        else:
            d2, d1 = _D2_CENTRAL, _D1_CENTRAL
        for offset, weight in d2:
            put(i, i + offset, weight * d2_scale)
        for offset, weight in d1:
            put(i, i + offset, weight * d1_scale / radii[i])
        put(i, i, k_sq[i])

    k_end = float(k_model.k(r_max))
    if outgoing == "dtn":
        # u'/u of the outgoing cylindrical wave H0(k r) at r_max.
        impedance = -k_end * special.hankel1(1, k_end * r_max) / special.hankel1(0, k_end * r_max)
    else:
        impedance = 1j * k_model.k_inf - 1.0 / (2.0 * r_max)
    for offset, weight in _D1_ONE_SIDED_END:
        put(n, n + offset, weight * d1_scale)
    put(n, n, -impedance)

    matrix = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n), dtype=np.complex128).tocsc()
    solution = spsolve(matrix, rhs)
    if not np.all(np.isfinite(solution)):
        raise OracleAccuracyError("radial finite-difference system is singular", float("nan"))
    values = np.concatenate([[complex(u0)], solution])
    spline_re = CubicSpline(radii, values.real)
    spline_im = CubicSpline(radii, values.imag)

    def spline(r):
        r = np.asarray(r, dtype=np.float64)
        if np.any(r < r0) or np.any(r > r_max):
            raise DomainError(f"radial profile is defined on [{r0}, {r_max}]")
        return spline_re(r) + 1j * spline_im(r)

    def evaluate(points):
        return spline(np.linalg.norm(points, axis=-1))

    logger.debug("radial fdm solved: %d nodes, h=%.3e, outgoing=%s", n + 1, h, outgoing)
    return RadialProfile(
        name="radial_fdm",
        evaluator=evaluate,
        validity=f"{r0} <= r <= {r_max}",
        metadata={"n_grid": n, "r_max": r_max, "outgoing": outgoing},
        radii=radii,
        values=values,
        interpolant=spline,
    )


# ---------------------------------------------------------------------------
# Method of fundamental solutions
# ---------------------------------------------------------------------------


def fibonacci_directions(count: int) -> np.ndarray:
    """Near-uniform unit vectors on the sphere (golden-angle spiral)."""
    index = np.arange(count) + 0.5
    polar = np.arccos(1.0 - 2.0 * index / count)
    azimuth = math.pi * (1.0 + math.sqrt(5.0)) * index
    return direction_vector(polar, np.mod(azimuth, 2.0 * math.pi))


def _polygon_boundary(geometry: GeometrySpec, count: int) -> np.ndarray:
    """Equal share of points per edge, clustered toward the corners."""
    vertices = geometry.vertices()
    n_edges = len(vertices)
    per_edge = max(count // n_edges, 2)
    t = 0.5 * (1.0 - np.cos(math.pi * (np.arange(per_edge) + 0.5) / per_edge))
    start = vertices
    end = np.roll(vertices, -1, axis=0)
    points = start[:, None, :] + t[None, :, None] * (end - start)[:, None, :]
    return points.reshape(-1, 2)


def _boundary_nodes(geometry: GeometrySpec, count: int, offset: float) -> np.ndarray:
    if geometry.kind == "regular_polygon":
        return _polygon_boundary(geometry, count)
    if geometry.dimension == 3:
        directions = fibonacci_directions(count)
        _, polar, azimuth = cartesian_to_polar(directions)
        return geometry.boundary_point(polar, azimuth)
    theta = 2.0 * math.pi * (np.arange(count) + offset) / count
    return geometry.boundary_point(theta)


def _green(k: float, targets: np.ndarray, sources: np.ndarray) -> np.ndarray:
    dist = np.linalg.norm(targets[:, None, :] - sources[None, :, :], axis=-1)
    if targets.shape[-1] == 2:
        return 0.25j * special.hankel1(0, k * dist)
    return np.exp(1j * k * dist) / (4.0 * math.pi * dist)


def _boundary_values(boundary: BoundaryData, points: np.ndarray) -> np.ndarray:
    angles = cartesian_to_polar(points)[1:]
    return np.asarray(boundary(*angles), dtype=np.complex128)


def mfs_solve(geometry: GeometrySpec, k: float, boundary: BoundaryData, n_sources: Optional[int] = None) -> OracleField:
    """Least-squares fundamental-solution fit to Dirichlet data on the boundary."""
    if boundary.kind != "dirichlet":
        raise DomainError("fundamental-solution reference supports Dirichlet data only")
    if not k > 0.0:
        raise DomainError(f"wavenumber must be > 0, got {k}")
    if n_sources is None:
        n_sources = 900 if geometry.dimension == 3 else 128
    sources = MFS_SOURCE_SCALE * _boundary_nodes(geometry, n_sources, 0.0)
    collocation = _boundary_nodes(geometry, 2 * n_sources, 0.25)
    data = _boundary_values(boundary, collocation)
    system = _green(k, collocation, sources)
    coefficients, _, rank, _ = linalg.lstsq(system, data)
    residual = float(np.max(np.abs(system @ coefficients - data), initial=0.0))
    logger.debug("mfs: %d sources, rank %d, boundary residual %.3e", len(sources), rank, residual)
    if residual > MFS_FAIL_RESIDUAL:
        raise OracleAccuracyError(
            f"fundamental-solution boundary residual {residual:.3e} exceeds {MFS_FAIL_RESIDUAL:g}", residual
        )
    warning = None
    if residual > MFS_WARN_RESIDUAL:
        warning = f"boundary residual {residual:.3e} above {MFS_WARN_RESIDUAL:g}"
        logger.warning("mfs reference for %s: %s", geometry.kind, warning)

    def evaluate(points):
        out = np.empty(len(points), dtype=np.complex128)
        for start in range(0, len(points), EVAL_CHUNK):
            chunk = points[start:start + EVAL_CHUNK]
            out[start:start + EVAL_CHUNK] = _green(k, chunk, sources) @ coefficients
        return out

    return OracleField(
        "mfs",
        evaluate,
        "exterior of the scatterer",
        {
            "n_sources": len(sources),
            "boundary_residual": residual,
            "warning": warning,
        },
    )


# ---------------------------------------------------------------------------
# Canyon: image-method modal series
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CanyonSeries(OracleField):
    k: float = 1.0
    a: float = 1.0
    theta_inc: float = 0.0
    coefficients: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.complex128))

    def scattered(self, r, theta) -> np.ndarray:
        orders = np.arange(len(self.coefficients))
        r = np.asarray(r, dtype=np.float64).reshape(1, -1)
        theta = np.asarray(theta, dtype=np.float64).reshape(1, -1)
        radial = special.hankel1(orders[:, None], self.k * r)
        return np.sum(self.coefficients[:, None] * radial * np.cos(orders[:, None] * theta), axis=0)

    def radial_derivative(self, theta) -> np.ndarray:
        """d(total)/dr on the cavity arc r = a."""
        theta = np.asarray(theta, dtype=np.float64)
        orders = np.arange(len(self.coefficients))
        points = self.a * direction_vector(theta)
        _, background = background_field_canyon(self.k, self.theta_inc, points)
        modal = self.k * special.h1vp(orders[:, None], self.k * self.a)
        scattered = np.sum(self.coefficients[:, None] * modal * np.cos(orders[:, None] * theta[None, :]), axis=0)
        return background + scattered

    def __call__(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        r, theta = cartesian_to_polar(points)
        if np.any(r < self.a * (1.0 - 1e-12)):
            raise DomainError("canyon field is evaluated outside the cavity only")
        value, _ = background_field_canyon(self.k, self.theta_inc, points)
        return value + self.scattered(r, theta)

    def surface_amplitude(self, xs) -> np.ndarray:
        return np.abs(self(canyon_surface_points(self.a, xs)))


def canyon_surface_points(a: float, xs) -> np.ndarray:
    """Ground line y = 0 for |x| >= a, cavity arc y = -sqrt(a^2 - x^2) inside."""
    xs = np.asarray(xs, dtype=np.float64)
    depth = np.sqrt(np.clip(a * a - xs * xs, 0.0, None))
    return np.stack([xs, np.where(np.abs(xs) < a, -depth, 0.0)], -1)


def canyon_series(k: float, a: float, theta_inc: float, n_max: Optional[int] = None) -> CanyonSeries:
    if not k > 0.0 or not a > 0.0:
        raise DomainError("canyon series needs k > 0 and a > 0")
    n_max = _truncation(n_max, k * a)
    orders = np.arange(n_max + 1)
    # u0 = sum 2 eps_n i^n cos(n theta_inc) J_n(kr) cos(n theta); no sine terms survive.
    background = 2.0 * _neumann_factors(n_max) * (1j**orders) * np.cos(orders * theta_inc)
    coefficients = -background * special.jvp(orders, k * a) / special.h1vp(orders, k * a)
    logger.debug("canyon series truncation order %d (k a = %.3f)", n_max, k * a)

    return CanyonSeries(
        name="canyon_series",
        evaluator=None,
        validity=f"r >= {a}, y <= 0",
        metadata={"n_max": n_max, "theta_inc": theta_inc},
        k=k,
        a=a,
        theta_inc=theta_inc,
        coefficients=coefficients,
    )
