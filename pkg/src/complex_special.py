"""
Special functions for the oracles and asymptotic factors.

NumPy entry points wrap ``scipy.special`` (AMOS-backed, so the stable
recurrence directions are handled there) and add domain checks. The
``torch_*`` variants are differentiable to any order: each is an autograd
Function whose backward re-enters the same family at neighbouring orders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
import torch
from scipy import special

from errors import DomainError


ComplexScalar = complex
ArrayLike = Union[float, np.ndarray]

MAX_ORDER = 80


def _check_order(n: int) -> int:
    n = int(n)
    if n < 0 or n > MAX_ORDER:
        raise DomainError(f"order must be in [0, {MAX_ORDER}], got {n}")
    return n


def _check_positive(x: ArrayLike, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError(f"{name} must be finite and > 0")
    return arr


def _scalar_or_array(value: np.ndarray, like: ArrayLike):
    if np.ndim(like) == 0:
        return value.item()
    return value


def wiscombe_order(size_parameter: float) -> int:
    """Series truncation n_max = ceil(x + 10 + 4 x^(1/3)) for x = k r0."""
    x = abs(float(size_parameter))
    return int(math.ceil(x + 10.0 + 4.0 * x ** (1.0 / 3.0)))


def bessel_j(n: int, x: ArrayLike):
    n = _check_order(n)
    arr = np.asarray(x, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0):
        raise DomainError("x must be finite and >= 0")
    value = special.jv(n, arr)
    # J_n(0) is exact: 1 for n = 0, 0 otherwise.
    value = np.where(arr == 0.0, 1.0 if n == 0 else 0.0, value)
    return _scalar_or_array(np.asarray(value), x)


def bessel_y(n: int, x: ArrayLike):
    n = _check_order(n)
    arr = _check_positive(x)
    return _scalar_or_array(np.asarray(special.yv(n, arr)), x)


def hankel1(n: int, x: ArrayLike):
    n = _check_order(n)
    arr = _check_positive(x)
    return _scalar_or_array(np.asarray(special.hankel1(n, arr)), x)


def hankel1_deriv(n: int, x: ArrayLike):
    n = _check_order(n)
    arr = _check_positive(x)
    return _scalar_or_array(np.asarray(special.h1vp(n, arr)), x)


def spherical_bessel_j(n: int, x: ArrayLike):
    n = _check_order(n)
    arr = _check_positive(x)
    return _scalar_or_array(np.asarray(special.spherical_jn(n, arr)), x)


def spherical_bessel_y(n: int, x: ArrayLike):
    n = _check_order(n)
    arr = _check_positive(x)
    return _scalar_or_array(np.asarray(special.spherical_yn(n, arr)), x)


def spherical_hankel1(n: int, x: ArrayLike):
    n = _check_order(n)
    arr = _check_positive(x)
    value = special.spherical_jn(n, arr) + 1j * special.spherical_yn(n, arr)
    return _scalar_or_array(np.asarray(value), x)


def spherical_hankel1_deriv(n: int, x: ArrayLike):
    n = _check_order(n)
    arr = _check_positive(x)
    value = special.spherical_jn(n, arr, derivative=True) + 1j * special.spherical_yn(
        n, arr, derivative=True
    )
    return _scalar_or_array(np.asarray(value), x)


def legendre_p(n: int, t: ArrayLike):
    n = _check_order(n)
    arr = np.asarray(t, dtype=np.float64)
    if np.any(np.abs(arr) > 1.0):
        raise DomainError("Legendre argument must satisfy |t| <= 1")
    return _scalar_or_array(np.asarray(special.eval_legendre(n, arr)), t)


@dataclass(frozen=True)
class SpecialFnTable:
    """Orders 0..max_order of one function family at a single argument."""

    max_order: int
    argument: float
    first_kind: np.ndarray
    hankel: np.ndarray
    hankel_deriv: np.ndarray

    @classmethod
    def cylindrical(cls, max_order: int, argument: float) -> "SpecialFnTable":
        max_order = _check_order(max_order)
        x = float(_check_positive(argument, "argument"))
        orders = np.arange(max_order + 1)
        return cls(
            max_order=max_order,
            argument=x,
            first_kind=special.jv(orders, x),
            hankel=special.hankel1(orders, x),
            hankel_deriv=special.h1vp(orders, x),
        )

    @classmethod
    def spherical(cls, max_order: int, argument: float) -> "SpecialFnTable":
        max_order = _check_order(max_order)
        x = float(_check_positive(argument, "argument"))
        orders = np.arange(max_order + 1)
        return cls(
            max_order=max_order,
            argument=x,
            first_kind=special.spherical_jn(orders, x),
            hankel=special.spherical_jn(orders, x) + 1j * special.spherical_yn(orders, x),
            hankel_deriv=special.spherical_jn(orders, x, derivative=True)
            + 1j * special.spherical_yn(orders, x, derivative=True),
        )


# ---------------------------------------------------------------------------
# Differentiable torch versions
# ---------------------------------------------------------------------------

_CYLINDRICAL = {"j": special.jv, "y": special.yv}
_SPHERICAL = {"j": special.spherical_jn, "y": special.spherical_yn}


class _CylindricalBessel(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, order, kind):
        ctx.save_for_backward(x)
        ctx.order = order
        ctx.kind = kind
        values = _CYLINDRICAL[kind](order, x.detach().cpu().numpy())
        return torch.as_tensor(values, dtype=x.dtype, device=x.device)

    @staticmethod
    def backward(ctx, grad_output):
        (x,) = ctx.saved_tensors
        n, kind = ctx.order, ctx.kind
        # Z_n' = (Z_{n-1} - Z_{n+1}) / 2; negative orders reflect inside scipy.
        lower = _CylindricalBessel.apply(x, n - 1, kind)
        upper = _CylindricalBessel.apply(x, n + 1, kind)
        return grad_output * 0.5 * (lower - upper), None, None


class _SphericalBessel(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, order, kind):
        ctx.save_for_backward(x)
        ctx.order = order
        ctx.kind = kind
        values = _SPHERICAL[kind](order, x.detach().cpu().numpy())
        return torch.as_tensor(values, dtype=x.dtype, device=x.device)

    @staticmethod
    def backward(ctx, grad_output):
        (x,) = ctx.saved_tensors
        n, kind = ctx.order, ctx.kind
        upper = _SphericalBessel.apply(x, n + 1, kind)
        if n == 0:
            return -grad_output * upper, None, None
        lower = _SphericalBessel.apply(x, n - 1, kind)
        derivative = (n * lower - (n + 1) * upper) / (2 * n + 1)
        return grad_output * derivative, None, None


def torch_bessel_j(n: int, x: torch.Tensor) -> torch.Tensor:
    return _CylindricalBessel.apply(x, int(n), "j")


def torch_bessel_y(n: int, x: torch.Tensor) -> torch.Tensor:
    return _CylindricalBessel.apply(x, int(n), "y")


def torch_hankel1(n: int, x: torch.Tensor) -> torch.Tensor:
    return torch.complex(torch_bessel_j(n, x), torch_bessel_y(n, x))


def torch_spherical_hankel1(n: int, x: torch.Tensor) -> torch.Tensor:
    return torch.complex(
        _SphericalBessel.apply(x, int(n), "j"),
        _SphericalBessel.apply(x, int(n), "y"),
    )


def torch_legendre_p(max_order: int, t: torch.Tensor) -> list[torch.Tensor]:
    """P_0..P_max_order at t by Bonnet recurrence (differentiable in t)."""
    values = [torch.ones_like(t), t]
    for n in range(1, max_order):
        values.append(((2 * n + 1) * t * values[n] - n * values[n - 1]) / (n + 1))
    return values[: max_order + 1]
