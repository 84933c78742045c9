"""
Derivative jets and parameter gradients.

A jet bundles a complex field value with its first and second partials
with respect to the evaluation coordinates. Jets are produced by nested
torch autograd (exact to rounding); with ``create_graph=True`` the jet
stays attached to the network parameters so a loss built from it can be
back-propagated.

Batch reductions use a fixed pairwise order so a loss is bit-reproducible
regardless of the thread count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from errors import DomainError, NonFiniteLossError


@dataclass
class Jet:
    """Complex value, gradient (N, D) and Hessian (N, D, D) per point."""

    value: torch.Tensor
    grad: torch.Tensor
    hess: torch.Tensor

    @property
    def dim(self) -> int:
        return int(self.grad.shape[-1])

    def d1(self, i: int) -> torch.Tensor:
        return self.grad[:, i]

    def d2(self, i: int, j: int) -> torch.Tensor:
        return self.hess[:, i, j]

    def detach(self) -> "Jet":
        return Jet(self.value.detach(), self.grad.detach(), self.hess.detach())


# Coordinate names for the two jet shapes used by the residuals.
Jet2 = Jet
Jet3 = Jet


def _grad(output: torch.Tensor, inputs: torch.Tensor, create_graph: bool) -> torch.Tensor:
    if not output.requires_grad:
        return torch.zeros_like(inputs)
    (g,) = torch.autograd.grad(
        output, inputs, create_graph=create_graph, retain_graph=True, allow_unused=True
    )
    return torch.zeros_like(inputs) if g is None else g


def _real_jet(part: torch.Tensor, x: torch.Tensor, create_graph: bool):
    grad = _grad(part.sum(), x, create_graph=True)
    rows = [_grad(grad[:, j].sum(), x, create_graph=create_graph) for j in range(x.shape[1])]
    hess = torch.stack(rows, dim=1)
    if not create_graph:
        grad = grad.detach()
    return grad, hess


def jet_eval(field: Callable[[torch.Tensor], torch.Tensor], points, *, create_graph: bool = False) -> Jet:
    """Evaluate ``field`` at ``points`` (N, D) with first and second partials.

    ``field`` must act row-wise: output i may depend only on input row i.
    """
    points = torch.as_tensor(points, dtype=torch.float64)
    if points.ndim != 2:
        raise DomainError(f"points must have shape (N, D), got {tuple(points.shape)}")
    x = points.detach().clone().requires_grad_(True)
    with torch.enable_grad():
        value = field(x)
        if not isinstance(value, torch.Tensor) or value.shape != (points.shape[0],):
            raise DomainError("field must return one value per point")
        if not torch.is_complex(value):
            value = value.to(torch.complex128)
        grad_re, hess_re = _real_jet(value.real, x, create_graph)
        grad_im, hess_im = _real_jet(value.imag, x, create_graph)
    jet = Jet(value, torch.complex(grad_re, grad_im), torch.complex(hess_re, hess_im))
    return jet if create_graph else jet.detach()


def pairwise_sum(values: torch.Tensor) -> torch.Tensor:
    """Sum in a fixed binary-tree order (zero padded to a power of two)."""
    flat = values.reshape(-1)
    count = flat.numel()
    if count == 0:
        return flat.new_zeros(())
    size = 1 << (count - 1).bit_length()
    if size != count:
        flat = torch.cat([flat, flat.new_zeros(size - count)])
    while flat.numel() > 1:
        flat = flat[0::2] + flat[1::2]
    return flat[0]


def pairwise_mean(values: torch.Tensor) -> torch.Tensor:
    return pairwise_sum(values) / values.numel()


def mean_squared_modulus(residual: torch.Tensor) -> torch.Tensor:
    """(1/N) sum |residual_i|^2, refusing non-finite entries."""
    squared = residual.real**2 + residual.imag**2 if torch.is_complex(residual) else residual**2
    finite = torch.isfinite(squared)
    if not bool(finite.all()):
        index = int(torch.nonzero(~finite)[0, 0])
        raise NonFiniteLossError(index, complex(residual[index].detach()))
    return pairwise_mean(squared)


@dataclass(frozen=True)
class ParamGradient:
    loss: float
    vector: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))


def flat_gradient(loss: torch.Tensor, parameters: list[torch.Tensor]) -> torch.Tensor:
    grads = torch.autograd.grad(loss, parameters, allow_unused=True)
    return torch.cat(
        [torch.zeros_like(p).reshape(-1) if g is None else g.reshape(-1) for g, p in zip(grads, parameters)]
    )


def loss_grad(module: torch.nn.Module, batch, residual_fn: Callable) -> ParamGradient:
    """Loss (mean |residual|^2 over the batch) and its exact parameter gradient."""
    parameters = [p for p in module.parameters() if p.requires_grad]
    loss = mean_squared_modulus(residual_fn(batch))
    vector = flat_gradient(loss, parameters)
    return ParamGradient(loss=float(loss.detach()), vector=vector.detach().cpu().numpy())
