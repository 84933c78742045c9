"""
Fully connected envelope network N(xi, theta[, phi]; w).

Two real outputs are assembled into one complex value. Periodic
coordinates are fed as (sin, cos) pairs so the network is 2*pi-periodic
in them by construction.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from diff_engine import Jet, jet_eval
from errors import CheckpointError, DomainError


logger = logging.getLogger(__name__)

ACTIVATIONS = {"tanh": nn.Tanh}
CHECKPOINT_MAGIC = "mapwave-checkpoint"


def count_parameters(layer_sizes: Sequence[int]) -> int:
    return sum(n_in * n_out + n_out for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]))


def layer_sizes_for(coords: int, periodic_axes: Sequence[int], hidden_layers: int, width: int) -> tuple:
    """Layer sizes with the input width implied by the periodic encoding."""
    return (coords + len(tuple(periodic_axes)), *([width] * hidden_layers), 2)


@dataclass(frozen=True)
class NetParams:
    layer_sizes: tuple
    vector: np.ndarray
    activation: str = "tanh"
    seed: int | None = None
    periodic_axes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        expected = count_parameters(self.layer_sizes)
        if self.vector.shape != (expected,):
            raise CheckpointError(
                f"parameter vector has {self.vector.size} entries, layer sizes need {expected}"
            )
        if not np.all(np.isfinite(self.vector)):
            raise CheckpointError("parameter vector contains non-finite entries")

    @property
    def count(self) -> int:
        return int(self.vector.size)


class EnvelopeNet(nn.Module):
    """tanh MLP mapping computational coordinates to a complex value."""

    def __init__(self, layer_sizes: Sequence[int], periodic_axes: Sequence[int] = (), activation: str = "tanh"):
        super().__init__()
        layer_sizes = tuple(int(n) for n in layer_sizes)
        if len(layer_sizes) < 3:
            raise DomainError("network needs at least one hidden layer")
        if layer_sizes[-1] != 2:
            raise DomainError("network must have two outputs (real, imaginary)")
        if activation not in ACTIVATIONS:
            raise DomainError(f"Unsupported activation: {activation}")
        self.layer_sizes = layer_sizes
        self.periodic_axes = tuple(int(a) for a in periodic_axes)
        self.activation = activation
        self.coords = layer_sizes[0] - len(self.periodic_axes)
        layers: list[nn.Module] = []
        for index, (n_in, n_out) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
            layers.append(nn.Linear(n_in, n_out, dtype=torch.float64))
            if index < len(layer_sizes) - 2:
                layers.append(ACTIVATIONS[activation]())
        self.body = nn.Sequential(*layers)
        self.seed: int | None = None

    def encode(self, points: torch.Tensor) -> torch.Tensor:
        if points.shape[-1] != self.coords:
            raise DomainError(f"network expects {self.coords} coordinates, got {points.shape[-1]}")
        columns = []
        for axis in range(self.coords):
            column = points[:, axis]
            if axis in self.periodic_axes:
                columns.extend([torch.sin(column), torch.cos(column)])
            else:
                columns.append(column)
        return torch.stack(columns, dim=-1)

    def channels(self, points: torch.Tensor) -> torch.Tensor:
        return self.body(self.encode(points))

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        out = self.channels(points)
        return torch.complex(out[:, 0], out[:, 1])

    @property
    def param_count(self) -> int:
        return count_parameters(self.layer_sizes)

    def get_params(self) -> NetParams:
        vector = nn.utils.parameters_to_vector(self.parameters()).detach().cpu().numpy().copy()
        return NetParams(self.layer_sizes, vector, self.activation, self.seed, self.periodic_axes)

    def set_params(self, params: NetParams | np.ndarray) -> None:
        vector = params.vector if isinstance(params, NetParams) else np.asarray(params, dtype=np.float64)
        if vector.shape != (self.param_count,):
            raise CheckpointError(f"expected {self.param_count} parameters, got {vector.size}")
        with torch.no_grad():
            nn.utils.vector_to_parameters(torch.as_tensor(vector, dtype=torch.float64), self.parameters())


def init(layer_sizes: Sequence[int], seed: int, periodic_axes: Sequence[int] = (), activation: str = "tanh") -> EnvelopeNet:
    """Glorot-uniform weights, zero biases, reproducible from ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        net = EnvelopeNet(layer_sizes, periodic_axes, activation)
        for module in net.modules():
            if isinstance(module, nn.Linear):
                nn.init.xavier_uniform_(module.weight)
                nn.init.zeros_(module.bias)
    net.seed = int(seed)
    return net


def from_params(params: NetParams) -> EnvelopeNet:
    net = EnvelopeNet(params.layer_sizes, params.periodic_axes, params.activation)
    net.set_params(params)
    net.seed = params.seed
    return net


def forward_jet(net: EnvelopeNet, points, *, create_graph: bool = False) -> Jet:
    return jet_eval(net, points, create_graph=create_graph)


# ---------------------------------------------------------------------------
# Checkpoints: one JSON header line, then little-endian float64 parameters.
# ---------------------------------------------------------------------------


def save_checkpoint(path: Path, params: NetParams, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format": CHECKPOINT_MAGIC,
        "layer_sizes": list(params.layer_sizes),
        "activation": params.activation,
        "seed": params.seed,
        "periodic_axes": list(params.periodic_axes),
        "count": params.count,
    }
    if extra:
        header["extra"] = extra
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        f.write(params.vector.astype("<f8").tobytes())
    return path


def load_checkpoint(path: Path) -> tuple[NetParams, dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    raw = path.read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise CheckpointError(f"Checkpoint header missing: {path}")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"Unreadable checkpoint header: {path}") from exc
    if header.get("format") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"Not a mapwave checkpoint: {path}")
    payload = raw[newline + 1:]
    if len(payload) != 8 * int(header["count"]):
        raise CheckpointError("Checkpoint payload length does not match its header")
    vector = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    params = NetParams(
        tuple(header["layer_sizes"]),
        vector,
        header.get("activation", "tanh"),
        header.get("seed"),
        tuple(header.get("periodic_axes", ())),
    )
    return params, header.get("extra", {})
