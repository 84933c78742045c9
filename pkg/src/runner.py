"""
Scenario orchestration: problem assembly, training, scoring and artifacts.

A run builds the hard-constraint field (or the soft-constraint baseline)
for one ScenarioConfig, trains or reloads it, evaluates prediction and
reference on a fixed test grid and writes

    field.csv, metrics.json, loss_history.csv, config.yaml, checkpoint.bin
    heatmap.ppm (optional), surface.csv (canyon)

into the run directory.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import torch
from torch import nn

import network
from ansatz import AnsatzSpec, AsymptoticFactor, WavenumberModel, sommerfeld_defect
from baseline_pinn import BaselineField, baseline_samples, build_baseline_field, run_baseline, soft_loss
from errors import CheckpointError, ConfigError, MapwaveError, OracleUnavailableError
from geometry import (
    BoundaryData,
    GeometrySpec,
    background_field_canyon,
    canyon_neumann,
    cartesian_to_polar,
    constant_dirichlet,
    direction_vector,
    sound_hard,
    sound_soft,
)
from mapping import XI_CEILING, MapSpec, inverse_map
from oracles import (
    FDM_MIN_POINTS,
    OracleField,
    canyon_series,
    canyon_surface_points,
    mfs_solve,
    mie2d_field,
    mie3d_field,
    radial_fdm,
    radiation_field,
)
from residual import POLE_BAND, ResidualSpec
from scenario_config import ScenarioConfig, save_config
from training import TrainState, default_bounds, latin_hypercube, loss, train, write_loss_history


logger = logging.getLogger(__name__)

EVAL_CHUNK = 4096
FIELD_FORMAT = "%.17g"
METRIC_KEYS = (
    "scenario",
    "k",
    "rel_l2_complex",
    "rel_l2_real",
    "max_abs_err",
    "final_loss",
    "adam_iters",
    "lbfgs_iters",
    "wall_seconds",
    "seed",
)


# ---------------------------------------------------------------------------
# Problem assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Problem:
    config: ScenarioConfig
    geometry: GeometrySpec
    map_spec: MapSpec
    wavenumber: WavenumberModel
    boundary: BoundaryData
    residual: ResidualSpec
    ansatz: AnsatzSpec
    periodic_axes: tuple

    @property
    def k(self) -> float:
        return self.wavenumber.k_inf

    @property
    def dimension(self) -> int:
        return self.geometry.dimension

    @property
    def coords(self) -> int:
        return self.residual.coords

    def layer_sizes(self) -> tuple:
        if self.config.method == "baseline":
            return network.layer_sizes_for(2, (1,), self.config.network.hidden_layers, self.config.network.width)
        return network.layer_sizes_for(
            self.coords, self.periodic_axes, self.config.network.hidden_layers, self.config.network.width
        )

    def net_periodic_axes(self) -> tuple:
        return (1,) if self.config.method == "baseline" else self.periodic_axes


def _is_axisymmetric(config: ScenarioConfig) -> bool:
    g = config.geometry
    if config.boundary.theta_inc != 0.0:
        return False
    return g.kind == "sphere" or (g.kind == "ellipsoid" and g.b == g.c)


def _residual_form(config: ScenarioConfig, angle_dependent: bool) -> str:
    form = config.residual_form
    if config.dimension == 3:
        if form == "auto":
            return "spherical_axisym" if _is_axisymmetric(config) else "spherical_full"
        if form == "spherical_axisym" and not _is_axisymmetric(config):
            raise ConfigError("spherical_axisym needs an axisymmetric scatterer and incidence along +x")
        return form
    if form == "auto":
        return "chain_rule_general" if angle_dependent else "explicit_polar"
    if form == "explicit_polar" and angle_dependent:
        raise ConfigError("explicit_polar needs a constant boundary radius")
    return form


def _boundary_data(config: ScenarioConfig, geometry: GeometrySpec, k: float) -> BoundaryData:
    theta_inc = float(config.boundary.theta_inc)
    if config.problem == "radiation":
        return constant_dirichlet(config.boundary.u0)
    if config.problem == "canyon":
        return canyon_neumann(k, theta_inc, float(geometry.params["radius"]))
    if config.boundary.condition == "neumann":
        return sound_hard(geometry, k, theta_inc)
    return sound_soft(geometry, k, theta_inc)


def build_problem(config: ScenarioConfig) -> Problem:
    geometry = config.geometry_spec
    if geometry.is_circular:
        map_spec = MapSpec(geometry.reference_radius, config.map.scale)
    else:
        map_spec = MapSpec(geometry.reference_radius, config.map.scale, geometry.boundary_radius)
    wavenumber = config.wavenumber_model()
    form = _residual_form(config, map_spec.angle_dependent)
    residual = ResidualSpec(form, map_spec, wavenumber if not wavenumber.is_constant else wavenumber.k_inf, geometry.dimension)
    boundary = _boundary_data(config, geometry, wavenumber.k_inf)
    if boundary.kind == "neumann":
        kind = "neumann_shielded"
    elif not wavenumber.is_constant:
        kind = "wkb_radial"
    else:
        kind = "dirichlet_radial"
    factor = AsymptoticFactor(wavenumber, geometry.dimension, map_spec.r_in)
    ansatz = AnsatzSpec(kind, geometry, boundary, map_spec, factor)
    if geometry.dimension == 2:
        periodic_axes = (1,)
    else:
        periodic_axes = (2,) if residual.coords == 3 else ()
    return Problem(config, geometry, map_spec, wavenumber, boundary, residual, ansatz, periodic_axes)


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def available_oracles(config: ScenarioConfig) -> list[str]:
    kind = config.geometry.kind
    dirichlet = config.boundary.condition == "dirichlet"
    if config.problem == "radiation":
        return ["radiation_exact", "radial_fdm"] if config.wavenumber.alpha == 0.0 else ["radial_fdm"]
    if config.problem == "canyon":
        return ["canyon_series"]
    names: list[str] = []
    if kind == "circle":
        names.append("mie2d")
    if kind == "sphere" and config.boundary.theta_inc == 0.0:
        names.append("mie3d")
    if dirichlet:
        names.append("mfs")
    return names


def build_oracle(problem: Problem) -> OracleField:
    config = problem.config
    available = available_oracles(config)
    requested = config.oracle.name
    name = available[0] if requested == "auto" and available else requested
    if name not in available:
        raise OracleUnavailableError(requested, available)
    geometry = problem.geometry
    k = problem.k
    theta_inc = float(config.boundary.theta_inc)
    condition = config.boundary.condition
    if name == "radiation_exact":
        return radiation_field(k, config.boundary.u0, problem.map_spec.r_in)
    if name == "radial_fdm":
        r_in = problem.map_spec.r_in
        r_max = max(20.0 / k + 10.0, r_in + config.grid.radial_extent + 1.0)
        n_grid = max(int(config.oracle.fdm_points), FDM_MIN_POINTS)
        return radial_fdm(
            problem.wavenumber, config.boundary.u0, r_max, n_grid, r0=r_in, outgoing=config.oracle.fdm_outgoing
        )
    if name == "mie2d":
        return mie2d_field(k, geometry.reference_radius, condition=condition, theta_inc=theta_inc, n_max=config.oracle.n_max)
    if name == "mie3d":
        return mie3d_field(k, geometry.reference_radius, condition=condition, n_max=config.oracle.n_max)
    if name == "mfs":
        return mfs_solve(geometry, k, problem.boundary, config.oracle.n_sources)
    return canyon_series(k, float(geometry.params["radius"]), theta_inc, config.oracle.n_max)


# ---------------------------------------------------------------------------
# Test grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoringGrid:
    """Cartesian evaluation points with their polar coordinates.

    ``image_index`` lays a subset of the points out as a 2D raster for the
    heatmap; -1 marks pixels with no point (inside a scatterer).
    """

    points: np.ndarray
    radius: np.ndarray
    angles: tuple
    image_index: np.ndarray

    @property
    def count(self) -> int:
        return int(self.points.shape[0])


def annulus_grid(geometry: GeometrySpec, extent: float, radial_points: int, angular_points: int, *, lower_half: bool = False) -> ScoringGrid:
    """Tensor grid r = r_b(theta) + s, s in [0, extent]; the canyon keeps y <= 0."""
    offsets = np.linspace(0.0, extent, radial_points)
    if lower_half:
        theta = np.linspace(math.pi, 2.0 * math.pi, angular_points)
    else:
        theta = 2.0 * math.pi * np.arange(angular_points) / angular_points
    radius = geometry.boundary_radius(theta)[None, :] + offsets[:, None]
    theta_grid = np.broadcast_to(theta[None, :], radius.shape)
    points = radius[..., None] * direction_vector(theta_grid)
    index = np.arange(radius.size).reshape(radius.shape)
    return ScoringGrid(points.reshape(-1, 2), radius.reshape(-1), (theta_grid.reshape(-1),), index)


def slice_grid(geometry: GeometrySpec, count: int, margin: float) -> ScoringGrid:
    """x = 0, y = 0 and z = 0 planes; points inside the scatterer are skipped."""
    half = geometry.max_radius + margin
    axis = np.linspace(-half, half, count)
    u, v = np.meshgrid(axis, axis, indexing="ij")
    chunks = []
    image_index = None
    total = 0
    for fixed in (0, 1, 2):
        free = [i for i in range(3) if i != fixed]
        plane = np.zeros(u.shape + (3,))
        plane[..., free[0]] = u
        plane[..., free[1]] = v
        flat = plane.reshape(-1, 3)
        r, theta, phi = cartesian_to_polar(flat)
        outside = (r > 0.0) & (r >= geometry.boundary_radius(theta, phi))
        index = np.full(flat.shape[0], -1)
        index[outside] = total + np.arange(int(outside.sum()))
        total += int(outside.sum())
        chunks.append(flat[outside])
        if fixed == 2:
            image_index = index.reshape(u.shape)
    points = np.concatenate(chunks)
    r, theta, phi = cartesian_to_polar(points)
    return ScoringGrid(points, r, (theta, phi), image_index)


def scoring_grid(problem: Problem) -> ScoringGrid:
    grid = problem.config.grid
    if problem.dimension == 3:
        return slice_grid(problem.geometry, grid.slice_points, grid.slice_margin)
    return annulus_grid(
        problem.geometry,
        grid.radial_extent,
        grid.radial_points,
        grid.angular_points,
        lower_half=problem.config.problem == "canyon",
    )


def computational_points(problem: Problem, radius: np.ndarray, angles: Sequence[np.ndarray]) -> np.ndarray:
    angles = list(angles)[: problem.coords - 1]
    xi = inverse_map(problem.map_spec, radius, *angles)
    # Points on the boundary may round just below xi = -1.
    xi = np.clip(xi, -1.0, XI_CEILING)
    return np.stack([xi, *angles], -1)


# ---------------------------------------------------------------------------
# Training and evaluation
# ---------------------------------------------------------------------------


@dataclass
class TrainedField:
    module: nn.Module
    net: network.EnvelopeNet
    state: TrainState
    failure: str = ""


def _mh_pinn_module(problem: Problem, net: network.EnvelopeNet) -> nn.Module:
    return problem.ansatz.build(net)


def _objective(problem: Problem, module: nn.Module):
    config = problem.config
    if config.method == "baseline":
        samples = baseline_samples(config.baseline, problem.map_spec.r_in, config.sampling.seed)
        return lambda: soft_loss(module, samples, config.baseline, problem.k, problem.boundary)
    samples = latin_hypercube(
        config.sampling.points, default_bounds(problem.coords, problem.dimension), config.sampling.seed
    )
    return lambda: loss(module, samples, problem.residual)


def train_field(problem: Problem) -> TrainedField:
    config = problem.config
    net = network.init(problem.layer_sizes(), config.network.seed, problem.net_periodic_axes())
    logger.info(
        "training %s (%s, %d parameters, k=%g)", config.name, config.method, net.param_count, problem.k
    )
    if config.method == "baseline":
        outcome = run_baseline(
            net,
            config.baseline,
            config.schedule,
            problem.k,
            problem.boundary,
            problem.map_spec.r_in,
            config.sampling.seed,
        )
        return TrainedField(outcome.field, net, outcome.state, outcome.failure)
    module = _mh_pinn_module(problem, net)
    state = TrainState(module, _objective(problem, module))
    train(config.schedule, state)
    return TrainedField(module, net, state)


def load_field(problem: Problem, checkpoint: Path) -> TrainedField:
    """Rebuild the field from a checkpoint and score its loss without training."""
    params, extra = network.load_checkpoint(checkpoint)
    expected = problem.layer_sizes()
    if tuple(params.layer_sizes) != tuple(expected):
        raise CheckpointError(
            f"checkpoint layer sizes {list(params.layer_sizes)} do not match the config {list(expected)}"
        )
    method = extra.get("method")
    if method and method != problem.config.method:
        raise CheckpointError(f"checkpoint was trained with method '{method}', config asks for '{problem.config.method}'")
    net = network.from_params(params)
    if problem.config.method == "baseline":
        module: nn.Module = build_baseline_field(
            net, problem.config.baseline, problem.boundary, problem.map_spec.r_in
        )
    else:
        module = _mh_pinn_module(problem, net)
    state = TrainState(module, _objective(problem, module))
    state.record("eval", 0, float(state.objective().detach()))
    return TrainedField(module, net, state)


def predict(problem: Problem, module: nn.Module, radius: np.ndarray, angles: Sequence[np.ndarray]) -> np.ndarray:
    """Field values at polar points, evaluated in chunks."""
    if isinstance(module, BaselineField):
        inputs = np.stack([radius, angles[0]], -1)
    else:
        inputs = computational_points(problem, radius, angles)
    out = np.empty(len(inputs), dtype=np.complex128)
    for start in range(0, len(inputs), EVAL_CHUNK):
        chunk = torch.as_tensor(inputs[start:start + EVAL_CHUNK], dtype=torch.float64)
        with torch.no_grad():
            values = module(chunk)
        out[start:start + EVAL_CHUNK] = values.detach().numpy()
    return out


def total_field(problem: Problem, points: np.ndarray, scattered: np.ndarray) -> np.ndarray:
    """Canyon fields are scored as background plus scattered wave."""
    if problem.config.problem != "canyon":
        return scattered
    background, _ = background_field_canyon(problem.k, float(problem.config.boundary.theta_inc), points)
    return background + scattered


def error_metrics(pred: np.ndarray, ref: np.ndarray) -> dict:
    diff = pred - ref
    return {
        "rel_l2_complex": float(np.linalg.norm(diff) / np.linalg.norm(ref)),
        "rel_l2_real": float(np.linalg.norm(diff.real) / np.linalg.norm(ref.real)),
        "max_abs_err": float(np.max(np.abs(diff))),
    }


def corner_mask(geometry: GeometrySpec, points: np.ndarray, radius: float) -> np.ndarray:
    """True for points farther than ``radius`` from every polygon vertex."""
    vertices = geometry.vertices()
    if not len(vertices):
        return np.ones(len(points), dtype=bool)
    distance = np.linalg.norm(points[:, None, :] - vertices[None, :, :], axis=-1)
    return np.min(distance, axis=1) > radius


@dataclass(frozen=True)
class SurfaceProfile:
    xs: np.ndarray
    abs_pred: np.ndarray
    abs_ref: np.ndarray

    @property
    def rel_l2_abs(self) -> float:
        return float(np.linalg.norm(self.abs_pred - self.abs_ref) / np.linalg.norm(self.abs_ref))

    @property
    def symmetry_defect(self) -> float:
        # xs is symmetric about 0, so reversing pairs u(x) with u(-x).
        return float(np.max(np.abs(self.abs_pred - self.abs_pred[::-1])) / np.max(self.abs_pred))


def surface_profile(problem: Problem, module: nn.Module, oracle: OracleField) -> SurfaceProfile:
    a = float(problem.geometry.params["radius"])
    xs = np.linspace(-3.0 * a, 3.0 * a, problem.config.grid.surface_points)
    points = canyon_surface_points(a, xs)
    r, theta = cartesian_to_polar(points)
    r = np.maximum(r, a)
    pred = total_field(problem, points, predict(problem, module, r, (theta,)))
    return SurfaceProfile(xs, np.abs(pred), np.abs(oracle(points)))


def mean_sommerfeld_defect(problem: Problem, module: nn.Module, count: int = 64) -> float:
    """Average far-field defect on the xi = XI_CEILING shell."""
    if problem.dimension == 2:
        theta = 2.0 * math.pi * np.arange(count) / count
        points = np.stack([np.full(count, XI_CEILING), theta], -1)
    else:
        theta = np.linspace(POLE_BAND, math.pi - POLE_BAND, count)
        if problem.coords == 3:
            side = int(math.sqrt(count)) or 1
            theta = np.linspace(POLE_BAND, math.pi - POLE_BAND, side)
            phi = 2.0 * math.pi * np.arange(side) / side
            t, p = np.meshgrid(theta, phi, indexing="ij")
            points = np.stack([np.full(t.size, XI_CEILING), t.reshape(-1), p.reshape(-1)], -1)
        else:
            points = np.stack([np.full(count, XI_CEILING), theta], -1)
    defect = sommerfeld_defect(module, problem.k, points, problem.map_spec, problem.dimension)
    return float(np.mean(defect))


@dataclass
class Evaluation:
    grid: ScoringGrid
    pred: np.ndarray
    ref: np.ndarray
    metrics: dict
    surface: Optional[SurfaceProfile] = None


def evaluate(problem: Problem, trained: TrainedField, oracle: OracleField) -> Evaluation:
    grid = scoring_grid(problem)
    pred = total_field(problem, grid.points, predict(problem, trained.module, grid.radius, grid.angles))
    ref = oracle(grid.points)
    metrics = error_metrics(pred, ref)
    if problem.geometry.kind == "regular_polygon":
        keep = corner_mask(problem.geometry, grid.points, problem.config.grid.corner_radius)
        metrics["rel_l2_corner_excluded"] = error_metrics(pred[keep], ref[keep])["rel_l2_complex"]
    surface = None
    if problem.config.problem == "canyon":
        surface = surface_profile(problem, trained.module, oracle)
        metrics["surface"] = {"rel_l2_abs": surface.rel_l2_abs, "symmetry_defect": surface.symmetry_defect}
    if problem.config.method == "mh_pinn" and not trained.failure:
        metrics["sommerfeld_defect"] = mean_sommerfeld_defect(problem, trained.module)
    return Evaluation(grid, pred, ref, metrics, surface)


# ---------------------------------------------------------------------------
# Writers
# ---------------------------------------------------------------------------


def write_field_csv(path: Path, points: np.ndarray, pred: np.ndarray, ref: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    axes = ["x", "y", "z"][: points.shape[1]]
    header = ",".join([*axes, "re_pred", "im_pred", "re_ref", "im_ref", "abs_err"])
    table = np.column_stack([points, pred.real, pred.imag, ref.real, ref.imag, np.abs(pred - ref)])
    with open(path, "w", encoding="utf-8", newline="") as f:
        np.savetxt(f, table, fmt=FIELD_FORMAT, delimiter=",", header=header, comments="")
    return path


def read_field_csv(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (points, pred, ref) from a field.csv."""
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
        table = np.loadtxt(f, delimiter=",", ndmin=2)
    dim = header.index("re_pred")
    pred = table[:, dim] + 1j * table[:, dim + 1]
    ref = table[:, dim + 2] + 1j * table[:, dim + 3]
    return table[:, :dim], pred, ref


def _json_safe(value: Any) -> Any:
    if isinstance(value, dict):
        return {key: _json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(item) for item in value]
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_metrics(path: Path, metrics: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_json_safe(metrics), f, indent=2)
        f.write("\n")
    return path


def diverging_colors(values: np.ndarray, limit: float) -> np.ndarray:
    """Blue-white-red RGB bytes over [-limit, limit]; NaN pixels are grey."""
    t = np.clip(np.nan_to_num(values / limit if limit > 0 else values * 0.0), -1.0, 1.0)
    white = np.array([255.0, 255.0, 255.0])
    blue = np.array([33.0, 102.0, 172.0])
    red = np.array([178.0, 24.0, 43.0])
    weight = np.abs(t)[..., None]
    rgb = np.where(t[..., None] < 0.0, white + weight * (blue - white), white + weight * (red - white))
    rgb[np.isnan(values)] = 128.0
    return np.round(rgb).astype(np.uint8)


def write_heatmap(path: Path, panels: Sequence[np.ndarray], gap: int = 4) -> Path:
    """Binary PPM (P6) of side-by-side panels on a shared symmetric range."""
    finite = [np.abs(panel[np.isfinite(panel)]) for panel in panels]
    limit = max((float(np.max(values)) for values in finite if values.size), default=1.0)
    height = max(panel.shape[0] for panel in panels)
    spacer = np.full((height, gap), np.nan)
    columns: list[np.ndarray] = []
    for index, panel in enumerate(panels):
        padded = np.full((height, panel.shape[1]), np.nan)
        padded[: panel.shape[0]] = panel
        if index:
            columns.append(spacer)
        columns.append(padded)
    image = diverging_colors(np.hstack(columns), limit)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(f"P6\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii"))
        f.write(image.tobytes())
    return path


def raster(grid: ScoringGrid, values: np.ndarray) -> np.ndarray:
    safe = np.where(grid.image_index >= 0, grid.image_index, 0)
    return np.where(grid.image_index >= 0, values[safe], np.nan)


def write_surface_csv(path: Path, surface: SurfaceProfile) -> Path:
    path = Path(path)
    table = np.column_stack([surface.xs, surface.abs_pred, surface.abs_ref])
    with open(path, "w", encoding="utf-8", newline="") as f:
        np.savetxt(f, table, fmt=FIELD_FORMAT, delimiter=",", header="x,abs_pred,abs_ref", comments="")
    return path


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    scenario: str
    metrics: dict
    out_dir: Path
    artifacts: dict = field(default_factory=dict)

    @property
    def rel_l2(self) -> float:
        return self.metrics["rel_l2_complex"]


def output_dir(config: ScenarioConfig, app_config: dict | None = None) -> Path:
    if config.output.directory:
        return Path(config.output.directory).expanduser()
    root = ((app_config or {}).get("app") or {}).get("output_root") or "runs"
    return Path(root).expanduser() / config.name


def _metrics(problem: Problem, trained: TrainedField, evaluation: Evaluation, oracle: OracleField, wall: float) -> dict:
    config = problem.config
    state = trained.state
    metrics: dict[str, Any] = {
        "scenario": config.name,
        "k": problem.k,
        "rel_l2_complex": evaluation.metrics["rel_l2_complex"],
        "rel_l2_real": evaluation.metrics["rel_l2_real"],
        "max_abs_err": evaluation.metrics["max_abs_err"],
        "final_loss": state.final_loss,
        "adam_iters": state.adam_iters,
        "lbfgs_iters": state.lbfgs_iters,
        "wall_seconds": wall,
        "seed": config.network.seed,
    }
    metrics.update({key: value for key, value in evaluation.metrics.items() if key not in metrics})
    metrics.update(
        {
            "method": config.method,
            "problem": config.problem,
            "oracle": oracle.name,
            "sampling_seed": config.sampling.seed,
            "param_count": trained.net.param_count,
            "stop_reason": state.stop_reason,
        }
    )
    warning = oracle.metadata.get("warning")
    if warning:
        metrics["oracle_warning"] = warning
    if trained.failure:
        metrics["failure"] = trained.failure
    return metrics


def _write_artifacts(
    problem: Problem, trained: TrainedField, evaluation: Evaluation, metrics: dict, out: Path
) -> dict[str, Path]:
    config = problem.config
    artifacts = {
        "field": write_field_csv(out / "field.csv", evaluation.grid.points, evaluation.pred, evaluation.ref),
        "metrics": write_metrics(out / "metrics.json", metrics),
    }
    if trained.state.history:
        artifacts["loss_history"] = write_loss_history(out / "loss_history.csv", trained.state.history)
    artifacts["config"] = save_config(config.to_mapping(), out / "config.yaml")
    if config.output.checkpoint and not trained.failure:
        extra = {"scenario": config.name, "method": config.method, "k": problem.k}
        artifacts["checkpoint"] = network.save_checkpoint(out / "checkpoint.bin", trained.net.get_params(), extra)
    if config.output.heatmap:
        grid = evaluation.grid
        panels = [raster(grid, evaluation.pred.real), raster(grid, evaluation.ref.real)]
        artifacts["heatmap"] = write_heatmap(out / "heatmap.ppm", panels)
    if evaluation.surface is not None:
        artifacts["surface"] = write_surface_csv(out / "surface.csv", evaluation.surface)
    return artifacts


def run_scenario(config: ScenarioConfig, *, resume: Optional[Path] = None, app_config: dict | None = None) -> RunReport:
    """Train (or reload) one scenario, score it against its oracle, write artifacts."""
    out = output_dir(config, app_config)
    problem = build_problem(config)
    oracle = build_oracle(problem)
    started = time.perf_counter()
    trained = load_field(problem, Path(resume)) if resume else train_field(problem)
    evaluation = evaluate(problem, trained, oracle)
    wall = time.perf_counter() - started
    metrics = _metrics(problem, trained, evaluation, oracle, wall)
    artifacts = _write_artifacts(problem, trained, evaluation, metrics, out)
    logger.info(
        "%s finished: rel_l2=%.3e final_loss=%.3e (%.1fs)",
        config.name,
        metrics["rel_l2_complex"],
        metrics["final_loss"],
        wall,
    )
    return RunReport(config.name, metrics, out, artifacts)


def evaluate_field(config: ScenarioConfig, checkpoint: Path, *, app_config: dict | None = None) -> RunReport:
    """Re-evaluate a saved field on the test grid: field.csv and metrics.json only."""
    out = output_dir(config, app_config)
    problem = build_problem(config)
    oracle = build_oracle(problem)
    started = time.perf_counter()
    trained = load_field(problem, Path(checkpoint))
    evaluation = evaluate(problem, trained, oracle)
    metrics = _metrics(problem, trained, evaluation, oracle, time.perf_counter() - started)
    artifacts = {
        "field": write_field_csv(out / "field.csv", evaluation.grid.points, evaluation.pred, evaluation.ref),
        "metrics": write_metrics(out / "metrics.json", metrics),
    }
    if config.output.heatmap:
        grid = evaluation.grid
        artifacts["heatmap"] = write_heatmap(
            out / "heatmap.ppm", [raster(grid, evaluation.pred.real), raster(grid, evaluation.ref.real)]
        )
    return RunReport(config.name, metrics, out, artifacts)


def export_oracle(config: ScenarioConfig, *, app_config: dict | None = None) -> RunReport:
    """Evaluate the reference alone on the test grid: oracle.csv and oracle.json."""
    out = output_dir(config, app_config)
    problem = build_problem(config)
    oracle = build_oracle(problem)
    grid = scoring_grid(problem)
    values = oracle(grid.points)
    out.mkdir(parents=True, exist_ok=True)
    axes = ["x", "y", "z"][: grid.points.shape[1]]
    table = np.column_stack([grid.points, values.real, values.imag])
    csv_path = out / "oracle.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        np.savetxt(f, table, fmt=FIELD_FORMAT, delimiter=",", header=",".join([*axes, "re_ref", "im_ref"]), comments="")
    summary = {
        "scenario": config.name,
        "k": problem.k,
        "oracle": oracle.name,
        "validity": oracle.validity,
        "points": grid.count,
        "metadata": oracle.metadata,
    }
    json_path = write_metrics(out / "oracle.json", summary)
    return RunReport(config.name, summary, out, {"oracle": csv_path, "summary": json_path})


@dataclass
class SweepRow:
    k: float
    status: str
    rel_l2_complex: float = float("nan")
    rel_l2_real: float = float("nan")
    wall_seconds: float = float("nan")
    error: str = ""


@dataclass
class SweepReport:
    rows: list
    reports: list
    summary_path: Path


def write_sweep_summary(path: Path, rows: Sequence[SweepRow]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("k,status,rel_l2_complex,rel_l2_real,wall_seconds,error\n")
        for row in rows:
            error = row.error.replace(",", ";").replace("\n", " ")
            f.write(
                f"{row.k!r},{row.status},{row.rel_l2_complex!r},{row.rel_l2_real!r},{row.wall_seconds!r},{error}\n"
            )
    return path


def sweep(config: ScenarioConfig, k_list: Sequence[float], *, app_config: dict | None = None) -> SweepReport:
    """Independent seeded runs, one per k; failures are recorded and the sweep continues."""
    if not k_list:
        raise ConfigError("sweep needs a non-empty k list")
    root = output_dir(config, app_config)
    rows: list[SweepRow] = []
    reports: list[RunReport] = []
    for k in k_list:
        run_config = config.with_k(k).with_output(root / f"k_{float(k):g}")
        try:
            report = run_scenario(run_config, app_config=app_config)
        except MapwaveError as exc:
            logger.warning("sweep run k=%g failed: %s", k, exc)
            rows.append(SweepRow(float(k), "failed", error=str(exc)))
            continue
        reports.append(report)
        status = "diverged" if report.metrics.get("failure") else "ok"
        rows.append(
            SweepRow(
                float(k),
                status,
                report.metrics["rel_l2_complex"],
                report.metrics["rel_l2_real"],
                report.metrics["wall_seconds"],
                report.metrics.get("failure", ""),
            )
        )
    summary = write_sweep_summary(root / "summary.csv", rows)
    return SweepReport(rows, reports, summary)
