"""
Scenario configuration: YAML loading, preset resolution and validation.

Config files are plain YAML. User files are merged over the packaged
defaults without overwriting user values; runtime metadata is attached
under ``__``-prefixed keys and stripped again before anything is saved.
"""

from __future__ import annotations

import math
import os
from copy import deepcopy
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable, Optional

import yaml

from ansatz import WavenumberModel
from app_paths import config_path as default_user_config_path, read_resource_text
from baseline_pinn import SoftLossSpec
from errors import ConfigError, DomainError
from geometry import GEOMETRY_KINDS, GeometrySpec
from residual import RESIDUAL_FORMS
from training import TrainSchedule


RUNTIME_KEY_PREFIX = "__"
THREADS_ENV = "MAPWAVE_THREADS"
PROBLEMS = ("radiation", "scattering", "canyon")
METHODS = ("mh_pinn", "baseline")
ORACLE_NAMES = ("auto", "radiation_exact", "radial_fdm", "mie2d", "mie3d", "mfs", "canyon_series")


def serialize_config_for_save(value: Any) -> Any:
    """Recursively strip runtime-only metadata before writing YAML."""
    if isinstance(value, dict):
        serialized = {}
        for key, item in value.items():
            if isinstance(key, str) and key.startswith(RUNTIME_KEY_PREFIX):
                continue
            serialized[key] = serialize_config_for_save(item)
        return serialized
    if isinstance(value, (list, tuple)):
        return [serialize_config_for_save(item) for item in value]
    return value


def _load_packaged_defaults() -> dict:
    return yaml.safe_load(read_resource_text("default_config.yaml")) or {}


def _deep_merge_missing(config: Any, defaults: Any) -> Any:
    """Fill missing config keys from defaults without overwriting values."""
    if not isinstance(config, dict) or not isinstance(defaults, dict):
        return config
    for key, default_value in defaults.items():
        if key not in config:
            config[key] = deepcopy(default_value)
        elif isinstance(config[key], dict) and isinstance(default_value, dict):
            _deep_merge_missing(config[key], default_value)
    return config


def load_yaml_config(path: str | Path | None = None) -> tuple[dict, Optional[Path]]:
    """Load a YAML config merged over the packaged defaults.

    With no path the user config under the data directory is used when it
    exists, otherwise the packaged defaults alone.
    """
    defaults = _load_packaged_defaults()
    if path is None:
        candidate = default_user_config_path()
        if not candidate.exists():
            defaults["__config_path__"] = None
            defaults["__config_dir__"] = str(Path.cwd())
            return defaults, None
        path = candidate

    resolved = Path(path).expanduser()
    if not resolved.is_absolute():
        resolved = Path.cwd() / resolved
    if not resolved.exists():
        raise ConfigError(f"Config file not found: {resolved}")

    try:
        with open(resolved, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"Config file is not valid YAML: {resolved}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"Config file must hold a mapping at the top level: {resolved}")

    data = _deep_merge_missing(data, defaults)
    data["__config_path__"] = str(resolved)
    data["__config_dir__"] = str(resolved.parent)
    return data, resolved


def save_config(config: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(serialize_config_for_save(config), f, sort_keys=False)
    return path


def coerce_csv(value: Any) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [part.strip() for part in value.split(",") if part.strip()]
    if isinstance(value, Iterable):
        return [str(part).strip() for part in value if str(part).strip()]
    return [str(value).strip()]


def parse_k_list(value: Any) -> list[float]:
    items = coerce_csv(value)
    if not items:
        raise ConfigError("k list must not be empty")
    try:
        ks = [float(item) for item in items]
    except ValueError as exc:
        raise ConfigError(f"k list must hold numbers, got {value!r}") from exc
    if any(not k > 0.0 for k in ks):
        raise ConfigError("every k in the list must be > 0")
    return ks


# ---------------------------------------------------------------------------
# Typed sections
# ---------------------------------------------------------------------------


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


@dataclass(frozen=True)
class GeometryConfig:
    kind: str = "circle"
    radius: float = 1.0
    a: float = 2.0
    b: float = 1.0
    c: float = 1.0
    n_sides: int = 4
    circumradius: float = math.sqrt(2.0)
    rotation: float = 0.0

    def __post_init__(self):
        _require(self.kind in GEOMETRY_KINDS, f"geometry.kind must be one of {', '.join(GEOMETRY_KINDS)}")
        for name in ("radius", "a", "b", "c", "circumradius"):
            _require(float(getattr(self, name)) > 0.0, f"geometry.{name} must be > 0")
        _require(int(self.n_sides) >= 3, "geometry.n_sides must be >= 3")

    def to_spec(self) -> GeometrySpec:
        try:
            if self.kind in ("circle", "sphere"):
                return getattr(GeometrySpec, self.kind)(self.radius)
            if self.kind == "canyon_cavity":
                return GeometrySpec.canyon_cavity(self.radius)
            if self.kind == "ellipse":
                return GeometrySpec.ellipse(self.a, self.b)
            if self.kind == "ellipsoid":
                return GeometrySpec.ellipsoid(self.a, self.b, self.c)
            return GeometrySpec.regular_polygon(self.n_sides, self.circumradius, self.rotation)
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class WavenumberConfig:
    k: float = 1.0
    alpha: float = 0.0
    decay: float = 1.0
    eta: Optional[float] = None

    def __post_init__(self):
        _require(float(self.k) > 0.0, "wavenumber.k must be > 0")
        _require(float(self.alpha) >= 0.0, "wavenumber.alpha must be >= 0")
        _require(float(self.decay) > 0.0, "wavenumber.decay must be > 0")
        _require(self.eta is None or float(self.eta) > 0.0, "wavenumber.eta must be > 0")

    def model(self, k: float, r0: float) -> WavenumberModel:
        return WavenumberModel(float(k), float(self.alpha), float(self.decay), float(r0))


@dataclass(frozen=True)
class BoundaryConfig:
    condition: str = "dirichlet"
    u0: float = 100.0
    theta_inc: float = 0.0

    def __post_init__(self):
        _require(self.condition in ("dirichlet", "neumann"), "boundary.condition must be dirichlet or neumann")


@dataclass(frozen=True)
class MapConfig:
    scale: float = 2.0

    def __post_init__(self):
        _require(float(self.scale) > 0.0, "map.scale must be > 0")


@dataclass(frozen=True)
class NetworkConfig:
    hidden_layers: int = 4
    width: int = 64
    seed: int = 0
    activation: str = "tanh"

    def __post_init__(self):
        _require(int(self.hidden_layers) >= 1, "network.hidden_layers must be >= 1")
        _require(int(self.width) >= 1, "network.width must be >= 1")
        _require(self.activation == "tanh", "network.activation must be tanh")


@dataclass(frozen=True)
class SamplingConfig:
    points: int = 4000
    seed: int = 1

    def __post_init__(self):
        _require(int(self.points) >= 1, "sampling.points must be >= 1")


@dataclass(frozen=True)
class OracleConfig:
    name: str = "auto"
    n_sources: Optional[int] = None
    n_max: Optional[int] = None
    fdm_points: int = 20000
    fdm_outgoing: str = "dtn"

    def __post_init__(self):
        _require(self.name in ORACLE_NAMES, f"oracle.name must be one of {', '.join(ORACLE_NAMES)}")
        _require(self.n_sources is None or int(self.n_sources) >= 4, "oracle.n_sources must be >= 4")
        _require(self.fdm_outgoing in ("first_order", "dtn"), "oracle.fdm_outgoing must be first_order or dtn")


@dataclass(frozen=True)
class GridConfig:
    radial_extent: float = 5.0
    radial_points: int = 200
    angular_points: int = 200
    slice_points: int = 81
    slice_margin: float = 3.0
    surface_points: int = 601
    corner_radius: float = 0.1

    def __post_init__(self):
        _require(float(self.radial_extent) > 0.0, "grid.radial_extent must be > 0")
        for name in ("radial_points", "angular_points", "slice_points", "surface_points"):
            _require(int(getattr(self, name)) >= 2, f"grid.{name} must be >= 2")
        _require(float(self.slice_margin) > 0.0, "grid.slice_margin must be > 0")
        _require(float(self.corner_radius) >= 0.0, "grid.corner_radius must be >= 0")


@dataclass(frozen=True)
class OutputConfig:
    directory: Optional[str] = None
    heatmap: bool = False
    checkpoint: bool = True


SECTIONS = {
    "geometry": GeometryConfig,
    "wavenumber": WavenumberConfig,
    "boundary": BoundaryConfig,
    "map": MapConfig,
    "network": NetworkConfig,
    "sampling": SamplingConfig,
    "schedule": TrainSchedule,
    "oracle": OracleConfig,
    "grid": GridConfig,
    "baseline": SoftLossSpec,
    "output": OutputConfig,
}
SCALARS = ("problem", "method", "residual_form", "description")


def _build_section(cls, section: str, raw: Any):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"Config section '{section}' must be a mapping")
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(str(key) for key in raw if key not in allowed)
    if unknown:
        raise ConfigError(f"Unknown key '{unknown[0]}' in section '{section}'")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"Invalid values in section '{section}': {exc}") from exc


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    problem: str = "radiation"
    method: str = "mh_pinn"
    residual_form: str = "auto"
    description: str = ""
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    wavenumber: WavenumberConfig = field(default_factory=WavenumberConfig)
    boundary: BoundaryConfig = field(default_factory=BoundaryConfig)
    map: MapConfig = field(default_factory=MapConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    baseline: SoftLossSpec = field(default_factory=SoftLossSpec)
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        _require(self.problem in PROBLEMS, f"problem must be one of {', '.join(PROBLEMS)}")
        _require(self.method in METHODS, f"method must be one of {', '.join(METHODS)}")
        _require(
            self.residual_form == "auto" or self.residual_form in RESIDUAL_FORMS,
            f"residual_form must be auto or one of {', '.join(RESIDUAL_FORMS)}",
        )
        kind = self.geometry.kind
        if self.problem == "radiation":
            _require(kind == "circle", "radiation problems use a circle geometry")
            _require(self.boundary.condition == "dirichlet", "radiation problems use Dirichlet data")
        elif self.problem == "canyon":
            _require(kind == "canyon_cavity", "canyon problems use the canyon_cavity geometry")
            _require(self.boundary.condition == "neumann", "canyon problems use Neumann data")
        else:
            _require(kind != "canyon_cavity", "canyon_cavity geometry belongs to the canyon problem")
            _require(self.wavenumber.alpha == 0.0, "scattering problems use a constant wavenumber")
        if self.boundary.condition == "neumann" and self.problem != "canyon":
            _require(kind in ("circle", "sphere"), "Neumann data is supported on circles and spheres only")
        if self.method == "baseline":
            _require(
                kind == "circle" and self.boundary.condition == "dirichlet",
                "the baseline method supports Dirichlet problems on a circle",
            )
        self.baseline.validate(self.geometry_spec.reference_radius)

    # -- construction -------------------------------------------------------

    @classmethod
    def from_mapping(cls, name: str, mapping: dict) -> "ScenarioConfig":
        if not isinstance(mapping, dict):
            raise ConfigError(f"Scenario '{name}' must be a mapping")
        mapping = serialize_config_for_save(mapping)
        unknown = sorted(str(key) for key in mapping if key not in SECTIONS and key not in SCALARS)
        if unknown:
            raise ConfigError(f"Unknown key '{unknown[0]}' in scenario '{name}'")
        scalars = {key: str(mapping[key]) for key in SCALARS if mapping.get(key) is not None}
        sections = {
            section: _build_section(section_cls, section, mapping.get(section))
            for section, section_cls in SECTIONS.items()
        }
        return cls(name=str(name), **scalars, **sections)

    def to_mapping(self) -> dict:
        mapping: dict[str, Any] = {key: getattr(self, key) for key in SCALARS}
        for section in SECTIONS:
            mapping[section] = asdict(getattr(self, section))
        return mapping

    def apply_overrides(self, overrides: dict[str, Any]) -> "ScenarioConfig":
        """Return a new config with dotted-path values replaced, then revalidate."""
        mapping = self.to_mapping()
        for dotted_path, value in overrides.items():
            if value is None:
                continue
            parts = [part for part in str(dotted_path).split(".") if part]
            if not parts:
                raise ConfigError("override path cannot be empty")
            node = mapping
            for part in parts[:-1]:
                child = node.get(part)
                if not isinstance(child, dict):
                    raise ConfigError(f"Unknown config section in override: {dotted_path}")
                node = child
            node[parts[-1]] = value
        return ScenarioConfig.from_mapping(self.name, mapping)

    def with_k(self, k: float) -> "ScenarioConfig":
        mapping = self.to_mapping()
        mapping["wavenumber"]["k"] = float(k)
        mapping["wavenumber"]["eta"] = None
        return ScenarioConfig.from_mapping(self.name, mapping)

    def with_output(self, directory: str | Path) -> "ScenarioConfig":
        return replace(self, output=replace(self.output, directory=str(directory)))

    # -- derived ------------------------------------------------------------

    @property
    def geometry_spec(self) -> GeometrySpec:
        return self.geometry.to_spec()

    @property
    def k(self) -> float:
        """Background wavenumber; canyon presets may give eta = k a / pi instead."""
        if self.problem == "canyon" and self.wavenumber.eta is not None:
            return float(self.wavenumber.eta) * math.pi / float(self.geometry.radius)
        return float(self.wavenumber.k)

    @property
    def dimension(self) -> int:
        return self.geometry_spec.dimension

    def wavenumber_model(self) -> WavenumberModel:
        return self.wavenumber.model(self.k, self.geometry_spec.reference_radius)


def scenario_names(config: dict) -> list[str]:
    scenarios = config.get("scenarios") or {}
    return sorted(scenarios) if isinstance(scenarios, dict) else []


def resolve_scenario(config: dict, name: str) -> ScenarioConfig:
    """Merge a named preset over the shared ``defaults`` section and validate it."""
    scenarios = config.get("scenarios") or {}
    if name not in scenarios:
        raise ConfigError(f"Unknown scenario '{name}'; available: {', '.join(scenario_names(config)) or 'none'}")
    merged = _deep_merge_missing(deepcopy(scenarios[name] or {}), deepcopy(config.get("defaults") or {}))
    return ScenarioConfig.from_mapping(name, merged)


def resolve_threads(cli_value: Optional[int], config: dict | None = None) -> Optional[int]:
    """--threads, then MAPWAVE_THREADS, then app.threads."""
    raw: Any = cli_value
    source = "--threads"
    if raw is None:
        raw = os.getenv(THREADS_ENV) or None
        source = THREADS_ENV
    if raw is None and config:
        raw = (config.get("app") or {}).get("threads")
        source = "app.threads"
    if raw is None:
        return None
    try:
        threads = int(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source} must be an integer, got {raw!r}") from exc
    if threads < 1:
        raise ConfigError(f"{source} must be >= 1, got {threads}")
    return threads
