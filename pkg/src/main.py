#!/usr/bin/env python3
"""
mapwave - Hard-constraint PINN solver for exterior Helmholtz problems.

Main application entry point.
"""

import argparse
import importlib.util
import logging
import math
import platform
import sys
import warnings
from typing import Callable, Optional

import numpy as np
import torch

from app_paths import describe_paths, ensure_default_config
from errors import MapwaveError
from runner import evaluate_field, export_oracle, run_scenario, sweep
from scenario_config import (
    ScenarioConfig,
    load_yaml_config,
    parse_k_list,
    resolve_scenario,
    resolve_threads,
    scenario_names,
)


logger = logging.getLogger("mapwave")

DEFAULT_SCENARIO = "radiation_circle"


def _configure_runtime_output(config: dict):
    """Set up logging once and quiet third-party noise for normal runs."""
    app_cfg = config.get("app", {})
    verbose_logs = bool(app_cfg.get("verbose_logs", False))
    suppress_third_party = bool(app_cfg.get("suppress_third_party_warnings", True))

    logging.basicConfig(
        level=logging.DEBUG if verbose_logs else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )

    if verbose_logs or not suppress_third_party:
        return

    warnings.filterwarnings("ignore", category=UserWarning, module=r"torch\..*")
    warnings.filterwarnings("ignore", category=FutureWarning, module=r"torch\..*")

    for logger_name in ("torch", "matplotlib"):
        logging.getLogger(logger_name).setLevel(logging.ERROR)


def _configure_threads(args: argparse.Namespace, config: dict):
    threads = resolve_threads(getattr(args, "threads", None), config)
    if threads is not None:
        torch.set_num_threads(threads)
        logger.debug("torch intra-op threads: %d", threads)


def _module_available(name: str) -> bool:
    """Check whether a Python module can be resolved without importing it."""
    return importlib.util.find_spec(name) is not None


def _doctor_line(status: str, label: str, detail: str):
    print(f"[{status}] {label}: {detail}")


def show_paths() -> int:
    """Print the current config/data locations."""
    print("mapwave paths:")
    for name, path in describe_paths().items():
        print(f"  {name}: {path}")
    return 0


def init_config() -> int:
    """Write the packaged defaults to the user config path if it is missing."""
    path = ensure_default_config()
    print(f"Config: {path}")
    return 0


def _scenario_from_args(args: argparse.Namespace, config: dict) -> ScenarioConfig:
    scenario = resolve_scenario(config, args.scenario)
    if getattr(args, "k", None) is not None:
        scenario = scenario.with_k(args.k)
    overrides = {
        "network.seed": args.seed,
        "sampling.seed": args.seed,
        "sampling.points": args.points,
        "baseline.interior_points": args.points,
        "schedule.adam_iters": args.adam_iters,
        "schedule.lbfgs_max_iters": args.lbfgs_iters,
        "output.directory": args.out,
        "output.heatmap": True if args.heatmap else None,
        "method": "baseline" if getattr(args, "baseline", False) else None,
    }
    return scenario.apply_overrides(overrides)


def _print_report(report) -> None:
    print(f"Scenario: {report.scenario}")
    for key in ("k", "rel_l2_complex", "rel_l2_real", "max_abs_err", "final_loss"):
        if key in report.metrics and report.metrics[key] is not None:
            print(f"  {key}: {report.metrics[key]:.6g}")
    if report.metrics.get("failure"):
        print(f"  failure: {report.metrics['failure']}")
    print(f"Output directory: {report.out_dir}")
    for name, path in report.artifacts.items():
        print(f"  {name}: {path}")


def command_run(args: argparse.Namespace, config: dict) -> int:
    scenario = _scenario_from_args(args, config)
    report = run_scenario(scenario, resume=args.resume, app_config=config)
    _print_report(report)
    return 0


def command_sweep(args: argparse.Namespace, config: dict) -> int:
    scenario = _scenario_from_args(args, config)
    result = sweep(scenario, parse_k_list(args.k_list), app_config=config)
    print(f"Sweep: {scenario.name} ({len(result.rows)} runs)")
    for row in result.rows:
        detail = f"rel_l2={row.rel_l2_complex:.3e}" if row.status != "failed" else row.error
        print(f"  k={row.k:g} [{row.status}] {detail}")
    print(f"Summary: {result.summary_path}")
    return 0


def command_evaluate(args: argparse.Namespace, config: dict) -> int:
    scenario = _scenario_from_args(args, config)
    report = evaluate_field(scenario, args.checkpoint, app_config=config)
    _print_report(report)
    return 0


def command_oracle(args: argparse.Namespace, config: dict) -> int:
    scenario = _scenario_from_args(args, config)
    report = export_oracle(scenario, app_config=config)
    print(f"Oracle: {report.metrics['oracle']} ({report.metrics['points']} points)")
    for name, path in report.artifacts.items():
        print(f"  {name}: {path}")
    return 0


# ---------------------------------------------------------------------------
# selftest: quick invariant checks in doctor style
# ---------------------------------------------------------------------------


def _check_dirichlet_exactness() -> str:
    import network
    from ansatz import AnsatzSpec, AsymptoticFactor, WavenumberModel
    from geometry import GeometrySpec, constant_dirichlet
    from mapping import MapSpec

    geometry = GeometrySpec.circle(1.0)
    boundary = constant_dirichlet(100.0)
    map_spec = MapSpec(1.0, 2.0)
    factor = AsymptoticFactor(WavenumberModel(3.0), 2, 1.0)
    spec = AnsatzSpec("dirichlet_radial", geometry, boundary, map_spec, factor)
    field = spec.build(network.init((3, 16, 16, 2), seed=7, periodic_axes=(1,)))
    theta = torch.linspace(0.0, 2.0 * math.pi, 257, dtype=torch.float64)
    points = torch.stack([torch.full_like(theta, -1.0), theta], -1)
    with torch.no_grad():
        defect = float(torch.max(torch.abs(field(points) - 100.0)))
    if defect > 1e-12:
        raise AssertionError(f"boundary defect {defect:.3e}")
    return f"max |u - g| = {defect:.1e}"


def _check_hankel_residual() -> str:
    from complex_special import torch_hankel1
    from mapping import MapSpec, forward_map
    from residual import ResidualSpec

    k = 2.0
    map_spec = MapSpec(1.0, 2.0)

    def exact(points: torch.Tensor) -> torch.Tensor:
        r = forward_map(map_spec, points[:, 0], points[:, 1])
        return torch_hankel1(0, k * r)

    rng = np.random.default_rng(0)
    points = np.stack([rng.uniform(-1.0, 0.99, 200), rng.uniform(0.0, 2.0 * math.pi, 200)], -1)
    residual = ResidualSpec("explicit_polar", map_spec, k).evaluate(exact, points, create_graph=False)
    worst = float(torch.max(torch.abs(residual)))
    if worst > 1e-7:
        raise AssertionError(f"residual {worst:.3e}")
    return f"max |residual| = {worst:.1e}"


def _check_oracles() -> str:
    from geometry import GeometrySpec, sound_soft
    from oracles import mfs_solve, mie2d_field

    geometry = GeometrySpec.circle(1.0)
    mie = mie2d_field(1.0, 1.0)
    mfs = mfs_solve(geometry, 1.0, sound_soft(geometry, 1.0))
    rng = np.random.default_rng(1)
    r = rng.uniform(1.1, 5.0, 400)
    theta = rng.uniform(0.0, 2.0 * math.pi, 400)
    points = np.stack([r * np.cos(theta), r * np.sin(theta)], -1)
    ref = mie(points)
    error = float(np.linalg.norm(mfs(points) - ref) / np.linalg.norm(ref))
    if error > 1e-8:
        raise AssertionError(f"mie2d vs mfs rel_l2 {error:.3e}")
    return f"mie2d vs mfs rel_l2 = {error:.1e}"


def run_selftest(config: dict) -> int:
    """Run fast invariant checks and report them one line each."""
    print("=== mapwave selftest ===")
    failures = 0
    _doctor_line("OK", "Python", f"{platform.python_version()} ({platform.system()} {platform.release()})")

    required_modules = {"numpy": "numpy", "scipy": "scipy", "torch": "torch", "yaml": "PyYAML"}
    missing = [label for module_name, label in required_modules.items() if not _module_available(module_name)]
    if missing:
        _doctor_line("FAIL", "Dependencies", "Missing modules: " + ", ".join(sorted(missing)))
        return 3
    _doctor_line("OK", "Dependencies", "All required Python modules are installed")

    names = scenario_names(config)
    try:
        for name in names:
            resolve_scenario(config, name)
        _doctor_line("OK", "Scenarios", f"{len(names)} presets validate")
    except MapwaveError as exc:
        failures += 1
        _doctor_line("FAIL", "Scenarios", str(exc))

    checks: list[tuple[str, Callable[[], str]]] = [
        ("Dirichlet hard constraint", _check_dirichlet_exactness),
        ("Hankel residual", _check_hankel_residual),
        ("Oracle agreement", _check_oracles),
    ]
    for label, check in checks:
        try:
            _doctor_line("OK", label, check())
        except (AssertionError, MapwaveError) as exc:
            failures += 1
            _doctor_line("FAIL", label, str(exc))

    return 3 if failures else 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--scenario', default=DEFAULT_SCENARIO, help='Scenario preset name')
    common.add_argument('--config', type=str, default=None, help='Path to configuration file')
    common.add_argument('--out', type=str, default=None, help='Output directory for this run')
    common.add_argument('--k', type=float, default=None, help='Override the background wavenumber')
    common.add_argument('--seed', type=int, default=None, help='Network and sampling seed')
    common.add_argument('--points', type=int, default=None, help='Number of collocation points')
    common.add_argument('--adam-iters', type=int, default=None, help='Adam iterations')
    common.add_argument('--lbfgs-iters', type=int, default=None, help='Maximum L-BFGS iterations')
    common.add_argument('--heatmap', action='store_true', help='Also write heatmap.ppm')
    common.add_argument('--threads', type=int, default=None, help='torch intra-op threads (default: MAPWAVE_THREADS)')
    common.add_argument('--verbose', action='store_true', help='Enable DEBUG logs (developer mode)')
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="mapwave",
        description="mapwave - Hard-constraint PINN solver for exterior Helmholtz problems",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser('run', parents=[common], help='Train one scenario and score it')
    run.add_argument('--baseline', action='store_true', help='Train the soft-constraint baseline instead')
    run.add_argument('--resume', type=str, default=None, help='Skip training and re-evaluate this checkpoint')
    run.set_defaults(handler=command_run)

    sweep_cmd = commands.add_parser('sweep', parents=[common], help='Run one scenario for several wavenumbers')
    sweep_cmd.add_argument('--k-list', required=True, help='Comma-separated wavenumbers, e.g. 1,3,5')
    sweep_cmd.add_argument('--baseline', action='store_true', help='Sweep the soft-constraint baseline')
    sweep_cmd.set_defaults(handler=command_sweep)

    evaluate = commands.add_parser('evaluate', parents=[common], help='Re-evaluate a checkpoint on the test grid')
    evaluate.add_argument('--checkpoint', required=True, help='Checkpoint written by a previous run')
    evaluate.set_defaults(handler=command_evaluate)

    oracle = commands.add_parser('oracle', parents=[common], help='Evaluate the reference solution alone')
    oracle.set_defaults(handler=command_oracle)

    selftest = commands.add_parser('selftest', help='Run quick invariant checks')
    selftest.add_argument('--config', type=str, default=None, help='Path to configuration file')
    selftest.add_argument('--threads', type=int, default=None, help='torch intra-op threads')
    selftest.add_argument('--verbose', action='store_true', help='Enable DEBUG logs')
    selftest.set_defaults(handler=None)

    paths = commands.add_parser('show-paths', help='Show the current config/data paths')
    paths.set_defaults(handler=None)

    init = commands.add_parser('init-config', help='Copy the default config into the data directory')
    init.set_defaults(handler=None)
    return parser


def main(argv: Optional[list] = None) -> int:
    """Main entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "show-paths":
        return show_paths()
    if args.command == "init-config":
        return init_config()

    try:
        config, _ = load_yaml_config(args.config)
        if args.verbose:
            config.setdefault("app", {})["verbose_logs"] = True
        _configure_runtime_output(config)
        _configure_threads(args, config)
        if args.command == "selftest":
            return run_selftest(config)
        return args.handler(args, config)
    except MapwaveError as exc:
        logger.debug("command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == '__main__':
    sys.exit(main())
