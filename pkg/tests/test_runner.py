import json
import math
import os
import sys
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np
import torch
import yaml


REPO_ROOT = Path(__file__).resolve().parents[1]
SRC_ROOT = REPO_ROOT / "src"
if str(SRC_ROOT) not in sys.path:
    sys.path.insert(0, str(SRC_ROOT))

import runner
from errors import CheckpointError, ConfigError, DomainError, OracleUnavailableError
from geometry import GeometrySpec
from scenario_config import THREADS_ENV, ScenarioConfig, load_yaml_config, resolve_scenario


TINY = {
    "schedule.adam_iters": 3,
    "schedule.lbfgs_max_iters": 2,
    "schedule.log_every": 0,
    "sampling.points": 64,
    "network.hidden_layers": 1,
    "network.width": 8,
    "grid.radial_points": 12,
    "grid.angular_points": 16,
    "grid.surface_points": 41,
    "grid.slice_points": 9,
    "baseline.interior_points": 64,
    "baseline.boundary_points": 16,
}

SLOW_TESTS = os.getenv("MAPWAVE_SLOW_TESTS") == "1"


def _without_timing(path: Path) -> list[str]:
    return [line for line in path.read_text(encoding="utf-8").splitlines() if '"wall_seconds"' not in line]


class RunnerTestCase(unittest.TestCase):
    def setUp(self):
        self.tempdir = tempfile.TemporaryDirectory()
        self.addCleanup(self.tempdir.cleanup)
        self.env_patch = patch.dict(os.environ, {"MAPWAVE_HOME": self.tempdir.name}, clear=False)
        self.env_patch.start()
        self.addCleanup(self.env_patch.stop)
        os.environ.pop(THREADS_ENV, None)
        threads = torch.get_num_threads()
        torch.set_num_threads(1)
        self.addCleanup(torch.set_num_threads, threads)
        self.app_config, _ = load_yaml_config(None)

    def preset(self, name: str, **overrides) -> ScenarioConfig:
        return resolve_scenario(self.app_config, name).apply_overrides(overrides)

    def tiny(self, name: str, out: str = "run", **overrides) -> ScenarioConfig:
        config = self.preset(name, **{**TINY, **overrides})
        return config.with_output(Path(self.tempdir.name) / out)


class ProblemAssemblyTests(RunnerTestCase):
    def test_preset_residual_forms_and_ansatz_kinds(self):
        expected = {
            "radiation_circle": ("explicit_polar", "dirichlet_radial"),
            "radiation_variable_k": ("explicit_polar", "wkb_radial"),
            "scatter_ellipse": ("chain_rule_general", "dirichlet_radial"),
            "scatter_square": ("chain_rule_general", "dirichlet_radial"),
            "scatter_sphere": ("spherical_axisym", "dirichlet_radial"),
            "scatter_ellipsoid": ("spherical_axisym", "dirichlet_radial"),
            "sh_canyon": ("explicit_polar", "neumann_shielded"),
        }
        for name, (form, kind) in expected.items():
            with self.subTest(name=name):
                problem = runner.build_problem(self.preset(name))
                self.assertEqual(problem.residual.form, form)
                self.assertEqual(problem.ansatz.kind, kind)

    def test_variable_k_problem_carries_the_wavenumber_model(self):
        problem = runner.build_problem(self.preset("radiation_variable_k"))

        self.assertFalse(problem.wavenumber.is_constant)
        self.assertEqual(problem.k, 3.0)

    def test_periodic_axes_and_coordinates(self):
        circle = runner.build_problem(self.preset("radiation_circle"))
        sphere = runner.build_problem(self.preset("scatter_sphere"))
        oblique = runner.build_problem(self.preset("scatter_sphere", **{"boundary.theta_inc": 0.5}))

        self.assertEqual((circle.coords, circle.periodic_axes), (2, (1,)))
        self.assertEqual((sphere.coords, sphere.periodic_axes), (2, ()))
        self.assertEqual(oblique.residual.form, "spherical_full")
        self.assertEqual((oblique.coords, oblique.periodic_axes), (3, (2,)))

    def test_explicit_polar_is_rejected_on_an_ellipse(self):
        with self.assertRaises(ConfigError):
            runner.build_problem(self.preset("scatter_ellipse", residual_form="explicit_polar"))

    def test_axisymmetric_form_needs_axial_incidence(self):
        config = self.preset("scatter_sphere", residual_form="spherical_axisym", **{"boundary.theta_inc": 0.5})

        with self.assertRaises(ConfigError):
            runner.build_problem(config)

    def test_canyon_wavenumber_comes_from_eta(self):
        problem = runner.build_problem(self.preset("sh_canyon"))

        self.assertAlmostEqual(problem.k, math.pi, places=14)
        self.assertEqual(problem.boundary.kind, "neumann")

    def test_baseline_layer_sizes_take_raw_polar_inputs(self):
        problem = runner.build_problem(self.preset("radiation_circle", method="baseline", **{"network.width": 8}))

        self.assertEqual(problem.net_periodic_axes(), (1,))
        self.assertEqual(problem.layer_sizes()[-1], 2)
        self.assertEqual(problem.layer_sizes()[1], 8)


class OracleSelectionTests(RunnerTestCase):
    def test_available_oracles_per_preset(self):
        self.assertEqual(runner.available_oracles(self.preset("radiation_circle")), ["radiation_exact", "radial_fdm"])
        self.assertEqual(runner.available_oracles(self.preset("radiation_variable_k")), ["radial_fdm"])
        self.assertEqual(runner.available_oracles(self.preset("scatter_circle")), ["mie2d", "mfs"])
        self.assertEqual(runner.available_oracles(self.preset("scatter_ellipse")), ["mfs"])
        self.assertEqual(runner.available_oracles(self.preset("scatter_sphere")), ["mie3d", "mfs"])
        self.assertEqual(runner.available_oracles(self.preset("sh_canyon")), ["canyon_series"])

    def test_sound_hard_circle_only_has_the_series(self):
        config = self.preset("scatter_circle", **{"boundary.condition": "neumann"})

        self.assertEqual(runner.available_oracles(config), ["mie2d"])

    def test_oblique_sphere_falls_back_to_sources(self):
        config = self.preset("scatter_sphere", **{"boundary.theta_inc": 0.5})

        self.assertEqual(runner.available_oracles(config), ["mfs"])

    def test_unavailable_oracle_lists_the_alternatives(self):
        problem = runner.build_problem(self.preset("scatter_ellipse", **{"oracle.name": "mie2d"}))

        with self.assertRaises(OracleUnavailableError) as ctx:
            runner.build_oracle(problem)

        self.assertEqual(ctx.exception.available, ["mfs"])

    def test_auto_picks_the_first_available_oracle(self):
        oracle = runner.build_oracle(runner.build_problem(self.preset("radiation_circle")))

        self.assertEqual(oracle.name, "radiation_exact")


class GridTests(unittest.TestCase):
    def test_annulus_grid_spans_the_test_band(self):
        grid = runner.annulus_grid(GeometrySpec.circle(1.0), 5.0, 12, 16)

        self.assertEqual(grid.count, 192)
        self.assertEqual(grid.image_index.shape, (12, 16))
        self.assertAlmostEqual(float(np.min(grid.radius)), 1.0, places=14)
        self.assertAlmostEqual(float(np.max(grid.radius)), 6.0, places=14)
        np.testing.assert_allclose(np.linalg.norm(grid.points, axis=1), grid.radius, rtol=1e-14)

    def test_annulus_grid_follows_an_angle_dependent_boundary(self):
        geometry = GeometrySpec.ellipse(2.0, 1.0)
        grid = runner.annulus_grid(geometry, 5.0, 4, 8)

        inner = grid.radius[:8]
        np.testing.assert_allclose(inner, geometry.boundary_radius(grid.angles[0][:8]), rtol=1e-14)

    def test_lower_half_grid_stays_below_the_ground(self):
        grid = runner.annulus_grid(GeometrySpec.canyon_cavity(1.0), 5.0, 6, 9, lower_half=True)

        self.assertTrue(np.all(grid.points[:, 1] <= 1e-12))

    def test_slice_grid_skips_the_scatterer(self):
        geometry = GeometrySpec.sphere(1.0)
        grid = runner.slice_grid(geometry, 9, 3.0)

        self.assertTrue(np.all(grid.radius >= 1.0))
        self.assertEqual(grid.image_index.shape, (9, 9))
        self.assertEqual(grid.image_index[4, 4], -1)
        self.assertEqual(len(grid.angles), 2)
        self.assertLess(int(np.max(grid.image_index)), grid.count)

    def test_raster_marks_missing_pixels(self):
        grid = runner.slice_grid(GeometrySpec.sphere(1.0), 9, 3.0)
        image = runner.raster(grid, np.arange(grid.count, dtype=float))

        self.assertTrue(np.isnan(image[4, 4]))
        self.assertEqual(image[0, 0], float(grid.image_index[0, 0]))


class MetricHelperTests(unittest.TestCase):
    def test_error_metrics_on_a_known_difference(self):
        ref = np.array([3.0 + 4.0j, 0.0 + 0.0j])
        pred = ref + np.array([0.5, 0.0])
        metrics = runner.error_metrics(pred, ref)

        self.assertAlmostEqual(metrics["rel_l2_complex"], 0.1, places=15)
        self.assertAlmostEqual(metrics["rel_l2_real"], 0.5 / 3.0, places=15)
        self.assertAlmostEqual(metrics["max_abs_err"], 0.5, places=15)

    def test_corner_mask_drops_points_near_vertices(self):
        square = GeometrySpec.regular_polygon(4, math.sqrt(2.0))
        vertex = square.vertices()[0]
        points = np.array([vertex * 1.02, [3.0, 0.0]])

        np.testing.assert_array_equal(runner.corner_mask(square, points, 0.1), [False, True])

    def test_corner_mask_keeps_everything_on_smooth_boundaries(self):
        points = np.array([[1.0, 0.0], [0.0, 2.0]])

        self.assertTrue(np.all(runner.corner_mask(GeometrySpec.circle(1.0), points, 0.1)))

    def test_diverging_colors(self):
        colors = runner.diverging_colors(np.array([0.0, 1.0, -1.0, float("nan")]), 1.0)

        np.testing.assert_array_equal(colors[0], [255, 255, 255])
        np.testing.assert_array_equal(colors[1], [178, 24, 43])
        np.testing.assert_array_equal(colors[2], [33, 102, 172])
        np.testing.assert_array_equal(colors[3], [128, 128, 128])

    def test_heatmap_is_a_binary_ppm(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = runner.write_heatmap(Path(tmp) / "map.ppm", [np.zeros((3, 5)), np.ones((2, 4))], gap=2)
            data = path.read_bytes()

        header = b"P6\n11 3\n255\n"
        self.assertTrue(data.startswith(header))
        self.assertEqual(len(data), len(header) + 3 * 11 * 3)

    def test_metrics_json_writes_null_for_non_finite_values(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = runner.write_metrics(Path(tmp) / "m.json", {"a": float("nan"), "b": np.float64(2.0)})
            data = json.loads(path.read_text(encoding="utf-8"))

        self.assertEqual(data, {"a": None, "b": 2.0})


class RunScenarioTests(RunnerTestCase):
    def test_radiation_run_writes_every_artifact(self):
        config = self.tiny("radiation_circle", **{"output.heatmap": True})

        report = runner.run_scenario(config)

        out = report.out_dir
        for name in ("field.csv", "metrics.json", "loss_history.csv", "config.yaml", "checkpoint.bin", "heatmap.ppm"):
            self.assertTrue((out / name).exists(), name)
        metrics = json.loads((out / "metrics.json").read_text(encoding="utf-8"))
        self.assertEqual(list(metrics)[: len(runner.METRIC_KEYS)], list(runner.METRIC_KEYS))
        self.assertEqual(metrics["scenario"], "radiation_circle")
        self.assertEqual(metrics["adam_iters"], 3)
        self.assertLessEqual(metrics["lbfgs_iters"], 2)
        self.assertEqual(metrics["oracle"], "radiation_exact")
        self.assertIn("sommerfeld_defect", metrics)

        points, pred, ref = runner.read_field_csv(out / "field.csv")
        self.assertEqual(points.shape, (192, 2))
        recomputed = runner.error_metrics(pred, ref)["rel_l2_complex"]
        self.assertAlmostEqual(recomputed / metrics["rel_l2_complex"], 1.0, places=12)

        heatmap = (out / "heatmap.ppm").read_bytes()
        self.assertTrue(heatmap.startswith(b"P6\n36 12\n255\n"))

    def test_echoed_config_rebuilds_the_same_scenario(self):
        config = self.tiny("radiation_circle")
        report = runner.run_scenario(config)

        echoed = yaml.safe_load((report.out_dir / "config.yaml").read_text(encoding="utf-8"))

        self.assertEqual(ScenarioConfig.from_mapping(config.name, echoed), config)

    def test_boundary_values_are_exact_on_the_grid(self):
        config = self.tiny("radiation_circle")
        report = runner.run_scenario(config)

        _, pred, _ = runner.read_field_csv(report.out_dir / "field.csv")
        # The first 16 rows sit on r = r_b.
        np.testing.assert_allclose(pred[:16], 100.0 + 0.0j, atol=1e-10)

    def test_runs_are_reproducible(self):
        first = runner.run_scenario(self.tiny("radiation_circle", out="a"))
        second = runner.run_scenario(self.tiny("radiation_circle", out="b"))

        left = {k: v for k, v in first.metrics.items() if k != "wall_seconds"}
        right = {k: v for k, v in second.metrics.items() if k != "wall_seconds"}
        self.assertEqual(left, right)
        self.assertEqual(_without_timing(first.out_dir / "metrics.json"), _without_timing(second.out_dir / "metrics.json"))
        self.assertEqual(
            (first.out_dir / "field.csv").read_bytes(), (second.out_dir / "field.csv").read_bytes()
        )
        self.assertEqual(
            (first.out_dir / "loss_history.csv").read_bytes(), (second.out_dir / "loss_history.csv").read_bytes()
        )

    def test_resume_and_evaluate_reproduce_the_saved_field(self):
        trained = runner.run_scenario(self.tiny("radiation_circle", out="trained"))
        checkpoint = trained.out_dir / "checkpoint.bin"

        resumed = runner.run_scenario(self.tiny("radiation_circle", out="resumed"), resume=checkpoint)
        evaluated = runner.evaluate_field(self.tiny("radiation_circle", out="evaluated"), checkpoint)

        reference = (trained.out_dir / "field.csv").read_bytes()
        self.assertEqual((resumed.out_dir / "field.csv").read_bytes(), reference)
        self.assertEqual((evaluated.out_dir / "field.csv").read_bytes(), reference)
        self.assertEqual(resumed.metrics["adam_iters"], 0)
        self.assertEqual(resumed.metrics["lbfgs_iters"], 0)
        self.assertAlmostEqual(resumed.metrics["final_loss"] / trained.metrics["final_loss"], 1.0, places=10)
        self.assertFalse((evaluated.out_dir / "checkpoint.bin").exists())

    def test_checkpoint_layout_mismatch_is_rejected(self):
        trained = runner.run_scenario(self.tiny("radiation_circle", out="trained"))
        wider = self.tiny("radiation_circle", out="wider", **{"network.width": 16})

        with self.assertRaises(CheckpointError):
            runner.evaluate_field(wider, trained.out_dir / "checkpoint.bin")

    def test_checkpoint_method_mismatch_is_rejected(self):
        trained = runner.run_scenario(self.tiny("radiation_circle", out="trained"))
        # Both methods lay this net out as (3, 8, 2).
        baseline = self.tiny("radiation_circle", out="baseline", method="baseline")

        with self.assertRaises(CheckpointError):
            runner.evaluate_field(baseline, trained.out_dir / "checkpoint.bin")

    def test_missing_checkpoint_is_a_checkpoint_error(self):
        with self.assertRaises(CheckpointError):
            runner.evaluate_field(self.tiny("radiation_circle"), Path(self.tempdir.name) / "nope.bin")

    def test_baseline_run(self):
        report = runner.run_scenario(self.tiny("radiation_circle", method="baseline"))

        self.assertEqual(report.metrics["method"], "baseline")
        self.assertNotIn("sommerfeld_defect", report.metrics)
        self.assertTrue(math.isfinite(report.metrics["rel_l2_complex"]))

    def test_canyon_run_writes_a_surface_profile(self):
        report = runner.run_scenario(self.tiny("sh_canyon"))

        surface = np.loadtxt(report.out_dir / "surface.csv", delimiter=",", skiprows=1, ndmin=2)
        self.assertEqual(surface.shape, (41, 3))
        np.testing.assert_allclose(surface[:, 0], np.linspace(-3.0, 3.0, 41), atol=1e-14)
        self.assertIn("rel_l2_abs", report.metrics["surface"])
        self.assertIn("symmetry_defect", report.metrics["surface"])
        points, _, _ = runner.read_field_csv(report.out_dir / "field.csv")
        self.assertTrue(np.all(points[:, 1] <= 1e-12))

    def test_sphere_run_scores_on_slices(self):
        report = runner.run_scenario(self.tiny("scatter_sphere"))

        points, pred, ref = runner.read_field_csv(report.out_dir / "field.csv")
        self.assertEqual(points.shape[1], 3)
        self.assertTrue(np.all(np.linalg.norm(points, axis=1) >= 1.0))
        self.assertTrue(np.all(np.isfinite(pred)))
        self.assertEqual(report.metrics["oracle"], "mie3d")

    def test_export_oracle(self):
        report = runner.export_oracle(self.tiny("radiation_circle"))

        with open(report.out_dir / "oracle.csv", "r", encoding="utf-8") as f:
            header = f.readline().strip()
        table = np.loadtxt(report.out_dir / "oracle.csv", delimiter=",", skiprows=1, ndmin=2)
        summary = json.loads((report.out_dir / "oracle.json").read_text(encoding="utf-8"))
        self.assertEqual(header, "x,y,re_ref,im_ref")
        self.assertEqual(table.shape, (192, 4))
        self.assertEqual(summary["points"], 192)
        self.assertEqual(summary["oracle"], "radiation_exact")
        np.testing.assert_allclose(table[:16, 2], 100.0, rtol=1e-12)


class SweepTests(RunnerTestCase):
    def test_sweep_writes_one_run_per_k_and_a_summary(self):
        report = runner.sweep(self.tiny("radiation_circle", out="sweep"), [1.0, 2.0])

        root = Path(self.tempdir.name) / "sweep"
        lines = (root / "summary.csv").read_text(encoding="utf-8").splitlines()
        self.assertEqual(lines[0], "k,status,rel_l2_complex,rel_l2_real,wall_seconds,error")
        self.assertEqual(len(lines), 3)
        self.assertEqual([row.status for row in report.rows], ["ok", "ok"])
        self.assertTrue((root / "k_1" / "metrics.json").exists())
        self.assertTrue((root / "k_2" / "metrics.json").exists())
        self.assertEqual(report.reports[1].metrics["k"], 2.0)

    def test_empty_sweep_is_a_config_error(self):
        with self.assertRaises(ConfigError):
            runner.sweep(self.tiny("radiation_circle"), [])

    def test_failed_run_is_recorded_and_the_sweep_continues(self):
        original = runner.run_scenario

        def flaky(config, **kwargs):
            if config.k == 1.0:
                raise DomainError("boom, at k=1")
            return original(config, **kwargs)

        with patch("runner.run_scenario", side_effect=flaky):
            report = runner.sweep(self.tiny("radiation_circle", out="sweep"), [1.0, 2.0])

        self.assertEqual([row.status for row in report.rows], ["failed", "ok"])
        self.assertEqual(report.rows[0].error, "boom, at k=1")
        self.assertTrue(math.isnan(report.rows[0].rel_l2_complex))
        summary = report.summary_path.read_text(encoding="utf-8").splitlines()
        self.assertTrue(summary[1].endswith("boom; at k=1"))


@unittest.skipUnless(SLOW_TESTS, "set MAPWAVE_SLOW_TESTS=1 for full-budget accuracy runs")
class AcceptanceTests(RunnerTestCase):
    def full(self, name: str, out: str, **overrides) -> ScenarioConfig:
        return self.preset(name, **overrides).with_output(Path(self.tempdir.name) / out)

    def test_radiation_circle_accuracy(self):
        report = runner.run_scenario(self.full("radiation_circle", "radiation"))

        self.assertLess(report.rel_l2, 5e-3)

    def test_high_frequency_radiation(self):
        report = runner.run_scenario(self.full("radiation_k20", "radiation_k20"))

        self.assertEqual(report.metrics["k"], 20.0)
        self.assertLess(report.rel_l2, 1e-2)

    def test_wideband_radiation_sweep(self):
        report = runner.sweep(self.full("radiation_circle", "sweep"), [1.0, 3.0, 5.0, 8.0, 10.0])

        for row in report.rows:
            with self.subTest(k=row.k):
                self.assertEqual(row.status, "ok")
                self.assertLess(row.rel_l2_complex, 1e-2)

    def test_hard_constraints_beat_the_soft_baseline(self):
        hard = runner.run_scenario(self.full("radiation_circle", "hard", **{"wavenumber.k": 6.0}))
        soft = runner.run_scenario(self.full("radiation_circle", "soft", method="baseline", **{"wavenumber.k": 6.0}))

        if not soft.metrics.get("failure"):
            self.assertGreaterEqual(soft.rel_l2, 10.0 * hard.rel_l2)

    def test_variable_wavenumber_against_the_radial_solver(self):
        report = runner.run_scenario(self.full("radiation_variable_k", "variable_k"))

        self.assertLess(report.rel_l2, 1e-2)

    def test_scatter_circle_accuracy(self):
        report = runner.run_scenario(self.full("scatter_circle", "circle"))

        self.assertLess(report.rel_l2, 1e-2)

    def test_scatter_ellipse_accuracy(self):
        report = runner.run_scenario(self.full("scatter_ellipse", "ellipse"))

        self.assertLess(report.rel_l2, 2e-2)

    def test_canyon_surface_amplitude(self):
        report = runner.run_scenario(self.full("sh_canyon", "canyon"))

        self.assertLess(report.metrics["surface"]["rel_l2_abs"], 2e-2)
        self.assertLess(report.metrics["surface"]["symmetry_defect"], 2e-2)


if __name__ == "__main__":
    unittest.main()
