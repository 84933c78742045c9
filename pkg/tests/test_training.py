import math
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np
import torch
from torch import nn


REPO_ROOT = Path(__file__).resolve().parents[1]
SRC_ROOT = REPO_ROOT / "src"
if str(SRC_ROOT) not in sys.path:
    sys.path.insert(0, str(SRC_ROOT))

import network
from ansatz import AsymptoticFactor, DirichletRadialField, WavenumberModel
from complex_special import torch_hankel1
from diff_engine import mean_squared_modulus
from errors import ConfigError, TrainingDivergedError
from geometry import constant_dirichlet
from mapping import XI_CEILING, MapSpec, forward_map
from residual import POLE_BAND, ResidualSpec
from training import (
    CurvatureMemory,
    HistoryRow,
    TrainSchedule,
    TrainState,
    default_bounds,
    latin_hypercube,
    loss,
    read_loss_history,
    run_adam,
    run_lbfgs,
    train,
    write_loss_history,
)


class Quadratic(nn.Module):
    def __init__(self):
        super().__init__()
        self.w = nn.Parameter(torch.zeros(2, dtype=torch.float64))
        self.a = torch.tensor([[3.0, 1.0], [1.0, 2.0]], dtype=torch.float64)
        self.b = torch.tensor([1.0, -1.0], dtype=torch.float64)

    def forward(self) -> torch.Tensor:
        return 0.5 * self.w @ self.a @ self.w - self.b @ self.w

    def minimizer(self) -> np.ndarray:
        return np.linalg.solve(self.a.numpy(), self.b.numpy())


class ShiftedSquare(nn.Module):
    """0.5 |w - c|^2, whose Hessian is the identity."""

    def __init__(self, center):
        super().__init__()
        self.center = torch.tensor(center, dtype=torch.float64)
        self.w = nn.Parameter(torch.zeros_like(self.center))

    def forward(self) -> torch.Tensor:
        return 0.5 * torch.sum((self.w - self.center) ** 2)


class Rosenbrock(nn.Module):
    def __init__(self):
        super().__init__()
        self.w = nn.Parameter(torch.tensor([-1.2, 1.0], dtype=torch.float64))

    def forward(self) -> torch.Tensor:
        x, y = self.w[0], self.w[1]
        return (1.0 - x) ** 2 + 100.0 * (y - x**2) ** 2


class SamplingTests(unittest.TestCase):
    def test_latin_hypercube_is_stratified(self):
        bounds = [(-1.0, XI_CEILING), (0.0, 2.0 * math.pi)]
        samples = latin_hypercube(64, bounds, seed=3)
        self.assertEqual(samples.points.shape, (64, 2))
        for column, (lo, hi) in enumerate(bounds):
            bins = np.floor((samples.points[:, column] - lo) / (hi - lo) * 64).astype(int)
            self.assertEqual(sorted(bins.tolist()), list(range(64)))

    def test_seeded_and_reproducible(self):
        bounds = default_bounds(2, 2)
        first = latin_hypercube(32, bounds, seed=1)
        second = latin_hypercube(32, bounds, seed=1)
        other = latin_hypercube(32, bounds, seed=2)
        np.testing.assert_array_equal(first.points, second.points)
        self.assertFalse(np.array_equal(first.points, other.points))

    def test_count_must_be_positive(self):
        with self.assertRaises(ConfigError):
            latin_hypercube(0, default_bounds(2, 2), seed=0)

    def test_default_bounds(self):
        self.assertEqual(default_bounds(2, 2), [(-1.0, XI_CEILING), (0.0, 2.0 * math.pi)])
        self.assertEqual(default_bounds(2, 3)[1], (POLE_BAND, math.pi - POLE_BAND))
        self.assertEqual(len(default_bounds(3, 3)), 3)


class ScheduleTests(unittest.TestCase):
    def test_invalid_schedules(self):
        with self.assertRaises(ConfigError):
            TrainSchedule(c1=0.9, c2=0.5)
        with self.assertRaises(ConfigError):
            TrainSchedule(lbfgs_memory=0)
        with self.assertRaises(ConfigError):
            TrainSchedule(adam_lr=0.0)
        with self.assertRaises(ConfigError):
            TrainSchedule(adam_iters=-1)


class CurvatureMemoryTests(unittest.TestCase):
    def test_rejects_non_positive_curvature(self):
        memory = CurvatureMemory(3)
        self.assertFalse(memory.append(np.array([1.0, 0.0]), np.array([-1.0, 0.0])))
        self.assertEqual(len(memory), 0)

    def test_keeps_only_the_newest_pairs(self):
        memory = CurvatureMemory(2)
        for scale in (1.0, 2.0, 3.0):
            memory.append(np.array([scale, 0.0]), np.array([1.0, 0.0]))
        self.assertEqual(len(memory), 2)
        self.assertEqual(memory.pairs[0][0][0], 2.0)

    def test_inverse_action_satisfies_the_secant_condition(self):
        memory = CurvatureMemory(5)
        rng = np.random.default_rng(0)
        for _ in range(3):
            s = rng.normal(size=4)
            memory.append(s, s * 2.0 + 0.1 * rng.normal(size=4))
        s, y = memory.pairs[-1]
        np.testing.assert_allclose(memory.inverse_action(y, 0.7), s, rtol=1e-10, atol=1e-12)


class OptimizerTests(unittest.TestCase):
    def test_lbfgs_solves_a_convex_quadratic(self):
        module = Quadratic()
        state = TrainState(module, module.forward)
        schedule = TrainSchedule(adam_iters=0, lbfgs_max_iters=50, lbfgs_memory=5, grad_tol=1e-10, log_every=0)
        run_lbfgs(schedule, state)
        np.testing.assert_allclose(module.w.detach().numpy(), module.minimizer(), atol=1e-6)
        self.assertIn(state.stop_reason, ("grad_tol", "line_search"))
        self.assertLessEqual(state.lbfgs_iters, 50)

    def test_lbfgs_converges_in_two_steps_on_an_identity_hessian(self):
        module = ShiftedSquare([1.0, -2.0])
        state = TrainState(module, module.forward)
        run_lbfgs(TrainSchedule(lbfgs_max_iters=20, grad_tol=1e-10, log_every=0), state)
        np.testing.assert_allclose(module.w.detach().numpy(), [1.0, -2.0], atol=1e-10)
        self.assertEqual(state.stop_reason, "grad_tol")
        self.assertLessEqual(state.lbfgs_iters, 2)

    def test_lbfgs_solves_rosenbrock(self):
        module = Rosenbrock()
        state = TrainState(module, module.forward)
        run_lbfgs(TrainSchedule(lbfgs_max_iters=100, lbfgs_memory=50, grad_tol=1e-12, log_every=0), state)
        self.assertLessEqual(state.final_loss, 1e-10)
        self.assertLessEqual(state.lbfgs_iters, 100)
        np.testing.assert_allclose(module.w.detach().numpy(), [1.0, 1.0], atol=1e-4)

    def test_failed_trial_step_keeps_the_best_iterate(self):
        module = ShiftedSquare([1.0, -2.0])

        def overflowing():
            if float(module.w.detach().abs().max()) > 0.5:
                return mean_squared_modulus(module.w * float("nan"))
            return module.forward()

        state = TrainState(module, overflowing)
        run_lbfgs(TrainSchedule(lbfgs_max_iters=10, log_every=0), state)
        self.assertEqual(state.stop_reason, "line_search")
        self.assertTrue(torch.isfinite(module.w).all())
        self.assertLessEqual(float(module.w.detach().abs().max()), 0.5)
        self.assertEqual(state.final_loss, float(module.forward().detach()))

    def test_adam_drives_a_square_norm_to_zero(self):
        module = ShiftedSquare([0.0, 0.0, 0.0])
        with torch.no_grad():
            module.w.copy_(torch.tensor([0.8, -0.5, 0.3], dtype=torch.float64))
        state = TrainState(module, module.forward)
        run_adam(TrainSchedule(adam_iters=2000, adam_lr=1e-2, log_every=0), state)
        self.assertLessEqual(float(torch.linalg.norm(module.w.detach())), 1e-3)

    def test_adam_leaves_parameters_alone_under_a_zero_gradient(self):
        module = ShiftedSquare([0.0, 0.0])
        with torch.no_grad():
            module.w.copy_(torch.tensor([0.25, -0.75], dtype=torch.float64))
        state = TrainState(module, lambda: module.w.sum() * 0.0 + 1.0)
        run_adam(TrainSchedule(adam_iters=10, log_every=0), state)
        np.testing.assert_array_equal(module.w.detach().numpy(), [0.25, -0.75])

    def test_lbfgs_history_never_increases(self):
        module = Quadratic()
        state = TrainState(module, module.forward)
        run_lbfgs(TrainSchedule(lbfgs_max_iters=20, log_every=0), state)
        losses = [row.loss for row in state.history]
        self.assertTrue(all(b <= a for a, b in zip(losses, losses[1:])))
        self.assertEqual(state.history[0], HistoryRow(0, "lbfgs", 0.0))

    def test_adam_reduces_the_loss(self):
        module = Quadratic()
        state = TrainState(module, module.forward)
        run_adam(TrainSchedule(adam_iters=200, adam_lr=1e-2, log_every=0), state)
        self.assertEqual(len(state.history), 200)
        self.assertEqual(state.adam_iters, 200)
        self.assertLess(state.history[-1].loss, state.history[0].loss)
        self.assertTrue(all(row.stage == "adam" for row in state.history))

    def test_divergence_is_reported_with_the_partial_history(self):
        module = Quadratic()

        def exploding():
            return module.w.sum() * 0.0 + 1e13

        state = TrainState(module, exploding)
        with self.assertRaises(TrainingDivergedError) as ctx:
            run_adam(TrainSchedule(adam_iters=5, log_every=0), state)
        self.assertEqual(ctx.exception.stage, "adam")
        self.assertEqual(ctx.exception.iteration, 0)

    def test_non_finite_loss_diverges(self):
        module = Quadratic()
        state = TrainState(module, lambda: module.w.sum() * float("nan"))
        with self.assertRaises(TrainingDivergedError):
            run_adam(TrainSchedule(adam_iters=3, log_every=0), state)


class LossTests(unittest.TestCase):
    def test_exact_solution_has_vanishing_loss(self):
        k = 2.0
        map_spec = MapSpec(1.0, 2.0)

        def exact(points):
            return torch_hankel1(0, k * forward_map(map_spec, points[:, 0], points[:, 1]))

        samples = latin_hypercube(200, default_bounds(2, 2), seed=0)
        value = loss(exact, samples, ResidualSpec("explicit_polar", map_spec, k))
        self.assertLess(float(value.detach()), 1e-14)

    def test_short_training_run_on_a_radiation_field(self):
        map_spec = MapSpec(1.0, 2.0)
        factor = AsymptoticFactor(WavenumberModel(1.0), 2, 1.0)
        field = DirichletRadialField(
            network.init((3, 8, 8, 2), seed=0, periodic_axes=(1,)), factor, map_spec, constant_dirichlet(1.0)
        )
        samples = latin_hypercube(64, default_bounds(2, 2), seed=1)
        residual = ResidualSpec("explicit_polar", map_spec, 1.0)
        state = TrainState(field, lambda: loss(field, samples, residual))
        train(TrainSchedule(adam_iters=5, lbfgs_max_iters=5, log_every=0), state)
        stages = [row.stage for row in state.history]
        self.assertEqual(stages[:5], ["adam"] * 5)
        self.assertIn("lbfgs", stages)
        self.assertTrue(math.isfinite(state.final_loss))
        lbfgs = [row.loss for row in state.history if row.stage == "lbfgs"]
        self.assertLessEqual(lbfgs[-1], lbfgs[0])


class HistoryFileTests(unittest.TestCase):
    def test_history_file_preserves_exact_losses(self):
        with tempfile.TemporaryDirectory() as tempdir:
            rows = [HistoryRow(0, "adam", 0.1), HistoryRow(1, "adam", 1.0 / 3.0), HistoryRow(0, "lbfgs", 1e-300)]
            path = write_loss_history(Path(tempdir) / "loss_history.csv", rows)
            self.assertEqual(read_loss_history(path), rows)
            self.assertTrue(path.read_text(encoding="utf-8").startswith("iteration,stage,loss"))


if __name__ == "__main__":
    unittest.main()
