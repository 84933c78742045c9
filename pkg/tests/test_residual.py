import math
import sys
import unittest
from pathlib import Path

import numpy as np
import torch


REPO_ROOT = Path(__file__).resolve().parents[1]
SRC_ROOT = REPO_ROOT / "src"
if str(SRC_ROOT) not in sys.path:
    sys.path.insert(0, str(SRC_ROOT))

import network
from ansatz import AsymptoticFactor, DirichletRadialField, WavenumberModel
from complex_special import torch_hankel1, torch_legendre_p, torch_spherical_hankel1
from diff_engine import jet_eval
from errors import DomainError
from geometry import GeometrySpec, constant_dirichlet
from mapping import MapSpec, forward_map
from residual import ResidualSpec, residual_general, residual_polar, residual_spherical


def _polar_points(count: int, seed: int, xi_max: float = 0.99) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.stack([rng.uniform(-1.0, xi_max, count), rng.uniform(0.0, 2.0 * math.pi, count)], -1)


def _spherical_points(count: int, seed: int, with_phi: bool = False) -> np.ndarray:
    rng = np.random.default_rng(seed)
    columns = [rng.uniform(-1.0, 0.99, count), rng.uniform(0.02, math.pi - 0.02, count)]
    if with_phi:
        columns.append(rng.uniform(0.0, 2.0 * math.pi, count))
    return np.stack(columns, -1)


class ExactSolutionTests(unittest.TestCase):
    def test_hankel_zero_in_polar_form(self):
        map_spec = MapSpec(1.0, 2.0)
        for k in (2.0, 5.0):

            def exact(points, k=k):
                return torch_hankel1(0, k * forward_map(map_spec, points[:, 0], points[:, 1]))

            points = _polar_points(1000, 0)
            residual = ResidualSpec("explicit_polar", map_spec, k).evaluate(exact, points, create_graph=False)
            self.assertLess(float(torch.max(torch.abs(residual))), 1e-7, msg=f"k={k}")

    def test_angular_mode_in_polar_form(self):
        k, order = 2.0, 3
        map_spec = MapSpec(1.0, 2.0)

        def exact(points):
            r = forward_map(map_spec, points[:, 0], points[:, 1])
            return torch_hankel1(order, k * r) * torch.cos(order * points[:, 1])

        points = _polar_points(500, 1)
        jet = jet_eval(exact, points)
        residual = residual_polar(jet, points, map_spec, k)
        self.assertLess(float(torch.max(torch.abs(residual))), 1e-7)

    def test_hankel_zero_through_an_angle_dependent_map(self):
        k = 2.0
        geometry = GeometrySpec.ellipse(2.0, 1.0)
        map_spec = MapSpec(geometry.reference_radius, 2.0, geometry.boundary_radius)

        def exact(points):
            return torch_hankel1(0, k * forward_map(map_spec, points[:, 0], points[:, 1]))

        points = _polar_points(300, 2, xi_max=0.9)
        residual = residual_general(exact, points, map_spec, k)
        self.assertLess(float(torch.max(torch.abs(residual))), 1e-7)

    def test_monopole_in_axisymmetric_form(self):
        k = 3.0
        map_spec = MapSpec(1.0, 2.0)

        def monopole(points):
            r = forward_map(map_spec, points[:, 0])
            return torch.complex(torch.cos(k * r) / r, torch.sin(k * r) / r)

        points = _spherical_points(500, 3)
        residual = residual_spherical(monopole, points, map_spec, k, "axisym")
        self.assertLess(float(torch.max(torch.abs(residual))), 1e-7)

    def test_spherical_mode_in_axisymmetric_form(self):
        k, order = 5.0, 2
        map_spec = MapSpec(1.0, 2.0)

        def mode(points):
            r = forward_map(map_spec, points[:, 0])
            return torch_spherical_hankel1(order, k * r) * torch_legendre_p(order, torch.cos(points[:, 1]))[order]

        points = _spherical_points(500, 4)
        residual = ResidualSpec("spherical_axisym", map_spec, k, 3).evaluate(mode, points, create_graph=False)
        self.assertLess(float(torch.max(torch.abs(residual))), 1e-7)

    def test_azimuthal_mode_in_full_form(self):
        k = 2.0
        map_spec = MapSpec(1.0, 2.0)

        def mode(points):
            r = forward_map(map_spec, points[:, 0])
            return torch_spherical_hankel1(1, k * r) * torch.sin(points[:, 1]) * torch.cos(points[:, 2])

        points = _spherical_points(400, 5, with_phi=True)
        residual = ResidualSpec("spherical_full", map_spec, k, 3).evaluate(mode, points, create_graph=False)
        self.assertLess(float(torch.max(torch.abs(residual))), 1e-7)

    def test_source_term_is_subtracted(self):
        k = 2.0
        map_spec = MapSpec(1.0, 2.0)

        def exact(points):
            return torch_hankel1(0, k * forward_map(map_spec, points[:, 0], points[:, 1]))

        points = _polar_points(100, 6)
        spec = ResidualSpec("explicit_polar", map_spec, k, 2, source=lambda r, theta: torch.ones_like(r))
        residual = spec.evaluate(exact, points, create_graph=False)
        np.testing.assert_allclose(residual.numpy(), -1.0, atol=1e-7)


class FormAgreementTests(unittest.TestCase):
    def test_polar_and_general_forms_agree_on_a_network_field(self):
        map_spec = MapSpec(1.0, 2.0)
        factor = AsymptoticFactor(WavenumberModel(3.0), 2, 1.0)
        field = DirichletRadialField(
            network.init((3, 16, 16, 2), seed=8, periodic_axes=(1,)), factor, map_spec, constant_dirichlet(100.0)
        )
        points = _polar_points(1000, 7, xi_max=0.9)
        polar = ResidualSpec("explicit_polar", map_spec, 3.0).evaluate(field, points, create_graph=False)
        general = ResidualSpec("chain_rule_general", map_spec, 3.0).evaluate(field, points, create_graph=False)
        scale = float(torch.max(torch.abs(polar)))
        self.assertLess(float(torch.max(torch.abs(polar - general))), 1e-10 * scale)

    def test_constant_model_matches_a_plain_wavenumber(self):
        map_spec = MapSpec(1.0, 2.0)
        factor = AsymptoticFactor(WavenumberModel(3.0), 2, 1.0)
        field = DirichletRadialField(
            network.init((3, 8, 2), seed=1, periodic_axes=(1,)), factor, map_spec, constant_dirichlet(1.0)
        )
        points = _polar_points(50, 8)
        plain = ResidualSpec("explicit_polar", map_spec, 3.0).evaluate(field, points, create_graph=False)
        model = ResidualSpec("explicit_polar", map_spec, WavenumberModel(3.0)).evaluate(field, points, create_graph=False)
        np.testing.assert_allclose(model.numpy(), plain.numpy(), rtol=1e-14, atol=1e-12)


class ValidationTests(unittest.TestCase):
    def test_polar_form_needs_a_constant_boundary_radius(self):
        geometry = GeometrySpec.ellipse(2.0, 1.0)
        map_spec = MapSpec(1.0, 2.0, geometry.boundary_radius)
        jet = jet_eval(lambda p: p[:, 0] * 0.0, np.zeros((2, 2)))
        with self.assertRaises(DomainError):
            residual_polar(jet, np.zeros((2, 2)), map_spec, 1.0)

    def test_pole_band_is_excluded(self):
        map_spec = MapSpec(1.0, 2.0)
        points = np.array([[0.0, 0.001]])
        with self.assertRaises(DomainError):
            residual_spherical(lambda p: p[:, 0] * 0.0, points, map_spec, 1.0, "axisym")

    def test_form_must_match_dimension(self):
        map_spec = MapSpec(1.0, 2.0)
        with self.assertRaises(DomainError):
            ResidualSpec("explicit_polar", map_spec, 1.0, 3)
        with self.assertRaises(DomainError):
            ResidualSpec("spherical_full", map_spec, 1.0, 2)
        with self.assertRaises(DomainError):
            ResidualSpec("finite_volume", map_spec, 1.0)
        self.assertEqual(ResidualSpec("spherical_full", map_spec, 1.0, 3).coords, 3)


if __name__ == "__main__":
    unittest.main()
