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

from complex_special import (
    SpecialFnTable,
    bessel_j,
    bessel_y,
    hankel1,
    hankel1_deriv,
    legendre_p,
    spherical_bessel_j,
    spherical_bessel_y,
    spherical_hankel1,
    torch_bessel_j,
    torch_hankel1,
    torch_legendre_p,
    torch_spherical_hankel1,
    wiscombe_order,
)
from errors import DomainError


class BesselTests(unittest.TestCase):
    def test_first_kind_is_exact_at_zero(self):
        self.assertEqual(bessel_j(0, 0.0), 1.0)
        self.assertEqual(bessel_j(3, 0.0), 0.0)

    def test_hankel_combines_both_kinds(self):
        x = np.linspace(0.5, 30.0, 50)
        for n in (0, 1, 5):
            np.testing.assert_allclose(hankel1(n, x), bessel_j(n, x) + 1j * bessel_y(n, x), rtol=1e-14)

    def test_cylindrical_wronskian(self):
        x = np.linspace(0.5, 50.0, 40)
        for n in range(0, 10):
            wronskian = bessel_j(n + 1, x) * bessel_y(n, x) - bessel_j(n, x) * bessel_y(n + 1, x)
            np.testing.assert_allclose(wronskian, 2.0 / (math.pi * x), rtol=1e-10)

    def test_spherical_wronskian(self):
        x = np.linspace(0.5, 40.0, 40)
        for n in range(1, 9):
            wronskian = spherical_bessel_j(n, x) * spherical_bessel_y(n - 1, x) - spherical_bessel_j(
                n - 1, x
            ) * spherical_bessel_y(n, x)
            np.testing.assert_allclose(wronskian, 1.0 / x**2, rtol=1e-10)

    def test_hankel_derivative_recurrence(self):
        x = np.linspace(0.5, 20.0, 30)
        for n in (1, 2, 7):
            expected = 0.5 * (hankel1(n - 1, x) - hankel1(n + 1, x))
            np.testing.assert_allclose(hankel1_deriv(n, x), expected, rtol=1e-12)

    def test_spherical_hankel_zero_order_closed_form(self):
        x = np.linspace(0.3, 12.0, 25)
        np.testing.assert_allclose(spherical_hankel1(0, x), -1j * np.exp(1j * x) / x, rtol=1e-13)

    def test_scalar_input_returns_scalar(self):
        self.assertIsInstance(hankel1(0, 2.0), complex)
        self.assertIsInstance(bessel_j(1, 2.0), float)

    def test_domain_errors(self):
        with self.assertRaises(DomainError):
            hankel1(0, 0.0)
        with self.assertRaises(DomainError):
            bessel_y(0, -1.0)
        with self.assertRaises(DomainError):
            hankel1(81, 1.0)
        with self.assertRaises(DomainError):
            bessel_j(-1, 1.0)
        with self.assertRaises(DomainError):
            legendre_p(2, 1.5)

    def test_legendre_values(self):
        self.assertAlmostEqual(legendre_p(2, 0.5), -0.125, places=15)
        self.assertAlmostEqual(legendre_p(0, 0.3), 1.0, places=15)

    def test_wiscombe_order(self):
        self.assertEqual(wiscombe_order(0.0), 10)
        self.assertEqual(wiscombe_order(1.0), 15)

    def test_table_matches_pointwise_values(self):
        table = SpecialFnTable.cylindrical(5, 2.0)
        self.assertAlmostEqual(table.hankel[3], hankel1(3, 2.0), places=13)
        self.assertAlmostEqual(table.hankel_deriv[2], hankel1_deriv(2, 2.0), places=13)
        spherical = SpecialFnTable.spherical(4, 3.0)
        self.assertAlmostEqual(spherical.hankel[4], spherical_hankel1(4, 3.0), places=13)
        with self.assertRaises(DomainError):
            SpecialFnTable.cylindrical(3, 0.0)


class TorchBesselTests(unittest.TestCase):
    def test_values_match_numpy(self):
        x = torch.linspace(0.5, 10.0, 20, dtype=torch.float64)
        np.testing.assert_allclose(torch_hankel1(2, x).numpy(), hankel1(2, x.numpy()), rtol=1e-14)

    def test_second_derivative_satisfies_bessel_equation(self):
        x = torch.linspace(0.7, 9.0, 30, dtype=torch.float64).requires_grad_(True)
        for n in (0, 1, 4):
            y = torch_bessel_j(n, x)
            (dy,) = torch.autograd.grad(y.sum(), x, create_graph=True)
            (d2y,) = torch.autograd.grad(dy.sum(), x)
            residual = x**2 * d2y + x * dy + (x**2 - n * n) * y
            self.assertLess(float(torch.max(torch.abs(residual))), 1e-12)

    def test_first_derivative_matches_recurrence(self):
        x = torch.linspace(0.7, 9.0, 30, dtype=torch.float64).requires_grad_(True)
        (dy,) = torch.autograd.grad(torch_bessel_j(1, x).sum(), x)
        expected = 0.5 * (bessel_j(0, x.detach().numpy()) - bessel_j(2, x.detach().numpy()))
        np.testing.assert_allclose(dy.numpy(), expected, rtol=1e-13, atol=1e-15)

    def test_spherical_hankel_derivative(self):
        x = torch.linspace(0.5, 6.0, 20, dtype=torch.float64).requires_grad_(True)
        h = torch_spherical_hankel1(0, x)
        (d_re,) = torch.autograd.grad(h.real.sum(), x, retain_graph=True)
        (d_im,) = torch.autograd.grad(h.imag.sum(), x)
        xn = x.detach().numpy()
        expected = np.exp(1j * xn) / xn + 1j * np.exp(1j * xn) / xn**2
        np.testing.assert_allclose(d_re.numpy() + 1j * d_im.numpy(), expected, rtol=1e-12)

    def test_torch_legendre_recurrence(self):
        t = torch.linspace(-1.0, 1.0, 11, dtype=torch.float64)
        values = torch_legendre_p(3, t)
        self.assertEqual(len(values), 4)
        np.testing.assert_allclose(values[3].numpy(), (5.0 * t.numpy() ** 3 - 3.0 * t.numpy()) / 2.0, atol=1e-15)


if __name__ == "__main__":
    unittest.main()
