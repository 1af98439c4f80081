from __future__ import annotations

import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special

from ctmcfilter.errors import DomainError, GridTooCoarse, OutOfRange
from ctmcfilter.numerics import (
    CatmullRomTable,
    GaussianConvolution,
    GridDensity,
    bessel_b0,
    bessel_b1,
    bessel_b1_over_z,
    catmull_rom,
    gaussian_pdf,
    interpolate_cubic,
    simpson_weights,
)

# modified Bessel values from mpmath at 30 digits
BESSEL_TABLE = [
    (0.5, 1.0634833707413235193, 0.25789430539089631636),
    (2.0, 2.2795853023360672674, 1.5906368546373290634),
    (10.0, 2815.7166284662544715, 2670.9883037012546543),
    (29.9, 708478330489.01452607, 696528308361.09269442),
    (30.1, 862432920031.77921249, 847983630191.54142663),
    (45.0, 2083414075177314816.2, 2060133462081577166.5),
]


@pytest.mark.parametrize("z,i0,i1", BESSEL_TABLE)
def test_bessel_against_mpmath_table(z, i0, i1):
    assert bessel_b0(z) == pytest.approx(i0, rel=1e-14)
    assert bessel_b1(z) == pytest.approx(i1, rel=1e-14)


def test_bessel_small_arguments():
    assert bessel_b0(0.0) == 1.0
    assert bessel_b1(0.0) == 0.0
    assert bessel_b1_over_z(0.0) == 0.5
    assert bessel_b1_over_z(1e-9) == pytest.approx(0.5, rel=1e-15)


def test_bessel_vectorized_matches_scipy():
    z = np.linspace(0.0, 60.0, 2001)
    np.testing.assert_allclose(bessel_b0(z), special.i0(z), rtol=1e-13)
    np.testing.assert_allclose(bessel_b1(z), special.i1(z), rtol=1e-13, atol=1e-300)
    zz = z[1:]
    np.testing.assert_allclose(bessel_b1_over_z(zz), special.i1(zz) / zz, rtol=1e-13)


@given(st.floats(min_value=1e-3, max_value=80.0))
def test_b1_is_derivative_of_b0(z):
    # I0' = I1, with mpmath differentiating its own I0
    mp.mp.dps = 25
    assert bessel_b1(z) == pytest.approx(float(mp.diff(lambda t: mp.besseli(0, t), z)), rel=1e-12)


def test_bessel_negative_argument():
    with pytest.raises(DomainError):
        bessel_b0(-1.0)
    with pytest.raises(DomainError):
        bessel_b1(np.array([1.0, -0.1]))


def test_bessel_scalar_returns_float():
    assert isinstance(bessel_b0(1.0), float)
    assert bessel_b0(np.array([1.0, 2.0])).shape == (2,)


def test_gaussian_pdf():
    assert gaussian_pdf(0.0, 1.0) == pytest.approx(1 / math.sqrt(2 * math.pi))
    x = np.linspace(-3, 3, 7)
    np.testing.assert_allclose(gaussian_pdf(x, 0.7), special.ndtr(0) * 0 + np.exp(-0.5 * (x / 0.7) ** 2) / (0.7 * math.sqrt(2 * math.pi)))


@pytest.mark.parametrize("n", [5, 6, 11, 12, 101])
def test_simpson_exact_for_cubics(n):
    x = np.linspace(-1.0, 2.0, n)
    w = simpson_weights(n, x[1] - x[0])
    f = 1 + 2 * x - x**2 + 0.5 * x**3
    exact = 3 + (4 - 1) - (8 + 1) / 3 + 0.125 * (16 - 1)
    assert w @ f == pytest.approx(exact, rel=1e-13)


def test_simpson_too_coarse():
    with pytest.raises(GridTooCoarse):
        simpson_weights(4, 0.1)


def test_grid_density_validation():
    xs = np.linspace(0, 1, 11)
    with pytest.raises(ValueError):
        GridDensity(xs, -np.ones(11))
    with pytest.raises(ValueError):
        GridDensity(xs, np.ones(10))
    with pytest.raises(ValueError):
        GridDensity(xs, np.ones(11), (0.5, 1.5))
    g = GridDensity(xs, np.full(11, -1e-13))
    assert np.all(g.values == 0.0)


def test_grid_density_mass_and_scaling():
    xs = np.linspace(0, 2, 201)
    g = GridDensity(xs, np.full(201, 0.25), (1.0, 0.5))
    assert g.mass() == pytest.approx(1.0)
    assert g.scaled(2.0).mass() == pytest.approx(2.0)
    assert g.with_smooth_mass(0.1).smooth_mass() == pytest.approx(0.1)
    assert g.with_smooth_mass(0.1).atom_weight == 0.5


def test_grid_density_cell_mass_overrides_quadrature():
    xs = np.linspace(0, 1, 11)
    cm = np.zeros(11)
    cm[3] = 0.4
    g = GridDensity(xs, np.ones(11), None, cm)
    assert g.smooth_mass() == pytest.approx(0.4)
    assert g.scaled(0.5).smooth_mass() == pytest.approx(0.2)
    assert g.with_smooth_mass(1.0).cell_mass[3] == pytest.approx(1.0)


def test_convolution_against_quad():
    xs = np.linspace(-1, 1, 401)
    vals = 0.75 * (1 - xs**2)
    f = GridDensity(xs, vals, (0.3, 0.2))
    conv = GaussianConvolution(f, 0.4)
    for z in (-1.5, -0.2, 0.0, 0.9):
        ref, _ = integrate.quad(lambda x: 0.75 * (1 - x * x) * gaussian_pdf(z - x, 0.4), -1, 1, epsabs=1e-13)
        ref += 0.2 * gaussian_pdf(z - 0.3, 0.4)
        assert conv(z) == pytest.approx(ref, rel=1e-7)
    assert conv.mass == pytest.approx(1.2, rel=1e-12)
    z = np.linspace(-8, 8, 4001)
    assert np.trapezoid(conv(z), z) == pytest.approx(1.2, rel=1e-9)
    assert conv.cdf(8.0) == pytest.approx(1.2, rel=1e-12)


def test_convolution_of_several_densities_shares_grid():
    xs = np.linspace(0, 1, 51)
    a = GridDensity(xs, np.ones(51))
    b = GridDensity(xs, 2 * xs)
    out = GaussianConvolution([a, b], 0.3)(np.array([[0.1, 0.2], [0.3, 0.4]]))
    assert out.shape == (2, 2, 2)
    with pytest.raises(ValueError):
        GaussianConvolution([a, GridDensity(xs + 1, np.ones(51))], 0.3)
    with pytest.raises(DomainError):
        GaussianConvolution(a, 0.0)


def test_catmull_rom_accuracy_and_linear_exactness():
    x = np.linspace(0, 2 * np.pi, 200)
    v = np.sin(x) + 1
    mid = 0.5 * (x[1:] + x[:-1])
    assert np.abs(catmull_rom(v, 0.0, x[1], mid) - np.sin(mid) - 1).max() < 1e-7
    lin = 2 + 3 * x
    np.testing.assert_allclose(catmull_rom(lin, 0.0, x[1], mid), 2 + 3 * mid, rtol=1e-13)
    assert catmull_rom(v, 0.0, x[1], np.array([-1.0, 7.0])).tolist() == [0.0, 0.0]


@given(st.floats(min_value=-0.5, max_value=10.5))
def test_catmull_rom_scalar_and_vector_paths_agree(x):
    rng = np.random.default_rng(0)
    t = CatmullRomTable(rng.random((2, 3, 100)), 0.0, 0.1)
    np.testing.assert_allclose(t(x), t(np.array([x]))[..., 0], atol=1e-15)


def test_interpolate_cubic_range():
    xs = np.linspace(0, 1, 21)
    g = GridDensity(xs, xs * (1 - xs) * 6)
    assert interpolate_cubic(g, 0.5) == pytest.approx(1.5, rel=1e-3)
    with pytest.raises(OutOfRange):
        interpolate_cubic(g, 1.01)
