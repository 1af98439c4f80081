from __future__ import annotations

import numpy as np
import pytest
from scipy import integrate

from ctmcfilter.ctmc import transition_matrix
from ctmcfilter.errors import CflViolation, ConfigError, GridTooCoarse, UnreachablePair
from ctmcfilter.model import ModelSpec
from ctmcfilter.numerics import gaussian_pdf
from ctmcfilter.pde import (
    DensityTable,
    PdeGrid,
    PdeProvider,
    build_provider,
    conditional_density,
    default_grid,
    solve_density_system,
)
from ctmcfilter.sim import preset
from ctmcfilter.telegraph import ExactTwoStateProvider, TwoStateParams, jump_densities

H2 = 0.2
Z = np.linspace(-2.0, 1.5, 701)


@pytest.fixture(scope="module")
def two_table():
    return solve_density_system(preset("two-state").model, H2)


@pytest.fixture(scope="module")
def five_table():
    return solve_density_system(preset("five-state").model, 0.1)


def g_error(model, grid):
    """Sup error of all g_ij and g_i against the exact engine, relative to the largest exact value."""
    pde, ex = PdeProvider(model, grid), ExactTwoStateProvider.from_model(model)
    a, b = pde.conditional_matrix(Z, H2), ex.conditional_matrix(Z, H2)
    am, bm = pde.marginal_vector(Z, H2), ex.marginal_vector(Z, H2)
    return max(np.abs(a - b).max() / b.max(), np.abs(am - bm).max() / bm.max())


def test_no_switching_gives_pure_atoms():
    m = ModelSpec.from_arrays([-1.0, 2.0], np.zeros((2, 2)), [0.5, 0.5], 0.8)
    tab = solve_density_system(m, H2)
    np.testing.assert_array_equal(tab.atoms, [1.0, 1.0])
    assert np.abs(tab.values).max() == 0.0 and np.abs(tab.cell_mass).max() == 0.0
    np.testing.assert_allclose(tab.pair_mass(), np.eye(2))
    g = PdeProvider(m).conditional_matrix(Z, H2)
    s = 0.8 * np.sqrt(H2)
    np.testing.assert_allclose(g[0, 0], gaussian_pdf(Z + H2, s), atol=1e-8)
    np.testing.assert_allclose(g[1, 1], gaussian_pdf(Z - 2 * H2, s), atol=1e-8)
    assert np.abs(g[0, 1]).max() == 0.0
    with pytest.raises(UnreachablePair):
        conditional_density(tab, 0, 1)


def test_column_mass_five_state(five_table):
    np.testing.assert_allclose(five_table.pair_mass().sum(axis=1), 1.0, atol=2e-3)
    np.testing.assert_allclose(five_table.mass_history.sum(axis=2), 1.0, atol=2e-3)


@pytest.mark.parametrize("name,h", [("two-state", H2), ("five-state", 0.1)])
def test_mass_matches_transition_probabilities(name, h):
    m = preset(name).model
    tab = solve_density_system(m, h)
    mid = tab.grid.nt // 2
    np.testing.assert_allclose(tab.mass_history[mid], transition_matrix(m.generator, tab.times[mid]), atol=2e-3)
    np.testing.assert_allclose(tab.mass_history[-1], transition_matrix(m.generator, h), atol=2e-3)
    np.testing.assert_allclose(tab.pair_mass(), tab.transition, atol=2e-3)


def test_off_diagonal_law_matches_exact(two_table):
    par = TwoStateParams.from_model(preset("two-state").model)
    _, _, other = jump_densities(par, 0, H2, n_grid=4001)
    f = conditional_density(two_table, 0, 1)
    dx = two_table.grid.dx
    inside = (f.xs > other.xs[0] + dx) & (f.xs < other.xs[-1] - dx)
    exact = np.interp(f.xs[inside], other.xs, other.values)
    assert np.abs(f.values[inside] - exact).max() <= 1e-2 * other.values.max()


def test_diagonal_atom_weight(two_table):
    f = conditional_density(two_table, 0, 0)
    assert f.atom[0] == pytest.approx(-3.0 * H2)
    assert f.atom[1] == pytest.approx(np.exp(-0.4) / two_table.transition[0, 0], rel=1e-14)


def test_supports_and_conditional_masses(five_table):
    lo, hi = -3.0 * 0.1, 2.0 * 0.1
    d = five_table.d
    for i in range(d):
        for j in range(d):
            f = conditional_density(five_table, i, j)
            assert f.mass() == pytest.approx(1.0, abs=2e-3)
            # first-order upwind diffuses a little mass past the reachable range
            outside = (f.xs < lo - f.dx) | (f.xs > hi + f.dx)
            assert f.cell_mass[outside].sum() < 1e-3


def test_g_integrates_to_one():
    prov = PdeProvider(preset("five-state").model)
    z = np.linspace(-6.0, 6.0, 4001)
    g = prov.conditional_matrix(z, 0.1)
    np.testing.assert_allclose(integrate.simpson(g, x=z, axis=-1), 1.0, atol=2e-3)
    np.testing.assert_allclose(integrate.simpson(prov.marginal_vector(z, 0.1), x=z, axis=-1), 1.0, atol=2e-3)


def test_g_matches_exact_on_reference_grid():
    assert g_error(preset("two-state").model, PdeGrid.reference_scale) <= 1e-2


def test_grid_refinement_order():
    m = preset("two-state").model
    coarse = g_error(m, PdeGrid.for_model(m.alpha, H2, dx=1 / 300))
    fine = g_error(m, PdeGrid.for_model(m.alpha, H2, dx=1 / 600))
    assert coarse / fine >= 1.6


def test_grid_validation():
    alpha = np.array([-3.0, 1.0])
    with pytest.raises(CflViolation) as err:
        PdeGrid(-1.0, 1.0, 401, 10).check(alpha, H2)
    need = err.value.required_nt
    PdeGrid(-1.0, 1.0, 401, need).check(alpha, H2)
    with pytest.raises(CflViolation):
        PdeGrid(-1.0, 1.0, 401, need - 1).check(alpha, H2)
    with pytest.raises(GridTooCoarse):
        PdeGrid(-1.0, 1.0, 200, 100)
    with pytest.raises(ConfigError):
        PdeGrid(1.0, -1.0, 401, 100)
    with pytest.raises(ConfigError):
        PdeGrid(-0.1, 1.0, 401, 1000).check(alpha, H2)
    with pytest.raises(ConfigError):
        solve_density_system(preset("two-state").model, H2, mode="bogus")


def test_default_grid_respects_limits():
    m = preset("five-state").model
    g = default_grid(m, 0.1)
    assert g.nx >= 201 and g.cfl(m.alpha, 0.1) <= 0.9
    assert g.x_min < -0.3 and g.x_max > 0.2
    assert default_grid(m, 0.1, "mollified").x_min < g.x_min


def test_save_load_roundtrip(tmp_path, two_table):
    path = tmp_path / "table.npz"
    two_table.save(path)
    back = DensityTable.load(path)
    assert back.grid == two_table.grid and back.mode == two_table.mode and back.h == two_table.h
    for name in ("alpha", "values", "cell_mass", "atoms", "transition", "mass_history"):
        np.testing.assert_array_equal(getattr(back, name), getattr(two_table, name))


def test_build_provider_serves_its_step(two_table):
    m = preset("two-state").model
    prov = build_provider(two_table, m.sigma)
    np.testing.assert_array_equal(prov.conditional_matrix(Z, H2), PdeProvider(m).conditional_matrix(Z, H2))
    with pytest.raises(ConfigError):
        prov.transition(0.1)


def test_scalar_and_vector_lookups_agree():
    prov = PdeProvider(preset("five-state").model)
    z = np.array([-7.0, -0.31, 0.0, 0.123, 9.0])
    vec = prov.conditional_matrix(z, 0.1)
    for k, x in enumerate(z):
        np.testing.assert_allclose(prov.conditional_matrix(float(x), 0.1), vec[..., k], rtol=1e-12, atol=1e-300)


def test_lookup_close_to_direct_convolution():
    prov = PdeProvider(preset("five-state").model)
    tab = prov.table(0.1)
    z = np.linspace(-1.5, 1.5, 601)
    np.testing.assert_allclose(tab.conditional(z), tab.exact_convolution(z), atol=1e-4)


@pytest.mark.parametrize("mode", ["inject", "mollified"])
def test_alternative_modes_are_sane(mode):
    m = preset("two-state").model
    tab = solve_density_system(m, H2, mode=mode)
    np.testing.assert_allclose(tab.pair_mass(), tab.transition, atol=2e-3)
    assert g_error(m, None if mode == "inject" else default_grid(m, H2, mode)) < 0.2


def test_cell_masses_match_point_values(two_table):
    # the off-diagonal law is smooth inside its support, so cell masses track dx * values there
    f = two_table.joint(0, 1)
    inner = slice(30, -30)
    np.testing.assert_allclose(f.cell_mass[inner], f.values[inner] * f.dx, rtol=1e-2, atol=1e-9)
