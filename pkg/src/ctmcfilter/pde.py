"""Observation densities from the transport system for the joint laws of ``J_h``.

For a fixed end state ``j`` the functions ``u_i(x, t) = f_ij(x, t)`` (density of
``J_t`` on ``{eps_t = j}`` given ``eps_0 = i``) satisfy the backward system

    d_t u_i + alpha_i d_x u_i = sum_k q_ik u_k,    u_i(., 0) = [i == j] delta_0

The solution splits into

* the no-jump atom ``exp(-q_j t)`` at ``alpha_j t`` (row ``j`` only);
* the one-jump layer ``L_i`` (direct jump ``i -> j``), known in closed form;
* a remainder ``R`` (two or more jumps), bounded and small, obtained with an
  explicit first-order upwind scheme plus an exact reaction step.

Modes:

``layer`` (default)
    atom and one-jump layer analytic, ``R`` numerical with source
    ``sum_{k != i} q_ik L_k``.
``inject``
    atom analytic; each step the mass it sheds into row ``i`` is deposited
    on the grid and transported numerically.
``mollified``
    no separation at all; the delta is replaced by a narrow Gaussian bump.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import exprel

from .ctmc import expm, transition_matrix
from .errors import CflViolation, ConfigError, GridTooCoarse, SolverInstability, UnreachablePair
from .filtering import CachedProvider
from .numerics import CatmullRomTable, GaussianConvolution, GridDensity

MODES = ("layer", "inject", "mollified")
MIN_NX = 201
MAX_CFL = 0.9
DEFAULT_CFL = 0.45
DEFAULT_DX = 1.0 / 300.0
TABLE_VERSION = 1


@dataclass(frozen=True)
class PdeGrid:
    """Equispaced nodes on ``[x_min, x_max]`` (cell centres) and ``nt`` time steps on ``[0, h]``."""

    x_min: float
    x_max: float
    nx: int
    nt: int

    def __post_init__(self):
        if self.nx < MIN_NX:
            raise GridTooCoarse(f"need nx >= {MIN_NX}, got {self.nx}")
        if not self.x_max > self.x_min:
            raise ConfigError("x_max must exceed x_min")
        if self.nt < 1:
            raise ConfigError("need at least one time step")

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    def cfl(self, alpha, h: float) -> float:
        return float(np.max(np.abs(alpha))) * (h / self.nt) / self.dx

    def check(self, alpha, h: float):
        lo, hi = float(np.min(alpha)) * h, float(np.max(alpha)) * h
        if self.x_min > lo or self.x_max < hi:
            raise ConfigError(f"grid [{self.x_min}, {self.x_max}] does not cover [{lo}, {hi}]")
        c = self.cfl(alpha, h)
        if c > MAX_CFL:
            need = math.ceil(float(np.max(np.abs(alpha))) * h / (MAX_CFL * self.dx))
            raise CflViolation(f"CFL number {c:.3f} > {MAX_CFL}; use nt >= {need}", need)

    @classmethod
    def for_model(cls, alpha, h: float, dx: float = DEFAULT_DX, cfl: float = DEFAULT_CFL, pad: float = 0.05,
                  margin: float = 0.0):
        """Grid on the reachable range padded by 5% (plus ``margin``) on each side."""
        lo, hi = float(np.min(alpha)) * h, float(np.max(alpha)) * h
        width = max(hi - lo, 1e-3)
        lo, hi = lo - pad * width - margin, hi + pad * width + margin
        nx = max(MIN_NX, int(math.ceil((hi - lo) / dx)) + 1)
        step = (hi - lo) / (nx - 1)
        speed = max(float(np.max(np.abs(alpha))), 1e-12)
        nt = max(1, int(math.ceil(speed * h / (cfl * step))))
        return cls(lo, hi, nx, nt)

    @classmethod
    def reference_scale(cls, h: float):
        """3000 nodes on [-5, 5] and 2000 time steps per unit time."""
        return cls(-5.0, 5.0, 3000, max(1, int(round(2000 * h))))


def _bump_width(model, h):
    return model.sigma * math.sqrt(h) / 10.0


def default_grid(model, h: float, mode: str = "layer") -> PdeGrid:
    """Reference resolution (dx = 1/300, CFL 0.45) on the padded reachable range.

    The mollified mode gets extra room for the tails of its initial bump.
    """
    margin = 6.0 * _bump_width(model, h) if mode == "mollified" else 0.0
    return PdeGrid.for_model(model.alpha, h, margin=margin)


def _upwind(u, alpha, dt, dx):
    """One explicit upwind transport step per row with zero inflow."""
    out = u.copy()
    for i, a in enumerate(alpha):
        c = a * dt / dx
        row = u[i]
        if c > 0:
            out[i, 1:] -= c * (row[1:] - row[:-1])
            out[i, 0] -= c * row[0]
        elif c < 0:
            out[i, :-1] += c * (row[:-1] - row[1:])
            out[i, -1] += c * row[-1]
    return out


def _deposit(xs, dx, loc, mass):
    """Cloud-in-cell weights (as cell masses) for a point mass at ``loc``."""
    out = np.zeros(xs.size)
    pos = (loc - xs[0]) / dx
    k = int(math.floor(pos))
    frac = pos - k
    if 0 <= k < xs.size:
        out[k] += mass * (1.0 - frac)
    if 0 <= k + 1 < xs.size:
        out[k + 1] += mass * frac
    return out


class _OneJumpLayer:
    """Closed-form density of ``J_t`` on paths with exactly one jump ``k -> j``.

    With jump time ``s``: ``J_t = alpha_k s + alpha_j (t - s)`` and density
    ``q_kj exp(-q_k s - q_j (t - s)) / |alpha_k - alpha_j|``.
    """

    def __init__(self, alpha, q, j, xs, dx):
        self.alpha = alpha
        self.q = q
        self.exit = -np.diag(q)
        self.j = j
        self.xs = xs
        self.dx = dx
        self.lo = xs - 0.5 * dx
        self.hi = xs + 0.5 * dx

    def _pair(self, k):
        return self.alpha[k] - self.alpha[self.j], self.exit[k] - self.exit[self.j]

    def cell_mass(self, k, t):
        """Exact integral of the layer over every cell."""
        if k == self.j or t <= 0 or self.q[k, self.j] == 0:
            return np.zeros(self.xs.size)
        rate = self.q[k, self.j]
        diff, kappa = self._pair(k)
        if diff == 0:
            total = rate * math.exp(-self.exit[self.j] * t) * t * float(exprel(-kappa * t))
            return _deposit(self.xs, self.dx, self.alpha[self.j] * t, total)
        s1 = (self.lo - self.alpha[self.j] * t) / diff
        s2 = (self.hi - self.alpha[self.j] * t) / diff
        a = np.clip(np.minimum(s1, s2), 0.0, t)
        b = np.clip(np.maximum(s1, s2), 0.0, t)
        w = b - a
        return rate * math.exp(-self.exit[self.j] * t) * np.exp(-kappa * a) * w * exprel(-kappa * w)

    def values(self, k, t):
        """Point values at the nodes (zero for equal drifts, where the layer is a point mass)."""
        if k == self.j or t <= 0 or self.q[k, self.j] == 0:
            return np.zeros(self.xs.size)
        diff, kappa = self._pair(k)
        if diff == 0:
            return self.cell_mass(k, t) / self.dx
        s = (self.xs - self.alpha[self.j] * t) / diff
        inside = (s >= 0) & (s <= t)
        sc = np.clip(s, 0.0, t)
        val = self.q[k, self.j] * np.exp(-self.exit[self.j] * t - kappa * sc) / abs(diff)
        return np.where(inside, val, 0.0)


@dataclass
class DensityTable:
    """Joint laws ``f_ij(., h)`` for every pair, on one grid.

    ``values[i, j]`` are point values of the smooth part and ``cell_mass[i, j]``
    its integral over each cell; ``atoms[i]`` is the no-jump weight at
    ``alpha_i h`` (it belongs to the pair ``(i, i)``).  ``mass_history[n, i, j]``
    is the total mass of ``f_ij`` after ``n`` steps.
    """

    h: float
    grid: PdeGrid
    alpha: np.ndarray
    values: np.ndarray
    cell_mass: np.ndarray
    atoms: np.ndarray
    transition: np.ndarray
    mass_history: np.ndarray
    mode: str

    @property
    def d(self) -> int:
        return self.alpha.size

    @property
    def xs(self) -> np.ndarray:
        return self.grid.xs

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.h, self.grid.nt + 1)

    def joint(self, i: int, j: int) -> GridDensity:
        atom = (self.alpha[i] * self.h, float(self.atoms[i])) if i == j and self.atoms[i] > 0 else None
        return GridDensity(self.xs, self.values[i, j], atom, self.cell_mass[i, j])

    def pair_mass(self) -> np.ndarray:
        """``int f_ij dx`` including the atom, for all pairs."""
        return self.cell_mass.sum(axis=2) + np.diag(self.atoms)

    def save(self, path):
        np.savez_compressed(
            path, version=TABLE_VERSION, h=self.h,
            grid=np.array([self.grid.x_min, self.grid.x_max, self.grid.nx, self.grid.nt], dtype=float),
            alpha=self.alpha, values=self.values, cell_mass=self.cell_mass, atoms=self.atoms,
            transition=self.transition, mass_history=self.mass_history, mode=self.mode,
        )

    @classmethod
    def load(cls, path) -> "DensityTable":
        with np.load(path, allow_pickle=False) as z:
            if int(z["version"]) != TABLE_VERSION:
                raise ConfigError(f"unsupported table version {int(z['version'])}")
            g = z["grid"]
            grid = PdeGrid(float(g[0]), float(g[1]), int(g[2]), int(g[3]))
            return cls(float(z["h"]), grid, z["alpha"], z["values"], z["cell_mass"], z["atoms"],
                       z["transition"], z["mass_history"], str(z["mode"]))


def solve_density_system(model, h: float, grid: PdeGrid | None = None, mode: str = "layer") -> DensityTable:
    """Solve the transport system on ``[0, h]`` for every end state."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; choose from {MODES}")
    if not h > 0:
        raise ConfigError(f"h must be positive, got {h}")
    alpha = model.alpha
    q = model.q
    d = model.d
    P = transition_matrix(model.generator, h)
    grid = default_grid(model, h, mode) if grid is None else grid
    grid.check(alpha, h)
    xs, dx, nt = grid.xs, grid.dx, grid.nt
    dt = h / nt
    E = expm(q * dt)
    exit_rates = -np.diag(q)

    values = np.zeros((d, d, xs.size))
    cell = np.zeros((d, d, xs.size))
    history = np.zeros((nt + 1, d, d))
    atoms = np.exp(-exit_rates * h) if mode != "mollified" else np.zeros(d)
    for j in range(d):
        R = np.zeros((d, xs.size))  # cell masses of the numerical part
        layer = _OneJumpLayer(alpha, q, j, xs, dx) if mode == "layer" else None

        def source(t):
            # cell masses per unit time of sum_{k != i} q_ik L_k
            lm = np.stack([layer.cell_mass(k, t) for k in range(d)])
            src = q @ lm
            src -= np.diag(q)[:, None] * lm
            return src, lm

        if mode == "mollified":
            width = max(_bump_width(model, h), 2.0 * dx)
            bump = np.exp(-0.5 * (xs / width) ** 2)
            R[j] = bump / bump.sum()
        history[0, :, j] = np.eye(d)[j]
        src_now = source(0.0)[0] if layer else None
        for n in range(nt):
            t0, t1 = n * dt, (n + 1) * dt
            if layer:
                R += 0.5 * dt * src_now
            R = E @ _upwind(R, alpha, dt, dx)
            if layer:
                src_now, lm = source(t1)
                R += 0.5 * dt * src_now
                layer_mass = lm.sum(axis=1)
            else:
                layer_mass = np.zeros(d)
            if mode == "inject":
                shed = math.exp(-exit_rates[j] * t0) * dt * float(exprel(-exit_rates[j] * dt))
                loc = alpha[j] * (t0 + 0.5 * dt)
                for i in range(d):
                    if i != j and q[i, j] > 0:
                        R[i] += _deposit(xs, dx, loc + 0.5 * alpha[i] * dt, q[i, j] * shed)
            if R.min() < -1e-8 * max(1.0, R.max()):
                raise SolverInstability(f"negative density {R.min():.3e} at step {n + 1}")
            history[n + 1, :, j] = R.sum(axis=1) + layer_mass
            if mode != "mollified":
                history[n + 1, j, j] += math.exp(-exit_rates[j] * t1)
        R = np.clip(R, 0.0, None)
        for i in range(d):
            pv = R[i] / dx
            cm = R[i].copy()
            if layer:
                pv = pv + layer.values(i, h)
                cm = cm + layer.cell_mass(i, h)
            values[i, j] = pv
            cell[i, j] = cm
    return DensityTable(h, grid, alpha.copy(), values, cell, atoms, P, history, mode)


def conditional_density(table: DensityTable, i: int, j: int) -> GridDensity:
    """Law of ``J_h`` given ``eps_0 = i`` and ``eps_h = j``: ``f_ij / p_ij(h)``."""
    p = table.transition[i, j]
    if p <= 1e-14:
        raise UnreachablePair(f"p_{i}{j}(h) = {p:.3e}")
    return table.joint(i, j).scaled(1.0 / p)


class PdeDensities:
    """Gaussian-convolved conditional densities, tabulated in ``z`` for cubic lookup.

    Each conditional law is renormalized to unit mass before convolution.  Only
    the smooth parts are tabulated; the diagonal atoms are known exactly and
    their Gaussians are added in closed form.  Points outside the tabulated
    ``z`` range are convolved directly.
    """

    def __init__(self, table: DensityTable, sigma: float, z_step: float | None = None):
        d = table.d
        self.table = table
        self.transition = table.transition
        self.s = sigma * math.sqrt(table.h)
        laws = []
        for i in range(d):
            for j in range(d):
                if table.transition[i, j] <= 1e-14:
                    # never weighted by the filter; keep a zero law as a placeholder
                    laws.append(GridDensity(table.xs, np.zeros(table.xs.size)))
                    continue
                f = conditional_density(table, i, j)
                if f.atom is not None and f.atom[1] > 1.0:
                    # numerical smooth mass can be slightly off; the atom is exact
                    f = GridDensity(f.xs, f.values, (f.atom[0], 1.0), f.cell_mass)
                laws.append(f.with_smooth_mass(max(1.0 - f.atom_weight, 0.0)))
        self.conv = GaussianConvolution(laws, self.s)
        smooth = GaussianConvolution([GridDensity(f.xs, f.values, None, f.cell_mass) for f in laws], self.s)
        self.atom_loc = self.conv.atom_loc.reshape(d, d).diagonal().copy()
        self.atom_weight = self.conv.atom_weight.reshape(d, d).diagonal().copy()
        self.z_step = self.s / 20.0 if z_step is None else z_step
        lo = table.grid.x_min - 8.0 * self.s
        hi = table.grid.x_max + 8.0 * self.s
        nz = int(math.ceil((hi - lo) / self.z_step)) + 1
        self.z0 = lo
        self.dz = (hi - lo) / (nz - 1)
        self.z_grid = np.linspace(lo, hi, nz)
        self.z_table = smooth(self.z_grid).reshape(d, d, nz)
        self._interp = CatmullRomTable(self.z_table, self.z0, self.dz)
        self._norm = self.atom_weight / (math.sqrt(2.0 * math.pi) * self.s)
        self.d = d

    def _atoms(self, z):
        u = (z - self.atom_loc[(...,) + (None,) * np.ndim(z)]) / self.s
        return self._norm[(...,) + (None,) * np.ndim(z)] * np.exp(-0.5 * u * u)

    def conditional(self, z):
        if np.ndim(z) == 0 and self.z_grid[0] <= z <= self.z_grid[-1]:
            out = self._interp(z)
            out.flat[:: self.d + 1] += self._atoms(z)
            return out
        z = np.asarray(z, dtype=float)
        out = self._interp(z)
        diag = np.arange(self.d)
        out[diag, diag] += self._atoms(z)
        outside = (z < self.z_grid[0]) | (z > self.z_grid[-1])
        if np.any(outside):
            out[..., outside] = self.exact_convolution(z[outside])
        return out

    def exact_convolution(self, z):
        """Direct quadrature without the cubic lookup, shape ``(d, d) + z.shape``."""
        z = np.asarray(z, dtype=float)
        return self.conv(z).reshape((self.d, self.d) + z.shape)


class PdeProvider(CachedProvider):
    """Builds one transport table per step length and reuses it for every filter step."""

    def __init__(self, model, grid=None, mode: str = "layer"):
        super().__init__(model.d)
        self.model = model
        self.grid = grid
        self.mode = mode

    def _grid_for(self, h):
        if self.grid is None:
            return default_grid(self.model, h, self.mode)
        if callable(self.grid):
            return self.grid(h)
        return self.grid

    def _build(self, h):
        if self.model is None:
            raise ConfigError(f"no table for h = {h}")
        table = solve_density_system(self.model, h, self._grid_for(h), self.mode)
        return PdeDensities(table, self.model.sigma)


def build_provider(table: DensityTable, sigma: float) -> PdeProvider:
    """Provider serving a single prebuilt table (only its own ``h``)."""
    prov = PdeProvider.__new__(PdeProvider)
    CachedProvider.__init__(prov, table.d)
    prov.model = None
    prov.grid = table.grid
    prov.mode = table.mode
    prov._tables[round(float(table.h), 12)] = PdeDensities(table, sigma)
    return prov
