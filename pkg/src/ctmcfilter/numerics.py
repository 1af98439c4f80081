"""Special functions and quadrature shared by the density engines.

The modified Bessel functions here are the series ``B0`` and ``B1`` that show
up in the telegraph-process densities. They are summed directly for moderate
arguments and switch to the large-argument expansion beyond ``z = 30``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import DomainError, GridTooCoarse, OutOfRange

SERIES_CUTOFF = 30.0
MAX_TERMS = 500
REL_TOL = 1e-16
_SQRT_2PI = math.sqrt(2.0 * math.pi)
_CHUNK = 256


def _as_nonneg(z):
    arr = np.asarray(z, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError("Bessel series are defined for z >= 0 only")
    return arr


def _series_sum(z, order):
    """Sum_k (z^2/4)^k / (k! (k+order)!) elementwise, for 0 <= z <= SERIES_CUTOFF."""
    u = 0.25 * z * z
    term = np.ones_like(z)
    total = np.ones_like(z)
    for k in range(1, MAX_TERMS):
        term = term * u / (k * (k + order))
        total = total + term
        if np.all(term <= REL_TOL * total):
            break
    return total


def _asymptotic(z, order):
    """Large-argument expansion of I_order(z) (Hankel), valid for z > SERIES_CUTOFF."""
    mu = 4.0 * order * order
    coef = np.ones_like(z)
    total = np.ones_like(z)
    for k in range(1, 40):
        coef = -coef * (mu - (2 * k - 1) ** 2) / (8.0 * k * z)
        total = total + coef
        if np.all(np.abs(coef) <= 1e-17 * np.abs(total)):
            break
    with np.errstate(over="ignore"):
        return np.exp(z) / np.sqrt(2.0 * np.pi * z) * total


def _bessel(z, order):
    arr = _as_nonneg(z)
    flat = np.atleast_1d(arr).astype(float)
    out = np.empty_like(flat)
    small = flat <= SERIES_CUTOFF
    if np.any(small):
        zs = flat[small]
        s = _series_sum(zs, order)
        out[small] = s if order == 0 else 0.5 * zs * s
    if np.any(~small):
        out[~small] = _asymptotic(flat[~small], order)
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def bessel_b0(z):
    """Modified Bessel function B0(z) = sum_k (z^2/4)^k / (k!)^2."""
    return _bessel(z, 0)


def bessel_b1(z):
    """Modified Bessel function B1(z) = (z/2) sum_k (z^2/4)^k / (k! (k+1)!)."""
    return _bessel(z, 1)


def bessel_b1_over_z(z):
    """B1(z) / z, continuous at the origin where it equals 1/2.

    The telegraph kernels multiply B1 by a factor that diverges where its
    argument vanishes; writing the product through B1(z)/z keeps it finite.
    """
    arr = _as_nonneg(z)
    flat = np.atleast_1d(arr).astype(float)
    out = np.empty_like(flat)
    small = flat <= SERIES_CUTOFF
    if np.any(small):
        out[small] = 0.5 * _series_sum(flat[small], 1)
    if np.any(~small):
        zl = flat[~small]
        out[~small] = _asymptotic(zl, 1) / zl
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def gaussian_pdf(x, s):
    """Centered normal density with standard deviation ``s``."""
    if not s > 0:
        raise DomainError(f"standard deviation must be positive, got {s}")
    x = np.asarray(x, dtype=float)
    val = np.exp(-0.5 * (x / s) ** 2) / (_SQRT_2PI * s)
    return float(val) if val.ndim == 0 else val


def simpson_weights(n, dx):
    """Composite Simpson weights for ``n`` equispaced nodes.

    Even ``n`` closes the last three intervals with Simpson's 3/8 rule.
    """
    if n < 5:
        raise GridTooCoarse(f"need at least 5 grid points, got {n}")
    w = np.zeros(n)
    m = n if n % 2 == 1 else n - 3
    w[:m:2] = 2.0
    w[1:m:2] = 4.0
    w[0] = 1.0
    w[m - 1] = 1.0
    w[:m] *= dx / 3.0
    if m < n:
        w[m - 1:] += np.array([1.0, 3.0, 3.0, 1.0]) * (3.0 * dx / 8.0)
    return w


@dataclass(frozen=True)
class GridDensity:
    """A density tabulated on an equispaced grid, plus an optional point mass.

    ``atom`` is ``(location, weight)`` or ``None``.  ``cell_mass`` optionally
    holds the exact integral over each cell ``[x - dx/2, x + dx/2]``; when it is
    given it replaces Simpson quadrature of the point values, which matters for
    densities with jumps between nodes.
    """

    xs: np.ndarray
    values: np.ndarray
    atom: tuple[float, float] | None = None
    cell_mass: np.ndarray | None = None
    _weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if xs.ndim != 1 or xs.shape != vals.shape:
            raise ValueError("xs and values must be 1-d arrays of equal length")
        if xs.size < 2 or np.any(np.diff(xs) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(vals < -1e-12):
            raise ValueError(f"density values below -1e-12 (min {vals.min():.3e})")
        vals = np.clip(vals, 0.0, None)
        if self.atom is not None:
            loc, weight = self.atom
            if not -1e-12 <= weight <= 1 + 1e-12:
                raise ValueError(f"atom weight {weight} outside [0, 1]")
            object.__setattr__(self, "atom", (float(loc), float(weight)))
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "values", vals)
        if self.cell_mass is not None:
            cm = np.asarray(self.cell_mass, dtype=float)
            if cm.shape != xs.shape:
                raise ValueError("cell_mass must match the grid")
            object.__setattr__(self, "cell_mass", np.clip(cm, 0.0, None))
        w = simpson_weights(xs.size, self.dx) if xs.size >= 5 else None
        object.__setattr__(self, "_weights", w)

    @property
    def dx(self):
        return (self.xs[-1] - self.xs[0]) / (self.xs.size - 1)

    @property
    def atom_weight(self):
        return 0.0 if self.atom is None else self.atom[1]

    @property
    def quadrature_weights(self):
        if self._weights is None:
            raise GridTooCoarse(f"need at least 5 grid points, got {self.xs.size}")
        return self._weights

    @property
    def coefficients(self):
        """Per-node masses used for integration and convolution."""
        if self.cell_mass is not None:
            return self.cell_mass
        return self.quadrature_weights * self.values

    def smooth_mass(self):
        return float(np.sum(self.coefficients))

    def mass(self):
        return self.smooth_mass() + self.atom_weight

    def scaled(self, factor):
        atom = None if self.atom is None else (self.atom[0], self.atom[1] * factor)
        cm = None if self.cell_mass is None else self.cell_mass * factor
        return GridDensity(self.xs, self.values * factor, atom, cm)

    def with_smooth_mass(self, target):
        """Rescale the smooth part so that it integrates to ``target``."""
        m = self.smooth_mass()
        c = target / m if m > 0 else 1.0
        cm = None if self.cell_mass is None else self.cell_mass * c
        return GridDensity(self.xs, self.values * c, self.atom, cm)


class GaussianConvolution:
    """Evaluator of ``z -> int phi_s(z - x) f(x) dx`` (plus any atom) for GridDensities.

    Several densities sharing one grid can be convolved together; calling the
    evaluator then returns an array with a leading axis over the densities.
    """

    def __init__(self, f, s: float):
        if not s > 0:
            raise DomainError(f"standard deviation must be positive, got {s}")
        self.single = isinstance(f, GridDensity)
        fs = [f] if self.single else list(f)
        xs = fs[0].xs
        if xs.size < 5:
            raise GridTooCoarse(f"need at least 5 grid points, got {xs.size}")
        for other in fs[1:]:
            if other.xs.shape != xs.shape or not np.array_equal(other.xs, xs):
                raise ValueError("densities convolved together must share a grid")
        coef = np.stack([g.coefficients for g in fs])
        keep = np.any(coef != 0.0, axis=0)
        self.s = float(s)
        self.nodes = xs[keep]
        self.coef = coef[:, keep]
        self.atom_loc = np.array([g.atom[0] if g.atom else 0.0 for g in fs])
        self.atom_weight = np.array([g.atom_weight for g in fs])
        self.mass = self.coef.sum(axis=1) + self.atom_weight

    def _apply(self, z, kernel):
        z = np.asarray(z, dtype=float)
        flat = np.atleast_1d(z).ravel()
        m = self.coef.shape[0]
        out = np.zeros((m, flat.size))
        if self.nodes.size:
            for start in range(0, flat.size, _CHUNK):
                zz = flat[start:start + _CHUNK]
                out[:, start:start + _CHUNK] = self.coef @ kernel(zz[None, :] - self.nodes[:, None])
        has_atom = self.atom_weight > 0
        if np.any(has_atom):
            out[has_atom] += self.atom_weight[has_atom, None] * kernel(
                flat[None, :] - self.atom_loc[has_atom, None]
            )
        out = out.reshape((m,) + z.shape)
        if self.single:
            out = out[0]
            return float(out) if z.ndim == 0 else out
        return out

    def __call__(self, z):
        s = self.s
        return self._apply(z, lambda u: np.exp(-0.5 * (u / s) ** 2) / (_SQRT_2PI * s))

    def cdf(self, z):
        """Distribution function of the convolved law (unnormalized if mass != 1)."""
        s = self.s
        return self._apply(z, lambda u: ndtr(u / s))


def convolve_gaussian(f, s: float) -> GaussianConvolution:
    return GaussianConvolution(f, s)


class CatmullRomTable:
    """Catmull-Rom interpolant of equispaced rows, with the padding done once.

    ``values`` has shape ``(..., n)``; calling with ``x`` returns
    ``values.shape[:-1] + x.shape``.  Points outside ``[x0, x0 + (n-1) dx]``
    evaluate to 0 and negative results are clipped.
    """

    def __init__(self, values, x0: float, dx: float):
        values = np.asarray(values, dtype=float)
        if values.shape[-1] < 2:
            raise GridTooCoarse("need at least two nodes")
        self.n = values.shape[-1]
        self.x0 = float(x0)
        self.dx = float(dx)
        # ghost nodes by linear extrapolation keep linear data exact at the ends
        left = 2.0 * values[..., :1] - values[..., 1:2]
        right = 2.0 * values[..., -1:] - values[..., -2:-1]
        self.padded = np.concatenate([left, values, right], axis=-1)

    def _scalar(self, x: float):
        pos = (x - self.x0) / self.dx
        if pos < -1e-9 or pos > self.n - 1 + 1e-9:
            return np.zeros(self.padded.shape[:-1])
        pos = min(max(pos, 0.0), self.n - 1)
        k = min(int(pos), self.n - 2)
        t = pos - k
        t2 = t * t
        t3 = t2 * t
        w = np.array([-t + 2.0 * t2 - t3, 2.0 - 5.0 * t2 + 3.0 * t3, t + 4.0 * t2 - 3.0 * t3, t3 - t2])
        return np.maximum(0.5 * (self.padded[..., k:k + 4] @ w), 0.0)

    def __call__(self, x):
        if np.ndim(x) == 0:
            return self._scalar(float(x))
        x = np.asarray(x, dtype=float)
        n = self.n
        pos = (x - self.x0) / self.dx
        inside = (pos >= -1e-9) & (pos <= n - 1 + 1e-9)
        pos = np.clip(pos, 0.0, n - 1)
        k = np.minimum(np.floor(pos).astype(int), n - 2)
        t = pos - k
        t2 = t * t
        t3 = t2 * t
        # cubic Hermite weights of the four neighbouring nodes
        w0 = 0.5 * (-t + 2.0 * t2 - t3)
        w1 = 0.5 * (2.0 - 5.0 * t2 + 3.0 * t3)
        w2 = 0.5 * (t + 4.0 * t2 - 3.0 * t3)
        w3 = 0.5 * (t3 - t2)
        pad = self.padded
        res = w0 * pad[..., k] + w1 * pad[..., k + 1] + w2 * pad[..., k + 2] + w3 * pad[..., k + 3]
        res = np.where(inside, res, 0.0)
        return np.clip(res, 0.0, None)


def catmull_rom(values, x0, dx, x):
    """Catmull-Rom interpolation of equispaced rows at points ``x`` (see CatmullRomTable)."""
    return CatmullRomTable(values, x0, dx)(x)


def interpolate_cubic(table: GridDensity, x):
    """Cubic (Catmull-Rom) value of a tabulated density; raises OutOfRange off-grid."""
    xa = np.asarray(x, dtype=float)
    lo, hi = table.xs[0], table.xs[-1]
    tol = 1e-12 * max(1.0, abs(lo), abs(hi))
    if np.any(xa < lo - tol) or np.any(xa > hi + tol):
        raise OutOfRange(f"x outside [{lo}, {hi}]")
    res = catmull_rom(table.values, lo, table.dx, np.clip(xa, lo, hi))
    return float(res) if xa.ndim == 0 else res
