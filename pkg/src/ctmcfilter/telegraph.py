"""Exact observation densities for a two-state chain.

Given the start state, the integrated chain is an affine image of the
(asymmetric) telegraph process ``I_h = int_0^h (-1)^{N_s} ds``::

    J_h = a h + b I_h,   a = (alpha_s + alpha_o) / 2,   b = (alpha_s - alpha_o) / 2

where ``s`` is the start state and ``o`` the other one.  The law of ``I_h``
is a point mass at ``h`` (no switch) plus a smooth part on ``[-h, h]`` built
from modified Bessel functions; the observed increment adds independent
``N(0, sigma^2 h)`` noise.

Kernels are written with ``B1(w)/w`` so that the factor ``sqrt((h+x)/(h-x))``
never has to be evaluated on its own: at ``x = h`` that factor diverges while
the product stays bounded.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ctmc import as_generator
from .errors import CapabilityError, DomainError, InvalidTime
from .filtering import CachedProvider
from .numerics import GaussianConvolution, GridDensity, bessel_b0, bessel_b1_over_z

KERNEL_GRID = 2001


@dataclass(frozen=True)
class TwoStateParams:
    alpha1: float
    alpha2: float
    lambda1: float
    lambda2: float
    sigma: float

    def __post_init__(self):
        if self.alpha1 == self.alpha2:
            raise DomainError("the two drifts must differ")
        if not (self.lambda1 > 0 and self.lambda2 > 0):
            raise DomainError("switching intensities must be positive")
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")

    @classmethod
    def from_model(cls, model) -> "TwoStateParams":
        if model.d != 2:
            raise CapabilityError("exact filter requires two states")
        q = as_generator(model.q).q
        return cls(float(model.alpha[0]), float(model.alpha[1]), float(q[0, 1]), float(q[1, 0]), model.sigma)

    @property
    def a(self):
        return 0.5 * (self.alpha1 + self.alpha2)

    @property
    def b1(self):
        return 0.5 * (self.alpha1 - self.alpha2)

    @property
    def b2(self):
        return -self.b1

    @property
    def symmetric(self):
        return self.lambda1 == self.lambda2

    def relabeled(self) -> "TwoStateParams":
        """Swap the roles of the two states."""
        return TwoStateParams(self.alpha2, self.alpha1, self.lambda2, self.lambda1, self.sigma)

    def for_start(self, i: int) -> "TwoStateParams":
        return self if i == 0 else self.relabeled()


def _support(x, h):
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) <= h
    xc = np.where(inside, x, 0.0)
    root = np.sqrt(np.clip(h * h - xc * xc, 0.0, None))
    return x, inside, xc, root


def _finish(x, val):
    return float(val) if np.ndim(x) == 0 else val


# symmetric kernels (switch intensity lam in both states)

def sym_kernel_even(x, h, lam):
    """Smooth part of the telegraph law restricted to an even number of switches (up to e^{-lam h})."""
    x, inside, xc, root = _support(x, h)
    val = 0.5 * lam * lam * (h + xc) * bessel_b1_over_z(lam * root)
    return _finish(x, np.where(inside, val, 0.0))


def sym_kernel_odd(x, h, lam):
    x, inside, xc, root = _support(x, h)
    val = 0.5 * lam * bessel_b0(lam * root)
    return _finish(x, np.where(inside, val, 0.0))


def sym_kernel(x, h, lam):
    x, inside, xc, root = _support(x, h)
    w = lam * root
    val = 0.5 * lam * (bessel_b0(w) + lam * (h + xc) * bessel_b1_over_z(w))
    return _finish(x, np.where(inside, val, 0.0))


# asymmetric kernels, start state has intensity lam1, the other lam2

def _tilt(xc, h, lam1, lam2):
    return np.exp(0.5 * (lam1 - lam2) * (h - xc))


def asym_kernel_even(x, h, lam1, lam2):
    x, inside, xc, root = _support(x, h)
    w = math.sqrt(lam1 * lam2) * root
    val = 0.5 * lam1 * lam2 * (h + xc) * bessel_b1_over_z(w) * _tilt(xc, h, lam1, lam2)
    return _finish(x, np.where(inside, val, 0.0))


def asym_kernel_odd(x, h, lam1, lam2):
    """Odd-switch kernel without the factor lam1 (it cancels against p12)."""
    x, inside, xc, root = _support(x, h)
    w = math.sqrt(lam1 * lam2) * root
    val = 0.5 * bessel_b0(w) * _tilt(xc, h, lam1, lam2)
    return _finish(x, np.where(inside, val, 0.0))


def asym_kernel(x, h, lam1, lam2):
    x, inside, xc, root = _support(x, h)
    w = math.sqrt(lam1 * lam2) * root
    val = 0.5 * lam1 * (bessel_b0(w) + lam2 * (h + xc) * bessel_b1_over_z(w)) * _tilt(xc, h, lam1, lam2)
    return _finish(x, np.where(inside, val, 0.0))


def two_state_transitions(lam1, lam2, t):
    """Closed-form ``exp(Q t)`` for ``Q = [[-lam1, lam1], [lam2, -lam2]]``."""
    if not t >= 0:
        raise InvalidTime(f"time must be >= 0, got {t}")
    tot = lam1 + lam2
    decay = -math.expm1(-tot * t)
    p12 = lam1 / tot * decay
    p21 = lam2 / tot * decay
    return np.array([[1.0 - p12, p12], [p21, 1.0 - p21]])


def _weights(params: TwoStateParams, h: float, form: str):
    """(marginal, same-state, other-state) prefactors for start state 1."""
    if form == "symmetric":
        lam = params.lambda1
        return math.exp(-lam * h), 1.0 / math.cosh(lam * h), 1.0 / math.sinh(lam * h)
    l1, l2 = params.lambda1, params.lambda2
    return (
        math.exp(-l1 * h),
        (l1 + l2) / (l2 * math.exp(l1 * h) + l1 * math.exp(-l2 * h)),
        (l1 + l2) / (math.exp(l1 * h) - math.exp(-l2 * h)),
    )


def _resolve_form(params, form):
    if form == "auto":
        return "symmetric" if params.symmetric else "asymmetric"
    if form == "symmetric" and not params.symmetric:
        raise DomainError("symmetric formulas need lambda1 == lambda2")
    if form not in ("symmetric", "asymmetric"):
        raise ValueError(f"unknown form {form!r}")
    return form


def jump_densities(params: TwoStateParams, i: int, h: float, n_grid=KERNEL_GRID, form="auto"):
    """Laws of ``J_h`` given start state ``i``: ``(marginal, given end i, given end other)``.

    Each is a GridDensity on ``[h(a-|b|), h(a+|b|)]``; the first two carry the
    no-switch atom at ``alpha_i h``.
    """
    if not h > 0:
        raise InvalidTime(f"step must be positive, got {h}")
    form = _resolve_form(params, form)
    p = params.for_start(i)
    a, b = p.a, p.b1
    xs = np.linspace(h * (a - abs(b)), h * (a + abs(b)), n_grid)
    u = np.clip((xs - a * h) / b, -h, h)
    w_marg, w_same, w_other = _weights(p, h, form)
    if form == "symmetric":
        lam = p.lambda1
        k_marg = sym_kernel(u, h, lam)
        k_same = sym_kernel_even(u, h, lam)
        k_other = sym_kernel_odd(u, h, lam)
    else:
        k_marg = asym_kernel(u, h, p.lambda1, p.lambda2)
        k_same = asym_kernel_even(u, h, p.lambda1, p.lambda2)
        k_other = asym_kernel_odd(u, h, p.lambda1, p.lambda2)
    loc = h * (a + b)
    scale = 1.0 / abs(b)
    return (
        GridDensity(xs, w_marg * scale * k_marg, (loc, w_marg)),
        GridDensity(xs, w_same * scale * k_same, (loc, w_same)),
        GridDensity(xs, w_other * scale * k_other, None),
    )


class TwoStateDensities:
    """All exact densities for one step length, evaluated together."""

    def __init__(self, params: TwoStateParams, h: float, n_grid=KERNEL_GRID, form="auto"):
        self.params = params
        self.h = h
        self.form = _resolve_form(params, form)
        m0, s0, o0 = jump_densities(params, 0, h, n_grid, self.form)
        m1, s1, o1 = jump_densities(params, 1, h, n_grid, self.form)
        # order: g1, g2, g11, g12, g21, g22
        self.jump_laws = [m0, m1, s0, o0, o1, s1]
        self.conv = GaussianConvolution(self.jump_laws, params.sigma * math.sqrt(h))
        self.transition = two_state_transitions(params.lambda1, params.lambda2, h)

    def all(self, z):
        return self.conv(z)

    def cdf(self, z):
        return self.conv.cdf(z)

    def marginal(self, z):
        return self.conv(z)[:2]

    def conditional(self, z):
        v = self.conv(z)
        return np.stack([np.stack([v[2], v[3]]), np.stack([v[4], v[5]])])


def density_g_i(params: TwoStateParams, i: int, z, h: float, **kw):
    """Density of ``Z_h`` given start state ``i`` (0-based)."""
    m, _, _ = jump_densities(params, i, h, **kw)
    return GaussianConvolution(m, params.sigma * math.sqrt(h))(z)


def density_g_ij(params: TwoStateParams, i: int, j: int, z, h: float, **kw):
    """Density of ``Z_h`` given start state ``i`` and end state ``j`` (0-based)."""
    _, same, other = jump_densities(params, i, h, **kw)
    f = same if i == j else other
    return GaussianConvolution(f, params.sigma * math.sqrt(h))(z)


class ExactTwoStateProvider(CachedProvider):
    """Exact filter densities; the marginals come straight from the closed forms."""

    def __init__(self, params: TwoStateParams, n_grid=KERNEL_GRID, form="auto"):
        super().__init__(2)
        self.params = params
        self.n_grid = n_grid
        self.form = form

    @classmethod
    def from_model(cls, model, **kw):
        return cls(TwoStateParams.from_model(model), **kw)

    def _build(self, h):
        return TwoStateDensities(self.params, h, self.n_grid, self.form)

    def marginal_vector(self, z, h):
        return self.table(h).marginal(z)
