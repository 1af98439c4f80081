"""Gaussian-mixture densities from the chain sampled on a sub-grid of the step.

With ``dt = h / N`` the integral ``J_h`` is replaced by the right-endpoint sum
``dt * sum_{m=1..N} alpha[eps_{m dt}]``, a discrete variable.  Its law (jointly
with the end state) is accumulated by dynamic programming over
``(start, current state, partial sum)``; coinciding partial sums are merged, so
the cost grows with the number of distinct sums rather than with ``d**N``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ctmc import transition_matrix
from .errors import InvalidTime, SupportOverflow, UnreachablePair
from .filtering import CachedProvider

MERGE_TOL = 1e-12
MAX_SUPPORT = 10**6
_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class LatticeLaw:
    """``joint[i, j, k] = P(J_hat = support[k], eps_h = j | eps_0 = i)``."""

    N: int
    h: float
    support: np.ndarray
    joint: np.ndarray

    @property
    def dt(self) -> float:
        return self.h / self.N

    @property
    def probs(self) -> np.ndarray:
        """``P_i(J_hat = support[k])`` with shape ``(d, n_support)``."""
        return self.joint.sum(axis=1)

    @property
    def p_lattice(self) -> np.ndarray:
        """End-state probabilities implied by the lattice (equal to exp(Q h))."""
        return self.joint.sum(axis=2)

    def conditional_weights(self, i: int, j: int) -> np.ndarray:
        pij = self.p_lattice[i, j]
        if pij <= 1e-14:
            raise UnreachablePair(f"p_{i}{j}(h) = {pij:.3e}")
        return self.joint[i, j] / pij


def _merge(values, tol):
    """Sorted distinct values (within ``tol``) and the index of each input in that list."""
    order = np.argsort(values, kind="stable")
    sv = values[order]
    new_group = np.concatenate([[True], np.diff(sv) > tol])
    group = np.cumsum(new_group) - 1
    reps = sv[new_group]
    index = np.empty(values.size, dtype=int)
    index[order] = group
    return reps, index


def build_lattice(model, h: float, N: int, merge_tol=MERGE_TOL, max_support=MAX_SUPPORT) -> LatticeLaw:
    if N < 1:
        raise ValueError("need at least one sub-step")
    if not h > 0:
        raise InvalidTime(f"h must be positive, got {h}")
    d = model.d
    dt = h / N
    P = transition_matrix(model.generator, dt)
    off = ~np.eye(d, dtype=bool)
    if np.any(P[off] <= 0):
        raise UnreachablePair("lattice densities assume p_ij(dt) > 0 for all i != j")
    steps = model.alpha * dt
    support = np.zeros(1)
    joint = np.eye(d)[:, :, None]  # (start, current, support)
    tol = merge_tol * h
    for _ in range(N):
        moved = joint.transpose(0, 2, 1) @ P  # (start, support, next)
        cand = (support[:, None] + steps[None, :]).ravel()  # (support, next) flattened
        new_support, index = _merge(cand, tol)
        if new_support.size > max_support:
            raise SupportOverflow(f"{new_support.size} distinct sums exceed the cap {max_support}")
        new_joint = np.zeros((d, d, new_support.size))
        idx = index.reshape(support.size, d)
        for k in range(d):
            np.add.at(new_joint[:, k, :], (slice(None), idx[:, k]), moved[:, :, k])
        support, joint = new_support, new_joint
    return LatticeLaw(N, h, support, joint)


def _mixture(weights, support, s, z):
    z = np.asarray(z, dtype=float)
    phi = np.exp(-0.5 * ((np.atleast_1d(z).ravel()[None, :] - support[:, None]) / s) ** 2) / (_SQRT_2PI * s)
    out = weights @ phi
    return out.reshape(weights.shape[:-1] + z.shape)


def g_hat_i(lattice: LatticeLaw, sigma: float, i: int, z, h: float | None = None):
    """Mixture approximation of the density of ``Z_h`` given start state ``i``."""
    h = lattice.h if h is None else h
    return _mixture(lattice.probs[i], lattice.support, sigma * math.sqrt(h), z)


def g_hat_ij(lattice: LatticeLaw, sigma: float, i: int, j: int, z, h: float | None = None):
    """Mixture approximation of the density of ``Z_h`` given start ``i`` and end ``j``."""
    h = lattice.h if h is None else h
    return _mixture(lattice.conditional_weights(i, j), lattice.support, sigma * math.sqrt(h), z)


class LatticeMixtures:
    """Precomputed conditional mixtures for one step length."""

    def __init__(self, law: LatticeLaw, sigma: float, transition: np.ndarray):
        self.law = law
        self.s = sigma * math.sqrt(law.h)
        p_lat = law.p_lattice
        safe = np.where(p_lat > 1e-14, p_lat, 1.0)
        self.weights = law.joint / safe[:, :, None]
        self.marginal_weights = law.probs
        self.transition = transition

    def conditional(self, z):
        return _mixture(self.weights, self.law.support, self.s, z)

    def marginal(self, z):
        return _mixture(self.marginal_weights, self.law.support, self.s, z)


class LatticeProvider(CachedProvider):
    def __init__(self, model, N: int, merge_tol=MERGE_TOL):
        super().__init__(model.d)
        self.model = model
        self.N = N
        self.merge_tol = merge_tol

    def _build(self, h):
        law = build_lattice(self.model, h, self.N, self.merge_tol)
        return LatticeMixtures(law, self.model.sigma, transition_matrix(self.model.generator, h))

    def marginal_vector(self, z, h):
        return self.table(h).marginal(z)
