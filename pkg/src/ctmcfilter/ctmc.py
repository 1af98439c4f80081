"""Finite-state continuous-time Markov chains.

Conventions: row-stochastic transition matrices, ``P(t)[i, j] = P(eps_t = j | eps_0 = i)``,
so a marginal law evolves as ``p(t) = P(t).T @ p0``. States are 0-based.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    AbsorbingState,
    InconsistentGenerator,
    InvalidDistribution,
    InvalidTime,
    NegativeOffDiagonal,
    NonSquare,
)

ROW_SUM_TOL = 1e-8
_TAYLOR_TERMS = 18


@dataclass(frozen=True)
class GeneratorMatrix:
    """Validated intensity matrix; construct through :func:`validate_generator`."""

    q: np.ndarray

    @property
    def d(self) -> int:
        return self.q.shape[0]

    @property
    def exit_rates(self) -> np.ndarray:
        return -np.diag(self.q).copy()

    def __array__(self, dtype=None, copy=None):
        return self.q if dtype is None else self.q.astype(dtype)


def validate_generator(raw) -> GeneratorMatrix:
    q = np.array(raw, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise NonSquare(f"generator must be square, got shape {q.shape}")
    if q.shape[0] < 1:
        raise NonSquare("generator must have at least one state")
    off = q.copy()
    np.fill_diagonal(off, 0.0)
    if np.any(off < 0):
        i, k = np.argwhere(off < 0)[0]
        raise NegativeOffDiagonal(f"q[{i},{k}] = {q[i, k]} < 0")
    dev = np.abs(q.sum(axis=1))
    if np.any(dev > ROW_SUM_TOL):
        i = int(np.argmax(dev))
        raise InconsistentGenerator(f"row {i} sums to {q[i].sum():.3e}, not 0")
    np.fill_diagonal(off, -off.sum(axis=1))
    off.setflags(write=False)
    return GeneratorMatrix(off)


def as_generator(q) -> GeneratorMatrix:
    return q if isinstance(q, GeneratorMatrix) else validate_generator(q)


def validate_distribution(p, d=None, tol=1e-12) -> np.ndarray:
    arr = np.array(p, dtype=float).ravel()
    if d is not None and arr.size != d:
        raise InvalidDistribution(f"expected {d} probabilities, got {arr.size}")
    if np.any(arr < -tol):
        raise InvalidDistribution("probabilities must be non-negative")
    if abs(arr.sum() - 1.0) > tol:
        raise InvalidDistribution(f"probabilities sum to {arr.sum()!r}, not 1")
    arr = np.clip(arr, 0.0, None)
    return arr / arr.sum()


def expm(a) -> np.ndarray:
    """Matrix exponential (scipy's scaling-and-squaring Pade approximant)."""
    return scipy.linalg.expm(np.asarray(a, dtype=float))


def expm_taylor(a) -> np.ndarray:
    """Matrix exponential by scaling and squaring around a truncated Taylor series.

    Slower than :func:`expm`; kept as an independent cross-check.
    """
    a = np.asarray(a, dtype=float)
    norm = np.abs(a).sum(axis=0).max() if a.size else 0.0
    squarings = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    b = a / (2.0 ** squarings)
    n = a.shape[0]
    result = np.eye(n)
    term = np.eye(n)
    for k in range(1, _TAYLOR_TERMS + 1):
        term = term @ b / k
        result = result + term
    for _ in range(squarings):
        result = result @ result
    return result


def transition_matrix(gen, t: float) -> np.ndarray:
    """h-step transition probabilities ``exp(Q t)``."""
    if not t >= 0:
        raise InvalidTime(f"time must be >= 0, got {t}")
    g = as_generator(gen)
    if t == 0:
        return np.eye(g.d)
    p = expm(g.q * t)
    p = np.clip(p, 0.0, None)
    return p / p.sum(axis=1, keepdims=True)


def marginal(gen, p0, t: float) -> np.ndarray:
    g = as_generator(gen)
    p0 = validate_distribution(p0, g.d)
    p = transition_matrix(g, t).T @ p0
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def stationary_distribution(gen) -> np.ndarray:
    """Solve pi Q = 0, sum(pi) = 1 by least squares (unique for irreducible chains)."""
    g = as_generator(gen)
    a = np.vstack([g.q.T, np.ones(g.d)])
    rhs = np.zeros(g.d + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def embedded_chain(gen):
    """Exit rates and jump probabilities ``q_ik / q_i``.

    Returns ``(rates, jumps, absorbing)``; rows of absorbing states are zero and
    flagged in the boolean ``absorbing`` vector.
    """
    g = as_generator(gen)
    rates = g.exit_rates
    absorbing = rates <= 0
    jumps = g.q.copy()
    np.fill_diagonal(jumps, 0.0)
    safe = np.where(absorbing, 1.0, rates)
    jumps = jumps / safe[:, None]
    jumps[absorbing] = 0.0
    return rates, jumps, absorbing


def require_no_absorbing(gen):
    _, _, absorbing = embedded_chain(gen)
    if np.any(absorbing):
        raise AbsorbingState(f"absorbing states {np.flatnonzero(absorbing).tolist()}")


@dataclass(frozen=True)
class CtmcPath:
    """A sampled trajectory on ``[0, T]``.

    ``states[k]`` is occupied on ``[jump_times[k-1], jump_times[k])`` with the
    convention ``jump_times[-1] = 0`` and a final interval ending at ``T``.
    """

    jump_times: np.ndarray
    states: np.ndarray
    T: float

    def __post_init__(self):
        if len(self.states) != len(self.jump_times) + 1:
            raise ValueError("need exactly one more state than jump times")
        if np.any(np.diff(self.jump_times) <= 0):
            raise ValueError("jump times must be strictly increasing")
        if np.any(self.states[1:] == self.states[:-1]):
            raise ValueError("consecutive states must differ")

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)

    def state_at(self, t):
        """State occupied at time(s) ``t`` (right-continuous)."""
        idx = np.searchsorted(self.jump_times, t, side="right")
        return self.states[idx]

    def jumps_before(self, t) -> int:
        return int(np.searchsorted(self.jump_times, t, side="right"))


def sample_path(gen, p0, T: float, rng_seed=None) -> CtmcPath:
    """Exact event-driven simulation of the chain on ``[0, T]``.

    ``rng_seed`` may be an int, ``None`` or a ``numpy.random.Generator``.
    """
    if not T > 0:
        raise InvalidTime(f"horizon must be positive, got {T}")
    g = as_generator(gen)
    p0 = validate_distribution(p0, g.d)
    rng = np.random.default_rng(rng_seed)
    rates, jumps, absorbing = embedded_chain(g)
    state = int(rng.choice(g.d, p=p0))
    times, states = [], [state]
    t = 0.0
    while not absorbing[state]:
        t += rng.exponential(1.0 / rates[state])
        if t >= T:
            break
        state = int(rng.choice(g.d, p=jumps[state]))
        times.append(t)
        states.append(state)
    return CtmcPath(np.array(times), np.array(states, dtype=int), float(T))
