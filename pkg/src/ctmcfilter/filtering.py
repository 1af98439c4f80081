"""Discrete-time Bayesian filter recursion over pluggable density providers.

One step maps the posterior ``mu`` of the hidden state at ``t_{n-1}`` to the
posterior at ``t_n`` given the observed increment ``dz``::

    mu_n(j) ∝ sum_i p_ij(h) g_ij(dz, h) mu_{n-1}(i)

The normalizer is the sum of the numerators, so approximate providers whose
``g_i`` and ``g_ij`` come from different numerics still produce a simplex.
"""
from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .ctmc import validate_distribution
from .errors import DegenerateLikelihood, ShapeError

UNDERFLOW = 1e-300


class DensityProvider:
    """Supplies ``p_ij(h)``, ``g_ij(z, h)`` and ``g_i(z, h)`` to the filter.

    Subclasses implement :meth:`transition` and :meth:`conditional_matrix`;
    ``conditional_matrix(z, h)`` returns an array of shape ``(d, d) + z.shape``.
    """

    d: int

    def transition(self, h: float) -> np.ndarray:
        raise NotImplementedError

    def conditional_matrix(self, z, h: float) -> np.ndarray:
        raise NotImplementedError

    def prepare(self, h: float) -> None:
        """Do any per-step-length setup up front (keeps it out of step timings)."""

    def marginal_vector(self, z, h: float) -> np.ndarray:
        """``g_i`` for every start state, assembled from the conditionals by conditioning."""
        g = self.conditional_matrix(z, h)
        p = self.transition(h)
        extra = (None,) * (np.ndim(g) - 2)
        return np.sum(g * p[(Ellipsis,) + extra], axis=1)

    def g_conditional(self, i: int, j: int, z, h: float):
        return self.conditional_matrix(z, h)[i, j]

    def g_marginal(self, i: int, z, h: float):
        return self.marginal_vector(z, h)[i]


class CachedProvider(DensityProvider):
    """Provider whose per-step tables are built once per step length and reused."""

    def __init__(self, d: int):
        self.d = d
        self._tables = {}

    def _build(self, h: float):
        raise NotImplementedError

    def table(self, h: float):
        key = round(float(h), 12)
        tab = self._tables.get(key)
        if tab is None:
            tab = self._tables[key] = self._build(float(h))
        return tab

    def prepare(self, h):
        self.table(h)

    def transition(self, h):
        return self.table(h).transition

    def conditional_matrix(self, z, h):
        return self.table(h).conditional(z)


class FilterUpdate(NamedTuple):
    mu: np.ndarray
    normalizer: float
    degenerate: bool


def filter_update(mu, dz, h, provider) -> FilterUpdate:
    p = provider.transition(h)
    g = provider.conditional_matrix(dz, h)
    num = mu @ (p * g)
    if not np.any(num >= UNDERFLOW):
        pred = mu @ p
        return FilterUpdate(pred / pred.sum(), 0.0, True)
    total = float(num.sum())
    return FilterUpdate(num / total, total, False)


def filter_step(mu, dz, h, provider) -> np.ndarray:
    """One Bayes update; warns with DegenerateLikelihood when every numerator underflows."""
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    mu = validate_distribution(mu, provider.d)
    upd = filter_update(mu, float(dz), h, provider)
    if upd.degenerate:
        warnings.warn(f"likelihood underflow at dz={dz}", DegenerateLikelihood, stacklevel=2)
    return upd.mu


@dataclass(frozen=True)
class FilterState:
    mu: np.ndarray
    n: int
    t: float


@dataclass
class FilterTrajectory:
    """Posteriors at ``times`` (row 0 is the prior) plus per-step diagnostics."""

    times: np.ndarray
    mu: np.ndarray
    normalizers: np.ndarray
    degenerate: np.ndarray
    step_seconds: np.ndarray
    method: str = ""
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    @property
    def d(self) -> int:
        return self.mu.shape[1]

    @property
    def states(self) -> list[FilterState]:
        return [FilterState(self.mu[n], n, float(t)) for n, t in enumerate(self.times)]

    @property
    def final(self) -> np.ndarray:
        return self.mu[-1]


def run_filter(obs, provider, p0, method="") -> FilterTrajectory:
    """Filter an observation series; ``obs`` needs ``h`` and ``increments``.

    Degenerate steps are flagged, never fatal.  Table construction happens
    before the first step and is excluded from ``step_seconds``.
    """
    mu = validate_distribution(p0, provider.d)
    incs = np.asarray(obs.increments, dtype=float)
    h = float(obs.h)
    provider.prepare(h)
    n = incs.size
    mus = np.empty((n + 1, provider.d))
    mus[0] = mu
    norms = np.zeros(n)
    flags = np.zeros(n, dtype=bool)
    secs = np.zeros(n)
    for k, dz in enumerate(incs):
        t0 = time.perf_counter()
        upd = filter_update(mu, dz, h, provider)
        secs[k] = time.perf_counter() - t0
        mu = upd.mu
        mus[k + 1] = mu
        norms[k] = upd.normalizer
        flags[k] = upd.degenerate
    times = h * np.arange(n + 1)
    return FilterTrajectory(times, mus, norms, flags, secs, method)


def summarize(traj: FilterTrajectory, alpha) -> dict:
    """Posterior mean state label (1-based), mean drift and MAP label (ties -> lowest)."""
    mu = traj.mu
    alpha = np.asarray(alpha, dtype=float)
    labels = np.arange(1, mu.shape[1] + 1)
    return {
        "state_index_mean": mu @ labels,
        "alpha_mean": mu @ alpha,
        "map_state": np.argmax(mu, axis=1) + 1,
    }


def compare(traj_a: FilterTrajectory, traj_b: FilterTrajectory, truth=None, alpha=None) -> dict:
    """Agreement between two trajectories and, optionally, their accuracy against truth.

    ``truth`` holds the 0-based true state at each trajectory time.  The
    initial prior row is excluded from every average.
    """
    if traj_a.mu.shape != traj_b.mu.shape:
        raise ShapeError(f"trajectory shapes differ: {traj_a.mu.shape} vs {traj_b.mu.shape}")
    sl = slice(1, None) if len(traj_a) > 1 else slice(None)
    diff = np.abs(traj_a.mu[sl] - traj_b.mu[sl])
    report = {
        "mean_abs_diff": float(diff.mean()),
        "max_abs_diff": float(diff.max()),
        "per_step_time": {
            traj_a.method or "a": float(np.mean(traj_a.step_seconds)) if traj_a.step_seconds.size else 0.0,
            traj_b.method or "b": float(np.mean(traj_b.step_seconds)) if traj_b.step_seconds.size else 0.0,
        },
    }
    if truth is not None:
        truth = np.asarray(truth)
        if truth.shape[0] != len(traj_a):
            raise ShapeError(f"truth has {truth.shape[0]} entries for {len(traj_a)} posteriors")
        al = np.zeros(traj_a.d) if alpha is None else alpha
        rmse, acc = {}, {}
        for name, tr in ((traj_a.method or "a", traj_a), (traj_b.method or "b", traj_b)):
            s = summarize(tr, al)
            err = s["state_index_mean"][sl] - (truth[sl] + 1)
            rmse[name] = float(np.sqrt(np.mean(err**2)))
            acc[name] = float(np.mean(s["map_state"][sl] == truth[sl] + 1))
        report["rmse_vs_truth"] = rmse
        report["map_accuracy"] = acc
    return report


def posterior_rows(traj: FilterTrajectory, alpha, method=None):
    """Rows of the posterior CSV schema (header first)."""
    d = traj.d
    s = summarize(traj, alpha)
    header = ["t"] + [f"mu_{k + 1}" for k in range(d)] + [
        "state_index_mean", "alpha_mean", "map_state", "degenerate_flag",
    ]
    if method is not None:
        header.append("method")
    rows = [header]
    flags = np.concatenate([[False], traj.degenerate])
    for n in range(len(traj)):
        row = [repr(float(traj.times[n]))] + [repr(float(v)) for v in traj.mu[n]] + [
            repr(float(s["state_index_mean"][n])),
            repr(float(s["alpha_mean"][n])),
            str(int(s["map_state"][n])),
            str(int(flags[n])),
        ]
        if method is not None:
            row.append(method)
        rows.append(row)
    return rows


def write_posterior_csv(path, traj: FilterTrajectory, alpha, method=None):
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(posterior_rows(traj, alpha, method))
