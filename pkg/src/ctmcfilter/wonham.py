"""Approximate filters derived from the continuous-observation (Wonham) problem.

The unnormalized conditional law solves the Zakai equation

    d xi = Q^T xi dt + D xi dZ,   D = diag(alpha / sigma^2),   xi_0 = p0

and the posterior is ``xi / sum(xi)``.  Two discretizations usable with
sampled data are provided:

* quasi-exact: ``exp(Q^T t - sigma^2 D^2 t / 2 + D Z_t) p0``, exact when ``Q``
  and ``D`` commute;
* Milstein: ``xi <- [I + Q^T h + D dZ + D^2 (dZ^2 - sigma^2 h) / 2] xi``.

``variant="linear"`` drops ``sigma^2`` from the Ito correction (``D^2 t / 2``)
and uses the Milstein factor ``D (I + D/2) dZ``, which is linear in ``dZ``.
"""
from __future__ import annotations

import time

import numpy as np

from .ctmc import expm, marginal, transition_matrix, validate_distribution
from .filtering import FilterTrajectory

POS_FLOOR = 1e-12
VARIANTS = ("ito", "linear")


def _check_variant(variant):
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")


def _exponent(model, t, z, variant):
    dvec = model.alpha / model.sigma**2
    ito = dvec**2 * (model.sigma**2 if variant == "ito" else 1.0)
    a = model.q.T * t
    a[np.diag_indices_from(a)] += -0.5 * ito * t + dvec * z
    return a


def _expm_apply(a, v):
    with np.errstate(over="ignore", invalid="ignore"):
        out = expm(a) @ v
    if np.all(np.isfinite(out)) and out.max() < 1e250:
        return out
    # shift by the largest diagonal entry: only the direction of the result matters
    b = a.copy()
    b.flat[:: a.shape[0] + 1] -= a.diagonal().max()
    return expm(b) @ v


def quasi_exact(model, p0, t: float, Zt: float, variant="ito") -> np.ndarray:
    """Posterior at ``t`` from the cumulative observation ``Z_t`` alone."""
    _check_variant(variant)
    p0 = validate_distribution(p0, model.d)
    if t == 0 and Zt == 0:
        return p0.copy()
    xi = _expm_apply(_exponent(model, t, Zt, variant), p0)
    xi = np.clip(xi, 0.0, None)
    return xi / xi.sum()


def quasi_exact_filter(obs, model, p0=None, mode="stepwise", variant="ito") -> FilterTrajectory:
    """Quasi-exact filter over a series.

    ``mode="oneshot"`` applies the closed form with the cumulative ``Z_{t_n}``
    at every ``t_n``; ``mode="stepwise"`` composes per-interval factors
    ``exp(Q^T h - sigma^2 D^2 h / 2 + D dZ_n)``.
    """
    _check_variant(variant)
    if mode not in ("stepwise", "oneshot"):
        raise ValueError(f"unknown mode {mode!r}")
    p0 = validate_distribution(model.p0 if p0 is None else p0, model.d)
    incs = np.asarray(obs.increments, dtype=float)
    h = float(obs.h)
    n = incs.size
    mus = np.empty((n + 1, model.d))
    mus[0] = p0
    secs = np.zeros(n)
    xi = p0.copy()
    z = 0.0
    base = _exponent(model, h, 0.0, variant)
    dvec = model.alpha / model.sigma**2
    stride = model.d + 1
    for k, dz in enumerate(incs):
        t0 = time.perf_counter()
        if mode == "stepwise":
            a = base.copy()
            a.flat[::stride] += dvec * dz
            xi = _expm_apply(a, xi)
        else:
            z += dz
            xi = _expm_apply(_exponent(model, h * (k + 1), z, variant), p0)
        xi = np.clip(xi, 0.0, None)
        xi = xi / xi.sum()
        secs[k] = time.perf_counter() - t0
        mus[k + 1] = xi
    return FilterTrajectory(h * np.arange(n + 1), mus, np.ones(n), np.zeros(n, dtype=bool), secs,
                            f"quasi-{mode}")


def milstein_matrix(model, dz, h, variant="ito") -> np.ndarray:
    _check_variant(variant)
    dvec = model.alpha / model.sigma**2
    m = model.q.T * h
    if variant == "ito":
        diag = 1.0 + dvec * dz + 0.5 * dvec**2 * (dz * dz - model.sigma**2 * h)
    else:
        diag = 1.0 - 0.5 * dvec**2 * h + dvec * (1.0 + 0.5 * dvec) * dz
    m[np.diag_indices_from(m)] += diag
    return m


def _milstein_update(xi, dz, h, model, variant):
    new = milstein_matrix(model, dz, h, variant) @ xi
    scale = np.abs(new).sum()
    floor = POS_FLOOR * scale
    if not np.any(new > floor):
        # nothing survives the positivity floor: fall back to pure prediction
        pred = transition_matrix(model.generator, h).T @ (xi / xi.sum())
        return pred, True, True
    clipped = bool(np.any(new < floor))
    return np.maximum(new, floor), clipped, False


def milstein_step(xi, dz, h, model, variant="ito") -> np.ndarray:
    """One Milstein step of the Zakai equation with positivity smoothing.

    Entries are floored at ``1e-12 * ||xi'||_1``.  If no entry survives, the
    normalized previous state is propagated by ``exp(Q h)`` instead.
    """
    xi = np.asarray(xi, dtype=float)
    if h == 0 and dz == 0:
        return xi.copy()
    return _milstein_update(xi, dz, h, model, variant)[0]


def milstein_filter(obs, model, p0=None, variant="ito") -> FilterTrajectory:
    """Milstein recursion, renormalized after every step.

    The recursion is linear in ``xi`` so renormalizing does not change the
    reported posteriors; ``degenerate`` marks steps where smoothing kicked in.
    """
    p0 = validate_distribution(model.p0 if p0 is None else p0, model.d)
    incs = np.asarray(obs.increments, dtype=float)
    h = float(obs.h)
    n = incs.size
    mus = np.empty((n + 1, model.d))
    mus[0] = p0
    secs = np.zeros(n)
    flags = np.zeros(n, dtype=bool)
    norms = np.zeros(n)
    xi = p0.copy()
    for k, dz in enumerate(incs):
        t0 = time.perf_counter()
        xi, clipped, _ = _milstein_update(xi, dz, h, model, variant)
        total = xi.sum()
        xi = xi / total
        secs[k] = time.perf_counter() - t0
        mus[k + 1] = xi
        flags[k] = clipped
        norms[k] = total
    return FilterTrajectory(h * np.arange(n + 1), mus, norms, flags, secs, "milstein")


def prior_trajectory(model, times) -> np.ndarray:
    """Unconditional marginals ``p(t)`` at the given times."""
    return np.array([marginal(model.generator, model.p0, t) for t in times])
