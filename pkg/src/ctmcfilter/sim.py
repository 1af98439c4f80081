"""Ground-truth simulation: chain paths, exact integrals and noisy observations."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .ctmc import CtmcPath, embedded_chain, sample_path
from .errors import InvalidTime, OutOfRange, UnknownPreset
from .model import ModelSpec


def integrate_path(path: CtmcPath, alpha, t):
    """Exact ``J_t = int_0^t alpha[eps_s] ds`` along a sampled path (vectorized in ``t``)."""
    alpha = np.asarray(alpha, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > path.T * (1 + 1e-12)):
        raise OutOfRange(f"t must lie in [0, {path.T}]")
    starts = np.concatenate([[0.0], path.jump_times])
    ends = np.concatenate([path.jump_times, [np.inf]])
    rates = alpha[path.states]
    flat = np.atleast_1d(t_arr).ravel()
    overlap = np.clip(np.minimum(flat[:, None], ends[None, :]) - starts[None, :], 0.0, None)
    out = overlap @ rates
    return float(out[0]) if t_arr.ndim == 0 else out.reshape(t_arr.shape)


def sample_integral_batch(model: ModelSpec, start, h: float, n_paths: int, rng=None):
    """Vectorized exact draws of ``(J_h, eps_h, N_h)`` for chains started at ``start``.

    ``start`` is a state index or an array of per-path start states.
    """
    if not h > 0:
        raise InvalidTime(f"h must be positive, got {h}")
    rng = np.random.default_rng(rng)
    rates, jumps, absorbing = embedded_chain(model.generator)
    cum = np.cumsum(jumps, axis=1)
    state = np.broadcast_to(np.asarray(start, dtype=int), (n_paths,)).copy()
    t = np.zeros(n_paths)
    J = np.zeros(n_paths)
    n_jumps = np.zeros(n_paths, dtype=int)
    active = np.arange(n_paths)
    alpha = model.alpha
    while active.size:
        s = state[active]
        r = rates[s]
        with np.errstate(divide="ignore"):
            hold = np.where(r > 0, rng.exponential(1.0, active.size) / np.where(r > 0, r, 1.0), np.inf)
        t_new = t[active] + hold
        end = np.minimum(t_new, h)
        J[active] += alpha[s] * (end - t[active])
        jumped = t_new < h
        idx = active[jumped]
        u = rng.random(idx.size)
        nxt = (u[:, None] > cum[state[idx]]).sum(axis=1)
        state[idx] = np.minimum(nxt, model.d - 1)
        t[idx] = t_new[jumped]
        n_jumps[idx] += 1
        active = idx
    return J, state, n_jumps


@dataclass
class ObservationSeries:
    """Increments ``dZ_k = Z_{t_k} - Z_{t_{k-1}}`` on the grid ``t_k = k h``.

    ``true_states`` and ``true_J`` (length ``n + 1``, row 0 at ``t = 0``) are
    optional ground truth; an unknown initial state is stored as ``-1``.
    """

    h: float
    increments: np.ndarray
    true_states: np.ndarray | None = None
    true_J: np.ndarray | None = None
    seed: int | None = None
    path: CtmcPath | None = None

    def __post_init__(self):
        self.increments = np.asarray(self.increments, dtype=float)

    @property
    def n(self) -> int:
        return self.increments.size

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(self.n + 1)

    @property
    def cumulative(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.increments)])

    def strided(self, k: int) -> "ObservationSeries":
        """Keep every ``k``-th observation: ``n // k`` increments of length ``k h``."""
        if k < 1:
            raise ValueError("stride must be >= 1")
        if k == 1:
            return self
        m = self.n // k
        inc = self.increments[: m * k].reshape(m, k).sum(axis=1)
        pick = lambda a: None if a is None else np.asarray(a)[: m * k + 1 : k]
        return replace(self, h=self.h * k, increments=inc,
                       true_states=pick(self.true_states), true_J=pick(self.true_J))


@dataclass(frozen=True)
class Scenario:
    model: ModelSpec
    T: float
    n_obs: int
    seed: int = 0
    stride: int = 1

    def __post_init__(self):
        if self.n_obs < 1 or not self.T > 0:
            raise ValueError("need T > 0 and at least one observation")

    @property
    def h(self) -> float:
        return self.T / self.n_obs


def simulate_observations(scenario: Scenario) -> ObservationSeries:
    """Exact path, exact integral at the observation times, plus N(0, sigma^2 h) noise."""
    model = scenario.model
    rng = np.random.default_rng(scenario.seed)
    path = sample_path(model.generator, model.p0, scenario.T, rng)
    h = scenario.h
    times = h * np.arange(scenario.n_obs + 1)
    times[-1] = min(times[-1], scenario.T)
    J = integrate_path(path, model.alpha, times)
    noise = rng.normal(0.0, model.sigma * math.sqrt(h), scenario.n_obs)
    inc = np.diff(J) + noise
    return ObservationSeries(h, inc, path.state_at(times), J, scenario.seed, path)


TWO_STATE = dict(alpha=[-3.0, 1.0], Q=[[-2.0, 2.0], [3.0, -3.0]], p0=[0.1, 0.9], sigma=1.0)
FIVE_STATE = dict(
    alpha=[-3.0, -1.0, 0.0, 1.0, 2.0],
    Q=[
        [-1.0, 0.5, 0.3, 0.1, 0.1],
        [0.4, -1.0, 0.3, 0.1, 0.2],
        [0.1, 0.1, -1.0, 0.4, 0.4],
        [0.1, 0.1, 0.3, -1.0, 0.5],
        [0.1, 0.1, 0.3, 0.5, -1.0],
    ],
    p0=[0.1, 0.3, 0.3, 0.2, 0.1],
    sigma=1.0,
)


def preset(name: str, sigma: float | None = None, seed: int = 42) -> Scenario:
    """Built-in scenarios.

    ``two-state``: 100 observations with h = 0.2 (T = 20).
    ``five-state``: T = 5 with 50 observations (h = 0.1); ``sigma`` is 1 or 2.
    """
    if name == "two-state":
        cfg, T, n = TWO_STATE, 20.0, 100
    elif name == "five-state":
        cfg, T, n = FIVE_STATE, 5.0, 50
    else:
        raise UnknownPreset(name)
    model = ModelSpec.from_arrays(cfg["alpha"], cfg["Q"], cfg["p0"], cfg["sigma"] if sigma is None else sigma)
    return Scenario(model, T, n, seed)


def write_observations_csv(path, obs: ObservationSeries, truth=False):
    header = ["k", "t", "dZ", "Z"]
    if truth:
        header += ["true_state", "true_J"]
    z = obs.cumulative
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(1, obs.n + 1):
            row = [str(k), repr(float(k * obs.h)), repr(float(obs.increments[k - 1])), repr(float(z[k]))]
            if truth:
                row += [str(int(obs.true_states[k]) + 1), repr(float(obs.true_J[k]))]
            w.writerow(row)


def read_observations_csv(path) -> ObservationSeries:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no observations")
    t = np.array([float(r["t"]) for r in rows])
    k = np.array([int(r["k"]) for r in rows])
    h = float(t[0] / k[0])
    inc = np.array([float(r["dZ"]) for r in rows])
    states = J = None
    if "true_state" in rows[0]:
        states = np.concatenate([[-1], [int(r["true_state"]) - 1 for r in rows]])
        J = np.concatenate([[0.0], [float(r["true_J"]) for r in rows]])
    return ObservationSeries(h, inc, states, J)
