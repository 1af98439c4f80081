"""The hidden Markov model: drifts, generator, initial law and noise scale."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ctmc import GeneratorMatrix, as_generator, validate_distribution
from .errors import DomainError, ShapeError


@dataclass(frozen=True)
class ModelSpec:
    """Observed process ``Z_t = int_0^t alpha[eps_s] ds + sigma W_t``."""

    alpha: np.ndarray
    generator: GeneratorMatrix
    p0: np.ndarray
    sigma: float

    def __post_init__(self):
        gen = as_generator(self.generator)
        alpha = np.array(self.alpha, dtype=float).ravel()
        if alpha.size != gen.d:
            raise ShapeError(f"{alpha.size} drifts for a {gen.d}-state generator")
        if not np.all(np.isfinite(alpha)):
            raise DomainError("drifts must be finite")
        if not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        alpha.setflags(write=False)
        p0 = validate_distribution(self.p0, gen.d)
        p0.setflags(write=False)
        object.__setattr__(self, "generator", gen)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "sigma", float(self.sigma))

    @classmethod
    def from_arrays(cls, alpha, q, p0, sigma) -> "ModelSpec":
        return cls(np.asarray(alpha, dtype=float), as_generator(q), np.asarray(p0, dtype=float), sigma)

    @property
    def d(self) -> int:
        return self.generator.d

    @property
    def q(self) -> np.ndarray:
        return self.generator.q

    @property
    def drift_matrix(self) -> np.ndarray:
        """Diagonal matrix with entries alpha_i / sigma^2."""
        return np.diag(self.alpha / self.sigma**2)

    def permuted(self, perm) -> "ModelSpec":
        """Relabel states so that new state ``k`` is old state ``perm[k]``."""
        perm = np.asarray(perm)
        return ModelSpec.from_arrays(
            self.alpha[perm], self.q[np.ix_(perm, perm)], self.p0[perm], self.sigma
        )

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "Q": self.q.tolist(),
            "p0": self.p0.tolist(),
            "sigma": self.sigma,
        }
