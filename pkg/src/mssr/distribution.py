"""Probability mass functions over finite sets of integer states."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

__all__ = ["DistributionVector"]


@dataclass(frozen=True, eq=False)
class DistributionVector:
    """pmf over ``states`` (one row per state, one column per species).

    ``leaked`` is mass known to lie outside the listed states (truncation
    loss); ``meta`` carries solver certificates and is not part of equality.
    """

    species: tuple[str, ...]
    states: np.ndarray
    probs: np.ndarray
    leaked: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.int64)
        if states.ndim == 1:
            states = states.reshape(-1, len(self.species))
        probs = np.asarray(self.probs, dtype=float)
        if states.shape != (len(probs), len(self.species)):
            raise ValueError("states and probs do not line up")
        if np.any(probs < -1e-14):
            raise ValueError("negative probability mass")
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "probs", np.clip(probs, 0.0, None))

    @classmethod
    def point_mass(cls, species: Sequence[str], state: Sequence[int]) -> "DistributionVector":
        return cls(tuple(species), np.array([state]), np.array([1.0]))

    @classmethod
    def from_dict(cls, species: Sequence[str], pmf: Mapping, leaked: float = 0.0) -> "DistributionVector":
        keys = sorted(pmf)
        states = np.array([k if isinstance(k, tuple) else (k,) for k in keys], dtype=np.int64)
        return cls(tuple(species), states.reshape(len(keys), len(species)),
                   np.array([pmf[k] for k in keys], dtype=float), leaked)

    @property
    def mass(self) -> float:
        return float(self.probs.sum())

    def as_dict(self) -> dict[tuple[int, ...], float]:
        out: dict[tuple[int, ...], float] = {}
        for s, p in zip(map(tuple, self.states.tolist()), self.probs):
            out[s] = out.get(s, 0.0) + float(p)
        return out

    def marginal(self, names: str | Sequence[str]) -> "DistributionVector":
        if isinstance(names, str):
            names = (names,)
        try:
            cols = [self.species.index(n) for n in names]
        except ValueError as exc:
            raise KeyError(f"unknown species in {names}") from exc
        sub = self.states[:, cols]
        if len(sub) == 0:
            return DistributionVector(tuple(names), sub, self.probs, self.leaked, dict(self.meta))
        uniq, inv = np.unique(sub, axis=0, return_inverse=True)
        probs = np.bincount(inv.ravel(), weights=self.probs, minlength=len(uniq))
        return DistributionVector(tuple(names), uniq, probs, self.leaked, dict(self.meta))

    def mean(self, name: str | None = None):
        """Mean of one species, or the mean vector, normalised by the listed mass."""
        m = self.probs @ self.states / self.mass
        return float(m[self.species.index(name)]) if name is not None else m

    def normalized(self) -> "DistributionVector":
        return DistributionVector(self.species, self.states, self.probs / self.mass, 0.0, dict(self.meta))

    def __repr__(self) -> str:
        return (f"DistributionVector(species={self.species}, n_states={len(self.probs)}, "
                f"mass={self.mass:.12g}, leaked={self.leaked:.3g})")
