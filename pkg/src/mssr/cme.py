"""Master-equation solver for low-copy (scale-free) networks on a finite state projection."""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve
from scipy.stats import binom, poisson

from .distribution import DistributionVector
from .network import ReactionNetwork, conservation_laws

__all__ = [
    "StateEnumeration",
    "GeneratorMatrix",
    "TruncationError",
    "ReducibleChainError",
    "StateCapError",
    "default_box",
    "positive_conservation_law",
    "reaction_rates",
    "enumerate_states",
    "build_generator",
    "transient_solve",
    "stationary_solve",
    "birth_death_reference",
]


class TruncationError(RuntimeError):
    """Probability leaked past the truncation exceeds the allowed tolerance."""


class ReducibleChainError(RuntimeError):
    """The truncated chain has more than one closed communicating class."""


class StateCapError(RuntimeError):
    """Enumeration would exceed the configured number of states."""


def _as_network(obj) -> ReactionNetwork:
    if hasattr(obj, "to_network"):
        obj = obj.to_network()
    if any(s.alpha != 0 for s in obj.species):
        raise ValueError("the CME solver works on scale-free networks (all alpha = 0); project first")
    return obj


def default_box(net) -> int:
    net = _as_network(net)
    z0 = [int(s.z0) for s in net.species]
    return max(40, 4 * max(z0, default=0))


def reaction_rates(net: ReactionNetwork, states: np.ndarray) -> np.ndarray:
    """Intensities lambda_k(x) for each row of ``states``; shape (n_states, n_reactions)."""
    states = np.asarray(states)
    col = {n: i for i, n in enumerate(net.names)}
    out = np.empty((len(states), len(net.reactions)))
    for j, r in enumerate(net.reactions):
        v = np.full(len(states), float(r.kappa))
        for f in r.factors:
            v = v * f(*(states[:, col[s]] for s in f.species))
        out[:, j] = v
    return out


def positive_conservation_law(net: ReactionNetwork) -> np.ndarray | None:
    """A conservation vector with all entries >= 1, if one exists (then every orbit is finite)."""
    laws = conservation_laws(net)
    if not laws:
        return None
    L = np.array(laws, dtype=float)
    res = linprog(np.zeros(len(L)), A_ub=-L.T, b_ub=-np.ones(L.shape[1]),
                  bounds=[(None, None)] * len(L), method="highs")
    return L.T @ res.x if res.status == 0 else None


@dataclass(frozen=True, eq=False)
class StateEnumeration:
    species: tuple[str, ...]
    states: np.ndarray
    truncation: dict

    def __post_init__(self):
        object.__setattr__(self, "_index", {tuple(s): i for i, s in enumerate(self.states.tolist())})

    def __len__(self) -> int:
        return len(self.states)

    def index(self, state: Sequence[int]) -> int:
        return self._index[tuple(int(v) for v in state)]

    def __contains__(self, state) -> bool:
        return tuple(int(v) for v in state) in self._index

    def lookup(self, targets: np.ndarray) -> np.ndarray:
        """Row index of each target state, -1 when not enumerated."""
        idx = self._index
        return np.fromiter((idx.get(t, -1) for t in map(tuple, targets.tolist())),
                           dtype=np.int64, count=len(targets))


def enumerate_states(net, z0: Sequence[int] | None = None, truncation: str = "auto",
                     box: int | None = None, cap: int = 10**7) -> StateEnumeration:
    """States reachable from z0 (through positive-rate transitions) inside the truncation.

    ``truncation="auto"`` uses the exact conserved slice when a strictly
    positive conservation law exists, else the box ||z||_inf <= M. An explicit
    ``box`` always means box truncation.
    """
    net = _as_network(net)
    z0 = np.array([int(s.z0) for s in net.species] if z0 is None else z0, dtype=np.int64)
    if truncation not in ("auto", "box", "slice"):
        raise ValueError(f"unknown truncation {truncation!r}")
    law = None
    if box is None and truncation in ("auto", "slice"):
        law = positive_conservation_law(net)
        if law is None and truncation == "slice":
            raise ValueError("no strictly positive conservation law: the reachable set is not a finite slice")
    if law is not None:
        M, info = None, {"kind": "slice", "law": [float(v) for v in law], "value": float(law @ z0)}
    else:
        M = default_box(net) if box is None else int(box)
        if z0.max(initial=0) > M:
            raise ValueError(f"initial state {tuple(z0)} lies outside the box M={M}")
        info = {"kind": "box", "M": M}
    delta = net.stoichiometry().T.astype(np.int64)
    seen = {tuple(z0.tolist()): 0}
    order = [z0]
    queue = deque([0])
    while queue:
        batch = [queue.popleft() for _ in range(min(len(queue), 4096))]
        F = np.array([order[i] for i in batch])
        rates = reaction_rates(net, F)
        for r in range(len(delta)):
            targets = F[rates[:, r] > 0] + delta[r]
            if M is not None:
                targets = targets[targets.max(axis=1, initial=0) <= M]
            for t in map(tuple, targets.tolist()):
                if t not in seen:
                    seen[t] = len(order)
                    order.append(np.array(t, dtype=np.int64))
                    queue.append(seen[t])
                    if len(order) > cap:
                        raise StateCapError(f"more than {cap} states; tighten the truncation")
    states = np.array(order, dtype=np.int64).reshape(len(order), len(net.species))
    return StateEnumeration(net.names, states, info)


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    """dp/dt = Q p with columns indexed by source state; ``outflow`` is the rate of leaving the truncation."""

    Q: sp.csc_matrix
    outflow: np.ndarray
    enumeration: StateEnumeration
    meta: dict = field(default_factory=dict)

    @property
    def exit_rates(self) -> np.ndarray:
        return -self.Q.diagonal()


def build_generator(net, enum: StateEnumeration) -> GeneratorMatrix:
    net = _as_network(net)
    states = enum.states
    n = len(states)
    rates = reaction_rates(net, states)
    delta = net.stoichiometry().T.astype(np.int64)
    rows, cols, vals = [], [], []
    outflow = np.zeros(n)
    src = np.arange(n)
    for r in range(len(delta)):
        live = rates[:, r] > 0
        tgt = enum.lookup(states[live] + delta[r])
        inside = tgt >= 0
        rows.append(tgt[inside])
        cols.append(src[live][inside])
        vals.append(rates[live, r][inside])
        np.add.at(outflow, src[live][~inside], rates[live, r][~inside])
    total = rates.sum(axis=1)
    rows.append(src)
    cols.append(src)
    vals.append(-total)
    Q = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    Q.sum_duplicates()
    Q.eliminate_zeros()
    return GeneratorMatrix(Q, outflow, enum)


def _initial_vector(gen: GeneratorMatrix, p0) -> tuple[np.ndarray, float]:
    enum = gen.enumeration
    n = len(enum)
    if isinstance(p0, DistributionVector):
        cols = [p0.species.index(s) for s in enum.species]
        v = np.zeros(n)
        for state, p in zip(p0.states[:, cols], p0.probs):
            if tuple(state) not in enum:
                raise ValueError(f"initial mass on {tuple(state)} lies outside the enumeration")
            v[enum.index(state)] += p
        return v, p0.leaked
    if isinstance(p0, Mapping):
        v = np.zeros(n)
        for state, p in p0.items():
            v[enum.index(state)] += p
        return v, 0.0
    arr = np.asarray(p0)
    if arr.shape == (n,) and arr.dtype.kind == "f":
        return arr.astype(float).copy(), 0.0
    v = np.zeros(n)
    v[enum.index(arr)] = 1.0
    return v, 0.0


def _distribution(gen: GeneratorMatrix, p: np.ndarray, leaked: float, meta: dict) -> DistributionVector:
    enum = gen.enumeration
    return DistributionVector(enum.species, enum.states, p, max(leaked, 0.0), meta)


def transient_solve(gen: GeneratorMatrix, p0, t: float, tol: float = 1e-12,
                    max_leak: float | None = None) -> DistributionVector:
    """p(t) = exp(Qt) p0 by uniformization; mass that left the truncation is reported as ``leaked``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    v, leaked0 = _initial_vector(gen, p0)
    mass0 = v.sum()
    rate = float(gen.exit_rates.max(initial=0.0))
    meta = {"truncation": gen.enumeration.truncation, "t": float(t)}
    if t == 0 or rate == 0:
        meta.update(leaked_mass=leaked0, terms=0, uniformization_rate=rate)
        return _distribution(gen, v, leaked0, meta)
    lam = rate * t
    lo = int(poisson.ppf(tol / 2, lam))
    hi = int(poisson.isf(tol / 2, lam)) + 1
    weights = poisson.pmf(np.arange(lo, hi + 1), lam)
    weights /= weights.sum()
    Q = gen.Q
    acc = np.zeros_like(v)
    for n in range(hi + 1):
        if n >= lo:
            acc += weights[n - lo] * v
        v = v + (Q @ v) / rate
    acc = np.clip(acc, 0.0, None)
    leaked = leaked0 + max(mass0 - acc.sum(), 0.0)
    meta.update(leaked_mass=leaked, terms=hi + 1, uniformization_rate=rate, error_budget=tol)
    if max_leak is not None and leaked > max_leak:
        raise TruncationError(f"leaked mass {leaked:.3g} exceeds {max_leak:.3g}; enlarge the truncation")
    return _distribution(gen, acc, leaked, meta)


def _closed_classes(A: sp.csc_matrix) -> tuple[np.ndarray, list[int]]:
    off = A.tocoo()
    keep = (off.row != off.col) & (off.data > 0)
    src, dst = off.col[keep], off.row[keep]
    n = A.shape[0]
    adj = sp.csr_matrix((np.ones(len(src)), (src, dst)), shape=(n, n))
    ncomp, labels = connected_components(adj, directed=True, connection="strong")
    leaks = np.zeros(ncomp, dtype=bool)
    leaks[labels[src][labels[src] != labels[dst]]] = True
    return labels, [c for c in range(ncomp) if not leaks[c]]


def stationary_solve(gen: GeneratorMatrix, tol: float = 1e-10) -> DistributionVector:
    """Solve pi Q = 0 (here Q pi = 0), sum pi = 1, with the truncation boundary made reflecting."""
    n = len(gen.enumeration)
    A = (gen.Q + sp.diags(gen.outflow)).tocsc()
    labels, closed = _closed_classes(A)
    if len(closed) != 1:
        raise ReducibleChainError(f"{len(closed)} closed classes on the truncation; stationary law is not unique")
    idx = np.flatnonzero(labels == closed[0])
    pi = np.zeros(n)
    if len(idx) == 1:
        pi[idx] = 1.0
    else:
        B = A[idx][:, idx].tolil()
        B[len(idx) - 1, :] = np.ones(len(idx))
        B = B.tocsc()
        rhs = np.zeros(len(idx))
        rhs[-1] = 1.0
        x = spsolve(B, rhs)
        for _ in range(3):
            r = rhs - B @ x
            if np.abs(r).max() <= tol * 1e-3:
                break
            x = x + spsolve(B, r)
        x = np.clip(x, 0.0, None)
        pi[idx] = x / x.sum()
    residual = float(np.abs(A @ pi).max())
    if residual > tol:
        warnings.warn(f"stationary residual {residual:.3g} above {tol:.1g}", stacklevel=2)
    meta = {"residual": residual, "closed_class_size": int(len(idx)), "n_states": n,
            "truncation": gen.enumeration.truncation,
            "boundary_outflow": float(gen.outflow @ pi)}
    return _distribution(gen, pi, 0.0, meta)


def birth_death_reference(birth: float, death: float, n0: int, t: float,
                          species: str = "X", tail: float = 1e-16) -> DistributionVector:
    """Immigration-death law at time t: Poisson(b/d (1 - e^-dt)) convolved with Binomial(n0, e^-dt)."""
    if birth < 0 or death <= 0 or n0 < 0 or t < 0:
        raise ValueError("need birth >= 0, death > 0, n0 >= 0, t >= 0")
    survive = float(np.exp(-death * t)) if np.isfinite(t) else 0.0
    lam = birth / death * (1.0 - survive)
    k = int(poisson.isf(tail, lam)) + 1 if lam > 0 else 0
    pois = poisson.pmf(np.arange(k + 1), lam) if lam > 0 else np.ones(1)
    surv = binom.pmf(np.arange(n0 + 1), n0, survive)
    pmf = np.convolve(pois, surv)
    return DistributionVector((species,), np.arange(len(pmf)).reshape(-1, 1), pmf,
                              max(1.0 - pmf.sum(), 0.0))
