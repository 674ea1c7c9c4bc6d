"""Bind a network to a scaling parameter N: intensity orders, theta0, R0, scaled intensities."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Callable

import numpy as np

from .network import Factor, NetworkError, ReactionNetwork

__all__ = [
    "ScaledSystem",
    "ScaledState",
    "ConditionError",
    "ConditionReport",
    "scale_network",
    "factor_order",
    "intensity_order",
    "classify_reactions",
    "scaled_intensity",
    "scaled_intensities",
    "decompose_intensity",
    "split_factors",
    "high_part_limit",
    "validate_conditions",
    "in_compact_set",
    "sample_compact_states",
]


class ConditionError(NetworkError):
    """A reaction violates one of the decomposition/growth/limit conditions (CD1-CD3)."""


def _npow(N: float, e: Fraction) -> float:
    return float(N) ** float(e)


def _side(net: ReactionNetwork, f: Factor) -> str:
    sides = {net.species_by_name(s).is_low for s in f.species}
    if len(sides) > 1:
        return "mixed"
    return "low" if sides.pop() else "high"


def factor_order(net: ReactionNetwork, f: Factor) -> Fraction | None:
    """N-order of a factor at the initial state; ``None`` means degenerate (order -inf).

    Low-side factors and hill/log1p factors have order 0; ff/pow contribute
    degree*alpha and sqrt alpha/2. A high-side factor whose species start at
    z0 = 0 is degenerate.
    """
    side = _side(net, f)
    if side == "low":
        return Fraction(0)
    sp = [net.species_by_name(s) for s in f.species]
    if side == "high" and any(s.z0 == 0 for s in sp):
        return None
    if side == "mixed":
        return Fraction(0) if f.kind == "log1p" else None
    alpha = sp[0].alpha
    if f.kind in ("ff", "pow"):
        return f.degree * alpha
    if f.kind == "sqrt":
        return alpha / 2
    return Fraction(0)


def _reaction_order(net: ReactionNetwork, k: str) -> Fraction | None:
    r = net.reaction(k)
    total = r.beta
    for f in r.factors:
        o = factor_order(net, f)
        if o is None:
            return None
        total += o
    return total


@dataclass(frozen=True)
class ScaledSystem:
    """A network at a concrete N with timescale exponent gamma (default -theta0)."""

    network: ReactionNetwork
    N: int
    gamma: Fraction
    theta0: Fraction
    orders: dict = field(compare=False)
    dominant: frozenset = field(compare=False)

    @property
    def reaction_ids(self) -> tuple[str, ...]:
        return self.network.reaction_ids

    @property
    def n_low(self) -> int:
        return len(self.network.low)

    @cached_property
    def limits(self) -> dict[str, Fraction]:
        """s_k for every reaction (requires CD3 for every reaction)."""
        return {k: high_part_limit(self, k) for k in self.reaction_ids}

    def initial_state(self) -> "ScaledState":
        net = self.network
        low = tuple(int(net.species_by_name(n).z0) for n in net.low)
        high = tuple(float(net.species_by_name(n).z0) for n in net.high)
        return ScaledState(low, high)


@dataclass(frozen=True)
class ScaledState:
    """Low counts (integers) and high scaled values (counts / N^alpha)."""

    low: tuple[int, ...]
    high: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "low", tuple(int(v) for v in self.low))
        object.__setattr__(self, "high", tuple(float(v) for v in self.high))
        if any(v < 0 for v in self.low) or any(v < 0 for v in self.high):
            raise ValueError("scaled state entries must be nonnegative")

    def flat(self) -> tuple[float, ...]:
        return tuple(float(v) for v in self.low) + self.high


def scale_network(net: ReactionNetwork, N: int, gamma: Fraction | None = None) -> ScaledSystem:
    if N < 1 or int(N) != N:
        raise ValueError("N must be a positive integer")
    if not net.reactions:
        raise NetworkError("network has no reactions")
    orders = {r.id: _reaction_order(net, r.id) for r in net.reactions}
    finite = [o for o in orders.values() if o is not None]
    if not finite:
        raise NetworkError("every reaction is degenerate at the initial state")
    theta0 = max(finite)
    dominant = frozenset(k for k, o in orders.items() if o == theta0)
    gamma = -theta0 if gamma is None else Fraction(gamma)
    return ScaledSystem(net, int(N), gamma, theta0, orders, dominant)


def intensity_order(sys: ScaledSystem, k: str) -> Fraction | None:
    sys.network.reaction(k)
    return sys.orders[k]


def classify_reactions(sys: ScaledSystem) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """(R0, R0 complement) in declaration order."""
    ids = sys.reaction_ids
    return (tuple(k for k in ids if k in sys.dominant), tuple(k for k in ids if k not in sys.dominant))


def _values(sys: ScaledSystem, z) -> dict[str, float]:
    net = sys.network
    if isinstance(z, ScaledState):
        flat = z.flat()
    else:
        flat = tuple(z)
    if len(flat) != len(net.species):
        raise ValueError("state does not match the network's species")
    return dict(zip(net.names, flat))


def scaled_intensity(sys: ScaledSystem, k: str, z) -> float:
    """lambda^{N,gamma}_k(z) = N^{gamma+beta_k} * lambda_k(x) with x_i = N^{alpha_i} z_i."""
    net, N = sys.network, sys.N
    r = net.reaction(k)
    vals = _values(sys, z)
    value = float(r.kappa) * _npow(N, sys.gamma + r.beta)
    for f in r.factors:
        raw = [_npow(N, net.species_by_name(s).alpha) * vals[s] for s in f.species]
        value *= float(f(*raw))
    return value


def scaled_intensities(sys: ScaledSystem, low: np.ndarray, high: np.ndarray) -> np.ndarray:
    """Vectorised scaled intensities: rows of (low, high) states, one column per reaction."""
    net, N = sys.network, sys.N
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    raw = {n: low[:, i] for i, n in enumerate(net.low)}
    raw.update({n: _npow(N, net.species_by_name(n).alpha) * high[:, i] for i, n in enumerate(net.high)})
    out = np.empty((len(low), len(net.reactions)))
    for j, r in enumerate(net.reactions):
        v = np.full(len(low), float(r.kappa) * _npow(N, sys.gamma + r.beta))
        for f in r.factors:
            v = v * f(*(raw[s] for s in f.species))
        out[:, j] = v
    return out


def split_factors(sys: ScaledSystem, k: str) -> tuple[list[Factor], list[Factor]]:
    net = sys.network
    low, high = [], []
    for f in net.reaction(k).factors:
        side = _side(net, f)
        if side == "mixed":
            raise ConditionError(f"reaction {k}: factor {f.spec()} couples low and high species")
        (low if side == "low" else high).append(f)
    return low, high


def decompose_intensity(sys: ScaledSystem, k: str) -> tuple[Callable, Callable]:
    """(lambda_L, lambda_H) with kappa * lambda_L(z_low) * lambda_H(z_high) = scaled intensity.

    Both callables take values in ``network.low`` / ``network.high`` order and
    accept numpy arrays (one column per species) for vectorised evaluation.
    """
    net, N = sys.network, sys.N
    low_f, high_f = split_factors(sys, k)
    r = net.reaction(k)
    low_pos = {n: i for i, n in enumerate(net.low)}
    high_pos = {n: i for i, n in enumerate(net.high)}
    prefactor = _npow(N, sys.gamma + r.beta)
    alphas = {n: _npow(N, net.species_by_name(n).alpha) for n in net.high}

    def lam_low(z_low):
        z = np.asarray(z_low, dtype=float)
        out = np.ones(z.shape[:-1]) if z.ndim > 1 else 1.0
        for f in low_f:
            out = out * f(*(z[..., low_pos[s]] for s in f.species))
        return out

    def lam_high(z_high):
        z = np.asarray(z_high, dtype=float)
        out = np.full(z.shape[:-1], prefactor) if z.ndim > 1 else prefactor
        for f in high_f:
            out = out * f(*(alphas[s] * z[..., high_pos[s]] for s in f.species))
        return out

    return lam_low, lam_high


def _factor_limit(net: ReactionNetwork, f: Factor) -> Fraction | None:
    """lim N^{-order} f(N^alpha z0) for a high-side factor; None if it diverges."""
    sp = [net.species_by_name(s) for s in f.species]
    z0 = sp[0].z0
    if f.kind in ("ff", "pow"):
        return z0 ** f.degree
    if f.kind == "hill":
        return Fraction(1) if z0 > 0 else Fraction(0)
    if f.kind == "sqrt":
        num, den = z0.numerator, z0.denominator
        rn, rd = math.isqrt(num), math.isqrt(den)
        if rn * rn == num and rd * rd == den:
            return Fraction(rn, rd)
        return Fraction(repr(math.sqrt(float(z0))))
    return None


def high_part_limit(sys: ScaledSystem, k: str) -> Fraction:
    """s_k = lim_N lambda^{N,gamma}_{H,k}(z0_high) under the catalog limit rules."""
    net = sys.network
    _, high_f = split_factors(sys, k)
    order = sys.orders[k]
    if order is None:
        return Fraction(0)
    exponent = sys.gamma + order
    if exponent < 0:
        return Fraction(0)
    value = Fraction(1)
    for f in high_f:
        lim = _factor_limit(net, f)
        if lim is None:
            raise ConditionError(f"reaction {k}: high-side factor {f.spec()} has no finite limit")
        value *= lim
    if exponent > 0 and value != 0:
        raise ConditionError(f"reaction {k}: high part grows like N^{exponent}")
    return value


@dataclass
class ConditionStatus:
    reaction: str
    cd1: bool = True
    cd2: bool = True
    cd3: bool = True
    reasons: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.cd1 and self.cd2 and self.cd3


@dataclass
class ConditionReport:
    statuses: list[ConditionStatus]

    @property
    def ok(self) -> bool:
        return all(s.ok for s in self.statuses)

    @property
    def failures(self) -> list[ConditionStatus]:
        return [s for s in self.statuses if not s.ok]

    def __getitem__(self, k: str) -> ConditionStatus:
        for s in self.statuses:
            if s.reaction == k:
                return s
        raise KeyError(k)

    def to_dict(self) -> dict:
        return {
            s.reaction: {"CD1": s.cd1, "CD2": s.cd2, "CD3": s.cd3, "reasons": s.reasons, "notes": s.notes}
            for s in self.statuses
        }


# every catalog kind is bounded by a polynomial in the count
_POLYNOMIAL_GROWTH = {"ff", "pow", "hill", "sqrt", "log1p"}


def validate_conditions(sys: ScaledSystem) -> ConditionReport:
    net = sys.network
    statuses = []
    for r in net.reactions:
        st = ConditionStatus(r.id)
        try:
            low_f, high_f = split_factors(sys, r.id)
        except ConditionError as exc:
            st.cd1 = False
            st.cd3 = False
            st.reasons.append(f"CD1: {exc}")
            statuses.append(st)
            continue
        for f in low_f:
            if f.kind not in _POLYNOMIAL_GROWTH:
                st.cd2 = False
                st.reasons.append(f"CD2: {f.spec()} is not polynomially bounded")
        try:
            high_part_limit(sys, r.id)
        except ConditionError as exc:
            st.cd3 = False
            st.reasons.append(f"CD3: {exc}")
        if sys.orders[r.id] is None:
            st.notes.append("degenerate initial state: a high-side factor starts at z0 = 0, order taken as -inf")
        if any(f.kind in ("hill", "sqrt", "log1p") for f in high_f):
            st.notes.append("order uses the catalog convention for non-mass-action high-side factors")
        statuses.append(st)
    return ConditionReport(statuses)


def in_compact_set(sys: ScaledSystem, z: ScaledState, M: float, limits: dict | None = None) -> bool:
    """True iff ||z_low||_inf <= M and |lambda_{H,k}(z_high) - s_k| <= M/N for all k in R0."""
    if max(z.low, default=0) > M:
        return False
    limits = sys.limits if limits is None else limits
    bound = M / sys.N
    for k in sys.dominant:
        _, lam_high = decompose_intensity(sys, k)
        if abs(float(lam_high(z.high)) - float(limits[k])) > bound:
            return False
    return True


def compact_set_mask(sys: ScaledSystem, low: np.ndarray, high: np.ndarray, M: float) -> np.ndarray:
    """Vectorised in_compact_set over rows of ``low`` (n, d) and ``high`` (n, r)."""
    low = np.asarray(low)
    high = np.asarray(high, dtype=float)
    mask = low.max(axis=1, initial=0) <= M if low.shape[1] else np.ones(len(low), dtype=bool)
    bound = M / sys.N
    for k in sys.dominant:
        _, lam_high = decompose_intensity(sys, k)
        vals = lam_high(high) if high.shape[1] else np.full(len(high), float(lam_high(np.zeros(0))))
        mask &= np.abs(vals - float(sys.limits[k])) <= bound
    return mask


def sample_compact_states(sys: ScaledSystem, M: float, n: int, rng: np.random.Generator,
                          max_rounds: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Random states of S_M on the simulator lattice (high values in steps of N^-alpha).

    Low counts are uniform on {0..floor(M)}^d; high values are the initial
    values plus a uniform lattice offset, with the offset width halved until
    enough draws land inside S_M.
    """
    net, N = sys.network, sys.N
    d, r = len(net.low), len(net.high)
    steps = np.array([_npow(N, net.species_by_name(s).alpha) for s in net.high])
    z0 = np.array([float(net.species_by_name(s).z0) for s in net.high])
    width = M / N
    lows, highs, got = [], [], 0
    for _ in range(max_rounds):
        low = rng.integers(0, int(math.floor(M)) + 1, size=(n, d))
        if r:
            half = np.maximum(np.floor(width * steps), 0)
            offs = rng.integers(-half, half + 1, size=(n, r)) / steps
            high = np.maximum(z0 + offs, 0.0)
        else:
            high = np.zeros((n, 0))
        ok = compact_set_mask(sys, low, high, M)
        lows.append(low[ok])
        highs.append(high[ok])
        got += int(ok.sum())
        if got >= n:
            break
        if ok.mean() < 0.25:
            width /= 2
    if got < n:
        raise RuntimeError("could not sample enough states inside S_M")
    return np.concatenate(lows)[:n], np.concatenate(highs)[:n]
