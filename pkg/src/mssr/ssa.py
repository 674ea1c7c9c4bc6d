"""Gillespie direct-method simulation of original, reduced and coupled systems.

Trajectory i of an ensemble draws from its own Philox stream keyed by
(base_seed, i), so every path is reproducible on its own and ensembles do not
depend on execution order.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numba
import numpy as np
from scipy.stats import binomtest

from .distribution import DistributionVector
from .network import ReactionNetwork
from .projection import ProjectedSystem, build_projected_system, project_complex
from .scaling import ScaledSystem, high_part_limit

__all__ = [
    "SimulationConfig",
    "TrajectoryEnsemble",
    "ExitEstimate",
    "trajectory_rng",
    "simulate_network",
    "simulate_original",
    "simulate_reduced",
    "simulate_coupled",
    "empirical_distribution",
    "jump_moment_estimate",
    "exit_probability_estimate",
]

_KIND = {"ff": 0, "pow": 1, "hill": 2, "sqrt": 3, "log1p": 4}


def trajectory_rng(base_seed: int, i: int) -> np.random.Generator:
    if not 0 <= base_seed < 2**64:
        raise ValueError("base_seed must be a 64-bit unsigned integer")
    return np.random.Generator(np.random.Philox(key=(int(base_seed) << 64) | int(i)))


# --- kernels ---------------------------------------------------------------------------

@numba.njit(nogil=True, cache=True)
def _factor(j, x, kind, deg, c, sp_ptr, sp):
    v = float(x[sp[sp_ptr[j]]])
    k = kind[j]
    if k == 0:
        r = 1.0
        for i in range(deg[j]):
            d = v - i
            if d <= 0.0:
                return 0.0
            r *= d
        return r
    if k == 1:
        return v ** deg[j]
    if k == 2:
        return v / (v + c[j])
    if k == 3:
        return math.sqrt(v)
    p = 1.0
    for i in range(sp_ptr[j], sp_ptr[j + 1]):
        p *= float(x[sp[i]])
    return math.log1p(p)


@numba.njit(nogil=True, cache=True)
def _rate(r, x, pref, fac_ptr, kind, deg, c, sp_ptr, sp, high, which):
    """which: 0 = every factor, 1 = low-side factors only, 2 = high-side factors only."""
    v = pref[r]
    if v == 0.0:
        return 0.0
    for j in range(fac_ptr[r], fac_ptr[r + 1]):
        if which == 1 and high[j]:
            continue
        if which == 2 and not high[j]:
            continue
        v *= _factor(j, x, kind, deg, c, sp_ptr, sp)
        if v == 0.0:
            return 0.0
    return v


@numba.njit(nogil=True, cache=True)
def _outside(x, n_low, M, bound, hpref, slim, in_r0, fac_ptr, kind, deg, c, sp_ptr, sp, high):
    for i in range(n_low):
        if x[i] > M:
            return True
    for r in range(len(in_r0)):
        if in_r0[r]:
            lam = _rate(r, x, hpref, fac_ptr, kind, deg, c, sp_ptr, sp, high, 2)
            if abs(lam - slim[r]) > bound:
                return True
    return False


# The propensity loop is written out inside each kernel: a numba call that takes
# array arguments costs more than evaluating every propensity of a small network.

@numba.njit(nogil=True, cache=True)
def _ssa(x0, delta, pref, fac_ptr, kind, deg, c, sp_ptr, sp, high, times, obs, max_jumps, rng,
         monitor, n_low, M, bound, hpref, slim, in_r0, rec, rec_jumps):
    """One trajectory. Returns (capped, exit_time); exit_time is inf when S_M was never left."""
    x = x0.copy()
    R = len(pref)
    a = np.empty(R)
    T = times[-1]
    t = 0.0
    g = 0
    jumps = 0
    exit_time = np.inf
    if monitor and _outside(x, n_low, M, bound, hpref, slim, in_r0, fac_ptr, kind, deg, c, sp_ptr, sp, high):
        exit_time = 0.0
    while True:
        total = 0.0
        for r in range(R):
            v = pref[r]
            for j in range(fac_ptr[r], fac_ptr[r + 1]):
                if v == 0.0:
                    break
                kj = kind[j]
                y = float(x[sp[sp_ptr[j]]])
                if kj == 0:
                    f = 1.0
                    for i in range(deg[j]):
                        if y - i <= 0.0:
                            f = 0.0
                            break
                        f *= y - i
                elif kj == 1:
                    f = y ** deg[j]
                elif kj == 2:
                    f = y / (y + c[j])
                elif kj == 3:
                    f = math.sqrt(y)
                else:
                    f = 1.0
                    for i in range(sp_ptr[j], sp_ptr[j + 1]):
                        f *= float(x[sp[i]])
                    f = math.log1p(f)
                v *= f
            a[r] = v
            total += v
        tn = t + rng.standard_exponential() / total if total > 0.0 else np.inf
        while g < len(times) and times[g] < tn:
            for i in range(len(obs)):
                rec[g, i] = x[obs[i]]
            rec_jumps[g] = jumps
            g += 1
        if tn > T:
            return False, exit_time
        if jumps >= max_jumps:
            return True, exit_time
        u = rng.random() * total
        k = 0
        acc = a[0]
        while acc <= u and k < R - 1:
            k += 1
            acc += a[k]
        for i in range(x.shape[0]):
            x[i] += delta[k, i]
        jumps += 1
        t = tn
        if monitor and exit_time == np.inf:
            if _outside(x, n_low, M, bound, hpref, slim, in_r0, fac_ptr, kind, deg, c, sp_ptr, sp, high):
                exit_time = t


@numba.njit(nogil=True, cache=True)
def _coupled(x0, z0, delta, pref, bpref, fac_ptr, kind, deg, c, sp_ptr, sp, high, times,
             obs_x, obs_z, max_jumps, rng, rec_x, rec_z, rec_jx, rec_jz):
    """Split coupling of the original chain x and the reduced chain z.

    Reaction k fires in both at rate min(a_k, b_k), in x alone at a_k - min and
    in z alone at b_k - min, where b_k = kappa_k s_k lambda_{L,k}(z).
    """
    x = x0.copy()
    z = z0.copy()
    R = len(pref)
    d = len(z0)
    a = np.empty(R)
    b = np.empty(R)
    T = times[-1]
    t = 0.0
    g = 0
    jx = 0
    jz = 0
    while True:
        total = 0.0
        for r in range(R):
            va = pref[r]
            vb = bpref[r]
            for j in range(fac_ptr[r], fac_ptr[r + 1]):
                for side in range(2):
                    if side == 0:
                        if va == 0.0:
                            continue
                        st = x
                    else:
                        if vb == 0.0 or high[j]:
                            continue
                        st = z
                    kj = kind[j]
                    y = float(st[sp[sp_ptr[j]]])
                    if kj == 0:
                        f = 1.0
                        for i in range(deg[j]):
                            if y - i <= 0.0:
                                f = 0.0
                                break
                            f *= y - i
                    elif kj == 1:
                        f = y ** deg[j]
                    elif kj == 2:
                        f = y / (y + c[j])
                    elif kj == 3:
                        f = math.sqrt(y)
                    else:
                        f = 1.0
                        for i in range(sp_ptr[j], sp_ptr[j + 1]):
                            f *= float(st[sp[i]])
                        f = math.log1p(f)
                    if side == 0:
                        va *= f
                    else:
                        vb *= f
            a[r] = va
            b[r] = vb
            total += max(va, vb)
        tn = t + rng.standard_exponential() / total if total > 0.0 else np.inf
        while g < len(times) and times[g] < tn:
            for i in range(len(obs_x)):
                rec_x[g, i] = x[obs_x[i]]
            for i in range(len(obs_z)):
                rec_z[g, i] = z[obs_z[i]]
            rec_jx[g] = jx
            rec_jz[g] = jz
            g += 1
        if tn > T:
            return False
        if jx + jz >= max_jumps:
            return True
        u = rng.random() * total
        acc = 0.0
        k = R - 1
        move_x = True
        move_z = False
        for r in range(R):
            m = min(a[r], b[r])
            if u < acc + m:
                k, move_x, move_z = r, True, True
                break
            acc += m
            if u < acc + a[r] - m:
                k, move_x, move_z = r, True, False
                break
            acc += a[r] - m
            if u < acc + b[r] - m:
                k, move_x, move_z = r, False, True
                break
            acc += b[r] - m
        if move_x:
            for i in range(x.shape[0]):
                x[i] += delta[k, i]
            jx += 1
        if move_z:
            for i in range(d):
                z[i] += delta[k, i]
            jz += 1
        t = tn


# --- encoding --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class _Encoded:
    names: tuple[str, ...]
    x0: np.ndarray
    delta: np.ndarray
    pref: np.ndarray
    fac_ptr: np.ndarray
    kind: np.ndarray
    deg: np.ndarray
    c: np.ndarray
    sp_ptr: np.ndarray
    sp: np.ndarray
    high: np.ndarray
    scale: np.ndarray  # N^alpha per species

    def tables(self):
        return (self.fac_ptr, self.kind, self.deg, self.c, self.sp_ptr, self.sp, self.high)


def _npow(N, e: Fraction) -> float:
    return float(N) ** float(e)


def _raw_initial(net: ReactionNetwork, N: int) -> np.ndarray:
    out = []
    for s in net.species:
        if s.alpha.denominator == 1:
            v = Fraction(N) ** int(s.alpha) * s.z0
        else:
            v = Fraction(_npow(N, s.alpha) * float(s.z0))
        if v.denominator != 1:
            rounded = int(round(v))
            warnings.warn(f"initial count of {s.name} is {float(v):.6g}; rounded to {rounded}", stacklevel=3)
            v = Fraction(rounded)
        out.append(int(v))
    return np.array(out, dtype=np.int64)


def _encode(net: ReactionNetwork, N: int, gamma: Fraction) -> _Encoded:
    col = {n: i for i, n in enumerate(net.names)}
    fac_ptr, kind, deg, c, sp_ptr, sp, high = [0], [], [], [], [0], [], []
    for r in net.reactions:
        for f in r.factors:
            kind.append(_KIND[f.kind])
            deg.append(f.degree)
            c.append(float(f.c) if f.c is not None else 0.0)
            sp.extend(col[s] for s in f.species)
            sp_ptr.append(len(sp))
            high.append(any(net.species_by_name(s).alpha > 0 for s in f.species))
        fac_ptr.append(len(kind))
    pref = np.array([float(r.kappa) * _npow(N, gamma + r.beta) for r in net.reactions])
    return _Encoded(
        net.names, _raw_initial(net, N), net.stoichiometry().T.astype(np.int64).copy(), pref,
        np.array(fac_ptr, dtype=np.int64), np.array(kind, dtype=np.int64), np.array(deg, dtype=np.int64),
        np.array(c, dtype=float), np.array(sp_ptr, dtype=np.int64), np.array(sp, dtype=np.int64),
        np.array(high, dtype=np.bool_), np.array([_npow(N, s.alpha) for s in net.species]),
    )


# --- configuration and results ---------------------------------------------------------

@dataclass(frozen=True)
class SimulationConfig:
    """Horizon ``T`` in reduced time units; ``times`` adds extra observation instants."""

    T: float
    samples: int
    base_seed: int = 0
    record: tuple[str, ...] | None = None
    exit_M: float | None = None
    max_jumps: int = 10**8
    times: tuple[float, ...] = ()
    workers: int = 1

    def __post_init__(self):
        if not self.T >= 0:
            raise ValueError("horizon T must be nonnegative")
        if self.samples < 1:
            raise ValueError("samples must be at least 1")
        if self.max_jumps < 1:
            raise ValueError("max_jumps must be at least 1")
        if not 0 <= self.base_seed < 2**64:
            raise ValueError("base_seed must fit in 64 bits")
        if any(t < 0 or t > self.T for t in self.times):
            raise ValueError("observation times must lie in [0, T]")
        if self.record is not None:
            object.__setattr__(self, "record", tuple(self.record))
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))

    def grid(self) -> np.ndarray:
        return np.array(sorted(set(self.times) | {float(self.T)}), dtype=float)


@dataclass(frozen=True, eq=False)
class TrajectoryEnsemble:
    """Observed raw counts on a time grid plus per-trajectory jump counts and flags.

    ``counts[i, g, j]`` is the raw count of ``species[j]`` in trajectory i at
    ``times[g]``; divide by ``scale`` for scaled units (low species have scale 1).
    """

    kind: str
    N: int
    species: tuple[str, ...]
    scale: np.ndarray
    times: np.ndarray
    counts: np.ndarray
    jumps: np.ndarray
    exit_time: np.ndarray
    capped: np.ndarray
    base_seed: int
    meta: dict = field(default_factory=dict)

    @property
    def samples(self) -> int:
        return len(self.counts)

    @property
    def exited(self) -> np.ndarray:
        return np.isfinite(self.exit_time)

    @property
    def valid(self) -> np.ndarray:
        return ~self.capped

    def seed(self, i: int) -> tuple[int, int]:
        return (self.base_seed, int(i))

    def time_index(self, t: float | None) -> int:
        if t is None:
            return len(self.times) - 1
        hit = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-12))
        if not len(hit):
            raise ValueError(f"time {t} is not on the observation grid {self.times.tolist()}")
        return int(hit[0])

    def scaled(self, t: float | None = None) -> np.ndarray:
        return self.counts[:, self.time_index(t), :] / self.scale

    @property
    def terminal(self) -> np.ndarray:
        return self.scaled(None)

    def summary(self) -> dict:
        g = -1
        ok = self.valid
        return {
            "kind": self.kind,
            "N": self.N,
            "samples": self.samples,
            "base_seed": self.base_seed,
            "species": list(self.species),
            "times": self.times.tolist(),
            "capped": int(self.capped.sum()),
            "exited": int(self.exited.sum()),
            "mean_jumps": float(self.jumps[ok, g].mean()) if ok.any() else None,
            "terminal_mean": (self.counts[ok, g, :] / self.scale).mean(axis=0).tolist() if ok.any() else None,
        }


def _observed(net: ReactionNetwork, record) -> np.ndarray:
    names = net.names if record is None else record
    try:
        return np.array([net.names.index(n) for n in names], dtype=np.int64)
    except ValueError as exc:
        raise KeyError(f"unknown species in record list {list(names)}") from exc


def _run_batches(fn, n: int, workers: int):
    if workers <= 1 or n < 2 * workers:
        fn(0, n)
        return
    step = -(-n // workers)
    with ThreadPoolExecutor(workers) as pool:
        list(pool.map(lambda lo: fn(lo, min(lo + step, n)), range(0, n, step)))


def _simulate(enc: _Encoded, cfg: SimulationConfig, kind: str, N: int, monitor_args=None,
              record=None) -> TrajectoryEnsemble:
    obs = np.array([enc.names.index(n) for n in record], dtype=np.int64) if record else np.arange(len(enc.names))
    times = cfg.grid()
    n, G = cfg.samples, len(times)
    counts = np.zeros((n, G, len(obs)), dtype=np.int64)
    jumps = np.zeros((n, G), dtype=np.int64)
    exit_time = np.full(n, np.inf)
    capped = np.zeros(n, dtype=np.bool_)
    if monitor_args is None:
        R = len(enc.pref)
        monitor_args = (False, 0, 0.0, 0.0, np.zeros(R), np.zeros(R), np.zeros(R, dtype=np.bool_))
    tables = enc.tables()

    def work(lo, hi):
        for i in range(lo, hi):
            rng = trajectory_rng(cfg.base_seed, i)
            cap, et = _ssa(enc.x0, enc.delta, enc.pref, *tables, times, obs, cfg.max_jumps, rng,
                           *monitor_args, counts[i], jumps[i])
            capped[i] = cap
            exit_time[i] = et

    _run_batches(work, n, cfg.workers)
    if capped.any():
        warnings.warn(f"{int(capped.sum())} trajectories hit max_jumps={cfg.max_jumps}; excluded downstream",
                      stacklevel=3)
    names = tuple(enc.names[i] for i in obs)
    return TrajectoryEnsemble(kind, N, names, enc.scale[obs], times, counts, jumps, exit_time, capped,
                              cfg.base_seed, {"max_jumps": cfg.max_jumps, "exit_M": cfg.exit_M})


def simulate_network(net: ReactionNetwork, cfg: SimulationConfig) -> TrajectoryEnsemble:
    """Plain SSA of an unscaled network (N = 1, intensities kappa * law)."""
    if any(s.alpha != 0 for s in net.species):
        raise ValueError("simulate_network expects an unscaled network; use simulate_original")
    enc = _encode(net, 1, Fraction(0))
    _observed(net, cfg.record)
    return _simulate(enc, cfg, "network", 1, record=cfg.record)


def simulate_original(sys: ScaledSystem, cfg: SimulationConfig) -> TrajectoryEnsemble:
    """SSA of X^N in raw counts, clocked in reduced time (rates N^{gamma+beta} lambda_k(x))."""
    net, N = sys.network, sys.N
    _observed(net, cfg.record)
    enc = _encode(net, N, sys.gamma)
    monitor = None
    if cfg.exit_M is not None:
        hpref = np.array([_npow(N, sys.gamma + r.beta) for r in net.reactions])
        in_r0 = np.array([r.id in sys.dominant for r in net.reactions], dtype=np.bool_)
        slim = np.array([float(high_part_limit(sys, r.id)) if r.id in sys.dominant else 0.0
                         for r in net.reactions])
        monitor = (True, len(net.low), float(cfg.exit_M), float(cfg.exit_M) / N, hpref, slim, in_r0)
    return _simulate(enc, cfg, "original", N, monitor, cfg.record)


def simulate_reduced(proj: ProjectedSystem, cfg: SimulationConfig) -> TrajectoryEnsemble:
    net = proj.to_network()
    _observed(net, cfg.record)
    return _simulate(_encode(net, 1, Fraction(0)), cfg, "reduced", 1, record=cfg.record)


def simulate_coupled(sys: ScaledSystem, cfg: SimulationConfig,
                     proj: ProjectedSystem | None = None) -> tuple[TrajectoryEnsemble, TrajectoryEnsemble]:
    """Original and reduced chains driven by shared randomness (split coupling).

    Each marginal is an exact sample of its own chain, so differences of
    indicator means are unbiased for probability gaps, with variance set by how
    often the two paths disagree rather than by the event probability.
    """
    net, N = sys.network, sys.N
    proj = build_projected_system(sys) if proj is None else proj
    enc = _encode(net, N, sys.gamma)
    low = net.low
    bpref = np.zeros(len(net.reactions))
    for j, r in enumerate(net.reactions):
        if r.id in sys.dominant:
            src, _ = project_complex(r.source, low)
            tgt, _ = project_complex(r.target, low)
            if src != tgt:
                bpref[j] = float(r.kappa * high_part_limit(sys, r.id))
    contributing = {m[0] for rr in proj.reactions for m in rr.members}
    if {r.id for j, r in enumerate(net.reactions) if bpref[j] > 0} != contributing:
        raise ValueError("projected system does not match the scaled system")
    rec = cfg.record
    obs_x = _observed(net, rec)
    low_rec = tuple(n for n in (rec or net.names) if n in low)
    obs_z = np.array([low.index(n) for n in low_rec], dtype=np.int64)
    z0 = enc.x0[: len(low)].copy()
    times = cfg.grid()
    n, G = cfg.samples, len(times)
    rec_x = np.zeros((n, G, len(obs_x)), dtype=np.int64)
    rec_z = np.zeros((n, G, len(obs_z)), dtype=np.int64)
    jx = np.zeros((n, G), dtype=np.int64)
    jz = np.zeros((n, G), dtype=np.int64)
    capped = np.zeros(n, dtype=np.bool_)
    tables = enc.tables()

    def work(lo, hi):
        for i in range(lo, hi):
            rng = trajectory_rng(cfg.base_seed, i)
            capped[i] = _coupled(enc.x0, z0, enc.delta, enc.pref, bpref, *tables, times, obs_x, obs_z,
                                 cfg.max_jumps, rng, rec_x[i], rec_z[i], jx[i], jz[i])

    _run_batches(work, n, cfg.workers)
    meta = {"max_jumps": cfg.max_jumps, "coupled": True}
    never = np.full(n, np.inf)
    ex = TrajectoryEnsemble("coupled-original", N, tuple(net.names[i] for i in obs_x), enc.scale[obs_x],
                            times, rec_x, jx, never, capped, cfg.base_seed, dict(meta))
    ez = TrajectoryEnsemble("coupled-reduced", 1, low_rec, np.ones(len(obs_z)), times, rec_z, jz,
                            never.copy(), capped.copy(), cfg.base_seed, dict(meta))
    return ex, ez


# --- estimators ------------------------------------------------------------------------

def empirical_distribution(ens: TrajectoryEnsemble, species: str | Sequence[str] | None = None,
                           t: float | None = None) -> DistributionVector:
    """Normalised histogram of observed low-species values (capped trajectories excluded)."""
    if isinstance(species, str):
        species = (species,)
    species = tuple(n for n, s in zip(ens.species, ens.scale) if s == 1.0) if species is None else tuple(species)
    cols = []
    for n in species:
        if n not in ens.species:
            raise KeyError(f"{n} was not recorded")
        j = ens.species.index(n)
        if ens.scale[j] != 1.0:
            raise ValueError(f"{n} is a high-copy species; histograms are over low-copy counts")
        cols.append(j)
    ok = ens.valid
    if not ok.any():
        raise ValueError("ensemble has no completed trajectories")
    vals = ens.counts[ok][:, ens.time_index(t), :][:, cols]
    uniq, cnt = np.unique(vals, axis=0, return_counts=True)
    n = int(ok.sum())
    return DistributionVector(species, uniq, cnt / n, 0.0,
                              {"samples": n, "excluded": int((~ok).sum()), "t": float(ens.times[ens.time_index(t)])})


def jump_moment_estimate(ens: TrajectoryEnsemble, m: int = 2, t: float | None = None) -> tuple[float, float]:
    """Monte Carlo E(J(t)^m) with its standard error."""
    ok = ens.valid
    J = ens.jumps[ok, ens.time_index(t)].astype(float) ** m
    if len(J) == 0:
        raise ValueError("ensemble has no completed trajectories")
    se = float(J.std(ddof=1) / math.sqrt(len(J))) if len(J) > 1 else 0.0
    return float(J.mean()), se


@dataclass(frozen=True)
class ExitEstimate:
    p: float
    ci_low: float
    ci_high: float
    exits: int
    n: int

    @property
    def se(self) -> float:
        return math.sqrt(self.p * (1 - self.p) / self.n) if self.n else 0.0


def exit_probability_estimate(sys: ScaledSystem, cfg: SimulationConfig, level: float = 0.95) -> ExitEstimate:
    """Fraction of original trajectories leaving S_M before T, with a Wilson interval."""
    if cfg.exit_M is None:
        raise ValueError("exit_M must be set")
    ens = simulate_original(sys, cfg)
    ok = ens.valid
    exits = int((ens.exited & ok & (ens.exit_time <= cfg.T)).sum())
    n = int(ok.sum())
    ci = binomtest(exits, n).proportion_ci(confidence_level=level, method="wilson")
    return ExitEstimate(exits / n, float(ci.low), float(ci.high), exits, n)
