"""Experiments: event probabilities, distances, the convergence sweep d(N) and lemma-level checks."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import re
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import binomtest, linregress
from scipy.stats import t as student_t

from .cme import build_generator, enumerate_states, transient_solve
from .distribution import DistributionVector
from .network import ReactionNetwork, load_network
from .projection import build_projected_system, project_complex
from .scaling import (classify_reactions, decompose_intensity, sample_compact_states,
                      scale_network, scaled_intensities)
from .ssa import (SimulationConfig, TrajectoryEnsemble, exit_probability_estimate, jump_moment_estimate,
                  simulate_coupled, simulate_original, simulate_reduced)

__all__ = [
    "EventSet",
    "Probability",
    "SlopeFit",
    "ConvergenceReport",
    "event_probability",
    "total_variation",
    "fit_slope",
    "point_seed",
    "convergence_sweep",
    "intensity_gap_check",
    "jump_moment_check",
    "exit_probability_check",
    "lemma_harness",
    "emit_report",
]


# --- events ----------------------------------------------------------------------------

_CLAUSE = re.compile(
    r"^\s*(?P<name>[A-Za-z_][\w]*)\s*(?:"
    r"in\s*\{(?P<set>[^}]*)\}|"
    r"in\s*\[\s*(?P<lo>-?\d+)\s*\.\.\s*(?P<hi>-?\d+)\s*\]|"
    r"(?P<op>>=|<=|==|<|>)\s*(?P<val>-?\d+))\s*$"
)


@dataclass(frozen=True)
class EventSet:
    """Conjunction of per-species constraints; each is a finite set or an integer interval.

    Grammar: ``S1 in {3,4}``, ``S1 in [2..5]``, ``S1 >= 3`` (also <=, ==, <, >),
    clauses joined by ``and``, ``&`` or ``;``. The empty conjunction is ``true``.
    """

    clauses: tuple = ()  # (name, frozenset | None, lo | None, hi | None)

    @classmethod
    def parse(cls, text: str) -> "EventSet":
        text = text.strip()
        if text.lower() in ("", "true", "all"):
            return cls(())
        clauses = []
        for part in re.split(r"\s+and\s+|&|;", text):
            m = _CLAUSE.match(part)
            if not m:
                raise ValueError(f"cannot parse event clause {part.strip()!r}")
            name = m["name"]
            if m["set"] is not None:
                vals = frozenset(int(v) for v in m["set"].split(",") if v.strip())
                clauses.append((name, vals, None, None))
            elif m["lo"] is not None:
                clauses.append((name, None, int(m["lo"]), int(m["hi"])))
            else:
                v, op = int(m["val"]), m["op"]
                bounds = {">=": (v, None), ">": (v + 1, None), "<=": (None, v), "<": (None, v - 1),
                          "==": (v, v)}[op]
                clauses.append((name, None) + bounds)
        return cls(tuple(clauses))

    @property
    def species(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(c[0] for c in self.clauses))

    def mask(self, states: np.ndarray, species: Sequence[str]) -> np.ndarray:
        states = np.asarray(states)
        out = np.ones(len(states), dtype=bool)
        for name, vals, lo, hi in self.clauses:
            if name not in species:
                raise KeyError(f"event refers to {name}, which is not among {list(species)}")
            col = states[:, list(species).index(name)]
            if vals is not None:
                out &= np.isin(col, sorted(vals))
            else:
                if lo is not None:
                    out &= col >= lo
                if hi is not None:
                    out &= col <= hi
        return out

    def __str__(self) -> str:
        if not self.clauses:
            return "true"
        parts = []
        for name, vals, lo, hi in self.clauses:
            if vals is not None:
                parts.append(f"{name} in {{{','.join(str(v) for v in sorted(vals))}}}")
            elif lo is not None and hi is not None:
                parts.append(f"{name} == {lo}" if lo == hi else f"{name} in [{lo}..{hi}]")
            elif lo is not None:
                parts.append(f"{name} >= {lo}")
            else:
                parts.append(f"{name} <= {hi}")
        return " and ".join(parts)


@dataclass(frozen=True)
class Probability:
    value: float
    low: float
    high: float
    n: int | None = None

    def __float__(self) -> float:
        return self.value


def event_probability(source: DistributionVector | TrajectoryEnsemble, A: EventSet | str,
                      t: float | None = None, level: float = 0.95) -> Probability:
    """P(A) from a pmf (exact, over the listed mass) or an ensemble (with a Wilson interval)."""
    A = EventSet.parse(A) if isinstance(A, str) else A
    if isinstance(source, DistributionVector):
        p = float(source.probs[A.mask(source.states, source.species)].sum())
        return Probability(p, p, p, None)
    ok = source.valid
    vals = source.counts[ok][:, source.time_index(t), :]
    hits = int(A.mask(vals, source.species).sum())
    n = int(ok.sum())
    ci = binomtest(hits, n).proportion_ci(confidence_level=level, method="wilson")
    return Probability(hits / n, float(ci.low), float(ci.high), n)


def total_variation(p: DistributionVector, q: DistributionVector) -> float:
    """Half the l1 distance over the union of supports (species matched by name)."""
    if set(p.species) != set(q.species):
        raise ValueError(f"species differ: {p.species} vs {q.species}")
    q = q.marginal(p.species)
    a, b = p.as_dict(), q.as_dict()
    tv = 0.5 * sum(abs(a.get(s, 0.0) - b.get(s, 0.0)) for s in set(a) | set(b))
    return min(max(tv, 0.0), 1.0)


# --- slope fitting ---------------------------------------------------------------------

@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    stderr: float
    ci_low: float
    ci_high: float
    used: tuple[bool, ...]
    reliable: bool

    @property
    def nu(self) -> float:
        return -self.slope


def fit_slope(N: Sequence[float], d: Sequence[float], se: Sequence[float] | None = None,
              level: float = 0.95, min_points: int = 3) -> SlopeFit:
    """Least-squares fit of log d against log N over points whose standard error is below d."""
    N = np.asarray(N, dtype=float)
    d = np.asarray(d, dtype=float)
    se = np.zeros_like(d) if se is None else np.asarray(se, dtype=float)
    used = (d > 0) & (se < d)
    k = int(used.sum())
    if k < 2:
        return SlopeFit(math.nan, math.nan, math.nan, math.nan, math.nan, tuple(used.tolist()), False)
    fit = linregress(np.log(N[used]), np.log(d[used]))
    stderr = float(fit.stderr) if k > 2 else math.nan
    half = float(student_t.ppf(0.5 + level / 2, k - 2)) * stderr if k > 2 else math.nan
    return SlopeFit(float(fit.slope), float(fit.intercept), stderr, float(fit.slope) - half,
                    float(fit.slope) + half, tuple(used.tolist()), k >= min_points)


# --- convergence sweep -----------------------------------------------------------------

def point_seed(seed: int, i: int) -> int:
    """64-bit base seed for grid point i, derived from the sweep seed."""
    return int(np.random.SeedSequence(seed, spawn_key=(i,)).generate_state(1, np.uint64)[0])


@dataclass
class ConvergenceReport:
    grid: list[int]
    d: list[float]
    stderr: list[float]
    p_original: list[float]
    p_reference: float
    fit: SlopeFit | None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "grid": list(self.grid),
            "d": list(self.d),
            "stderr": list(self.stderr),
            "p_original": list(self.p_original),
            "p_reference": self.p_reference,
            "fit": None if self.fit is None else {**asdict(self.fit), "used": list(self.fit.used), "nu": self.fit.nu},
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ConvergenceReport":
        fit = data.get("fit")
        if fit is not None:
            # non-finite floats were written as null
            fit = {k: (math.nan if v is None else v) for k, v in fit.items() if k != "nu"}
            fit = SlopeFit(**{**fit, "used": tuple(fit["used"])})
        return cls(list(data["grid"]), list(data["d"]), list(data["stderr"]), list(data["p_original"]),
                   data["p_reference"], fit, dict(data.get("metadata", {})))

    def strictly_decreasing(self, k: float = 2.0) -> bool:
        """d(N_{i+1}) < d(N_i) by more than k combined standard errors at every step."""
        return all(self.d[i] - self.d[i + 1] > k * math.hypot(self.stderr[i], self.stderr[i + 1])
                   for i in range(len(self.d) - 1))

    def flatness(self) -> float:
        """max/min of d(N) N^nu over the grid (1 means an exact power law)."""
        if self.fit is None or not math.isfinite(self.fit.nu):
            return math.nan
        v = [di * Ni ** self.fit.nu for di, Ni in zip(self.d, self.grid) if di > 0]
        return max(v) / min(v) if v else math.nan


def _reference_probability(net: ReactionNetwork, A: EventSet, t: float) -> tuple[float, dict]:
    proj = build_projected_system(scale_network(net, 1))
    enum = enumerate_states(proj)
    gen = build_generator(proj, enum)
    pt = transient_solve(gen, proj.initial_state(), t)
    return float(event_probability(pt, A)), {"method": "cme", "states": len(enum),
                                              "truncation": enum.truncation, "leaked_mass": pt.leaked}


def convergence_sweep(net: ReactionNetwork | str | Path, event: EventSet | str, t: float,
                      grid: Sequence[int], samples: int, seed: int, method: str = "coupled",
                      substitute_reduced: bool = False, workers: int = 1) -> ConvergenceReport:
    """Estimate d(N) = |P(Z^N(t) in A) - P(Z(t) in A)| over a grid of N and fit its log-log slope.

    ``method="independent"`` compares an original-system ensemble against the
    CME reference. ``method="coupled"`` simulates original and reduced chains on
    shared randomness and averages 1_A(X) - 1_A(Z); both sides are exact
    samples, so the estimate targets the same gap with far smaller variance.
    ``substitute_reduced`` runs the reduced system in place of the original
    (every d(N) should then vanish within noise).
    """
    if not isinstance(net, ReactionNetwork):
        net = load_network(net)
    A = EventSet.parse(event) if isinstance(event, str) else event
    grid = [int(N) for N in grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("N grid must be strictly increasing")
    if method not in ("coupled", "independent"):
        raise ValueError(f"unknown method {method!r}")
    if any(s not in net.low for s in A.species):
        raise ValueError("the event may only constrain low-copy species")
    p_ref, ref_meta = _reference_probability(net, A, t)
    d, se, p_orig, seeds = [], [], [], []
    for i, N in enumerate(grid):
        sys = scale_network(net, N)
        base = point_seed(seed, i)
        seeds.append(base)
        cfg = SimulationConfig(T=t, samples=samples, base_seed=base, record=A.species, workers=workers)
        if substitute_reduced:
            ens = simulate_reduced(build_projected_system(sys), cfg)
            p = event_probability(ens, A)
            p_orig.append(p.value)
            d.append(abs(p.value - p_ref))
            se.append(math.sqrt(max(p.value * (1 - p.value), 0.0) / p.n))
        elif method == "independent":
            ens = simulate_original(sys, cfg)
            p = event_probability(ens, A)
            p_orig.append(p.value)
            d.append(abs(p.value - p_ref))
            se.append(math.sqrt(max(p.value * (1 - p.value), 0.0) / p.n))
        else:
            ex, ez = simulate_coupled(sys, cfg)
            ok = ex.valid
            hx = A.mask(ex.counts[ok][:, -1, :], ex.species).astype(float)
            hz = A.mask(ez.counts[ok][:, -1, :], ez.species).astype(float)
            diff = hx - hz
            p_orig.append(float(hx.mean()))
            d.append(abs(float(diff.mean())))
            se.append(float(diff.std(ddof=1) / math.sqrt(len(diff))))
    fit = fit_slope(grid, d, se)
    meta = {
        "network": _network_digest(net),
        "event": str(A),
        "t": float(t),
        "samples": int(samples),
        "seed": int(seed),
        "point_seeds": seeds,
        "method": "reduced-substitute" if substitute_reduced else method,
        "reference": ref_meta,
    }
    return ConvergenceReport(grid, d, se, p_orig, p_ref, fit, meta)


def _network_digest(net: ReactionNetwork) -> str:
    return hashlib.sha256(str(net).encode()).hexdigest()[:16]


# --- lemma-level checks ----------------------------------------------------------------

def _max_low_coefficient(net: ReactionNetwork) -> int:
    low = net.low
    return max((c for r in net.reactions for n, c in r.source.terms if n in low), default=0)


def _moves_low(net: ReactionNetwork, k: str) -> bool:
    r = net.reaction(k)
    return project_complex(r.source, net.low)[0] != project_complex(r.target, net.low)[0]


def intensity_gap_check(net: ReactionNetwork, grid: Sequence[int] = (1000, 10000), rho: float = 0.3,
                        n_states: int = 10_000, seed: int = 0, fit_N: int = 100) -> dict:
    """Intensity gaps between original and reduced chains on random states of S_M (M = N^rho).

    (i)   dominant reactions: |lambda_k(z) - s_k kappa_k lambda_L(z_l)| <= kappa_k lambda_L(z_l) M/N
    (ii)  other reactions: lambda_k(z) <= c N^-nu2, nu2 = 1 - rho (max ||q_L(y)||_inf + 1), c fitted at fit_N
    (iii) total rates of low-moving reactions within (1 +- c N^-nu1) of the reduced total, nu1 = 1 - rho
    """
    rng = np.random.default_rng(seed)
    dominant, minor = classify_reactions(scale_network(net, fit_N))
    nu2 = 1 - rho * (_max_low_coefficient(net) + 1)
    nu1 = 1 - rho
    ids = net.reaction_ids
    col = {k: i for i, k in enumerate(ids)}
    moving = [k for k in ids if _moves_low(net, k)]

    def evaluate(N):
        sys = scale_network(net, N)
        M = N ** rho
        low, high = sample_compact_states(sys, M, n_states, rng)
        lam = scaled_intensities(sys, low, high)
        lowpart = {}
        for k in dominant:
            lam_l, _ = decompose_intensity(sys, k)
            lowpart[k] = float(net.reaction(k).kappa) * np.asarray(lam_l(low.astype(float)), dtype=float)
        return sys, M, low, lam, lowpart

    # constant for (ii), fitted at the smallest N
    _, _, _, lam_fit, _ = evaluate(fit_N)
    c_ii = max((float(lam_fit[:, col[k]].max()) * fit_N ** nu2 for k in minor), default=0.0)
    proj = build_projected_system(scale_network(net, fit_N))
    c_i = max((sum(float(m[1]) for m in rr.members) / float(rr.kappa) for rr in proj.reactions), default=1.0)
    minor_moving = [k for k in minor if k in moving]
    c_iii = max(c_i, c_ii * len(minor_moving))

    results = {"rho": rho, "nu1": nu1, "nu2": nu2, "c_ii": c_ii, "c_iii": c_iii, "states": n_states, "N": {}}
    ok_all = True
    for N in grid:
        sys, M, low, lam, lowpart = evaluate(N)
        slack = 1e-12
        # (i)
        worst_i = 0.0
        ok_i = True
        for k in dominant:
            s_k = float(sys.limits[k])
            gap = np.abs(lam[:, col[k]] - s_k * lowpart[k])
            bound = lowpart[k] * M / N
            ok_i &= bool(np.all(gap <= bound * (1 + slack) + slack))
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.where(bound > 0, gap / bound, 0.0)
            worst_i = max(worst_i, float(r.max(initial=0.0)))
        # (ii)
        worst_ii = max((float(lam[:, col[k]].max()) for k in minor), default=0.0)
        bound_ii = c_ii * N ** -nu2
        ok_ii = worst_ii <= bound_ii * (1 + slack)
        # (iii)
        reduced_total = sum(float(sys.limits[k]) * lowpart[k] for k in dominant if k in moving) \
            if any(k in moving for k in dominant) else np.zeros(len(low))
        total = lam[:, [col[k] for k in moving]].sum(axis=1) if moving else np.zeros(len(low))
        eps = c_iii * N ** -nu1
        lower = (1 - eps) * reduced_total
        upper = (1 + eps) * reduced_total + c_iii * N ** -nu2
        ok_iii = bool(np.all(total >= lower * (1 - slack) - slack) and np.all(total <= upper * (1 + slack) + slack))
        results["N"][str(N)] = {
            "M": M, "i": ok_i, "i_worst_ratio": worst_i, "ii": ok_ii, "ii_max": worst_ii,
            "ii_bound": bound_ii, "iii": ok_iii,
        }
        ok_all &= ok_i and ok_ii and ok_iii
    results["passed"] = bool(ok_all)
    return results


def jump_moment_check(net: ReactionNetwork, times: Sequence[float] = (1, 10, 100), samples: int = 10_000,
                      seed: int = 0, safety: float = 2.0) -> dict:
    """E(J(t)^2) <= safety * c * max(1, t^2) for the reduced chain, with c = E(J(1)^2)."""
    proj = build_projected_system(scale_network(net, 1))
    times = sorted(float(t) for t in times)
    cfg = SimulationConfig(T=times[-1], samples=samples, base_seed=seed, times=tuple(times))
    ens = simulate_reduced(proj, cfg)
    c, c_se = jump_moment_estimate(ens, 2, 1.0 if 1.0 in times else times[0])
    rows, ok = [], True
    for t in times:
        m, se = jump_moment_estimate(ens, 2, t)
        bound = safety * c * max(1.0, t * t)
        rows.append({"t": t, "EJ2": m, "se": se, "bound": bound, "ok": m <= bound})
        ok &= m <= bound
    return {"c": c, "c_se": c_se, "safety": safety, "rows": rows, "passed": bool(ok)}


def exit_probability_check(net: ReactionNetwork, grid: Sequence[int] = (100, 1000, 10000), rho: float = 0.3,
                           T: float = 10.0, samples: int = 10_000, seed: int = 0) -> dict:
    """P(original chain leaves S_M before T), M = N^rho, should not increase with N beyond noise."""
    rows = []
    for i, N in enumerate(grid):
        sys = scale_network(net, N)
        est = exit_probability_estimate(sys, SimulationConfig(T=T, samples=samples, base_seed=point_seed(seed, i),
                                                              exit_M=N ** rho))
        rows.append({"N": N, "M": N ** rho, "p": est.p, "se": est.se, "wilson": [est.ci_low, est.ci_high],
                     "exits": est.exits, "n": est.n})
    ok = all(b["p"] <= a["p"] + 2 * math.hypot(a["se"], b["se"]) for a, b in zip(rows, rows[1:]))
    return {"rho": rho, "T": T, "rows": rows, "passed": bool(ok)}


_LEMMAS = {
    "intensity-gap": intensity_gap_check,
    "jump-moment": jump_moment_check,
    "exit-probability": exit_probability_check,
}


def lemma_harness(net: ReactionNetwork | str | Path, which: str = "all", **options) -> dict:
    """Run the selected checks; ``options`` maps check name to keyword arguments."""
    if not isinstance(net, ReactionNetwork):
        net = load_network(net)
    names = list(_LEMMAS) if which == "all" else [which]
    out = {}
    for name in names:
        if name not in _LEMMAS:
            raise ValueError(f"unknown check {name!r}; choose from {sorted(_LEMMAS)} or 'all'")
        out[name] = _LEMMAS[name](net, **options.get(name, {}))
    out["passed"] = all(v["passed"] for v in out.values())
    return out


# --- output ----------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def emit_report(report, fmt: str = "json", path: str | Path | None = None) -> str:
    """Serialise a report deterministically; CSV carries (N, d, stderr) rows."""
    if fmt == "json":
        data = report.to_dict() if hasattr(report, "to_dict") else report
        text = json.dumps(_jsonable(data), sort_keys=True, indent=2) + "\n"
    elif fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "d", "stderr"])
        for N, d, se in zip(report.grid, report.d, report.stderr):
            w.writerow([N, repr(float(d)), repr(float(se))])
        text = buf.getvalue()
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
