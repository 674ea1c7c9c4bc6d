"""Projected (reduced) system: drop high species, keep dominant reactions, merge rate constants."""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

from .network import (Complex, Factor, RateLaw, Reaction, ReactionNetwork, Species,
                      mass_action_factors)
from .scaling import ScaledSystem, split_factors, classify_reactions, high_part_limit

__all__ = [
    "ReducedReaction",
    "ProjectedSystem",
    "ProbeReport",
    "project_complex",
    "limit_factor",
    "build_projected_system",
    "stationarity_probe",
]


def project_complex(y: Complex, low: set[str] | tuple[str, ...]) -> tuple[Complex, Complex]:
    """(q_L(y), q_H(y)) for the given set of low species."""
    low = set(low)
    return (Complex(tuple(t for t in y.terms if t[0] in low)),
            Complex(tuple(t for t in y.terms if t[0] not in low)))


def limit_factor(sys: ScaledSystem, k: str) -> Fraction:
    """s_k; zero for every reaction outside R0."""
    if k not in sys.dominant:
        sys.network.reaction(k)
        return Fraction(0)
    return high_part_limit(sys, k)


@dataclass(frozen=True)
class ReducedReaction:
    id: str
    source: Complex
    target: Complex
    kappa: Fraction
    factors: tuple[Factor, ...]
    members: tuple[tuple[str, Fraction, Fraction], ...]  # (original id, kappa_k, s_k)

    @property
    def mass_action(self) -> bool:
        return self.factors == mass_action_factors(self.source)


@dataclass(frozen=True)
class ProjectedSystem:
    species: tuple[Species, ...]
    reactions: tuple[ReducedReaction, ...]
    warnings: tuple[str, ...] = ()
    limits: dict = field(default_factory=dict, compare=False)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.species)

    @property
    def provenance(self) -> dict[str, tuple[tuple[str, Fraction, Fraction], ...]]:
        return {r.id: r.members for r in self.reactions}

    def reaction(self, rid: str) -> ReducedReaction:
        for r in self.reactions:
            if r.id == rid:
                return r
        raise KeyError(rid)

    def to_network(self) -> ReactionNetwork:
        """The reduced network as an ordinary (unscaled) network: alpha = 0, beta = 0."""
        rxns = tuple(
            Reaction(r.id, r.source, r.target, RateLaw(r.kappa, Fraction(0), r.factors, r.mass_action))
            for r in self.reactions
        )
        return ReactionNetwork(self.species, rxns)

    def initial_state(self) -> tuple[int, ...]:
        return tuple(int(s.z0) for s in self.species)


def _natural(s: str):
    return [int(p) if p.isdigit() else p for p in re.split(r"(\d+)", s)]


def _shape(factors: tuple[Factor, ...]) -> tuple[str, ...]:
    return tuple(sorted(f.spec() for f in factors))


def build_projected_system(sys: ScaledSystem) -> ProjectedSystem:
    """Apply q_L to every dominant reaction that moves a low species and merge like reactions.

    Reactions merge when their projected complexes and low-side law coincide;
    same complexes with different low-side laws stay separate (with a warning).
    """
    net = sys.network
    if sys.gamma != -sys.theta0:
        raise ValueError("projection requires gamma = -theta0")
    low = net.low
    dominant, _ = classify_reactions(sys)
    groups: dict[tuple, list] = {}
    notes: list[str] = []
    for k in dominant:
        r = net.reaction(k)
        src, _ = project_complex(r.source, low)
        tgt, _ = project_complex(r.target, low)
        if src == tgt:
            continue
        low_f, _ = split_factors(sys, k)
        s_k = high_part_limit(sys, k)
        if s_k == 0:
            notes.append(f"{k}: limit factor is 0, reaction contributes nothing")
            continue
        key = (src, tgt, _shape(tuple(low_f)))
        groups.setdefault(key, []).append((k, r.kappa, s_k, tuple(low_f)))

    by_complexes: dict[tuple, list] = {}
    for key in groups:
        by_complexes.setdefault(key[:2], []).append(key)
    for (src, tgt), keys in by_complexes.items():
        if len(keys) > 1:
            ids = [m[0] for key in keys for m in groups[key]]
            msg = (f"reactions {', '.join(ids)} project to {src.format(low)} -> {tgt.format(low)} "
                   "with different low-side laws; kept as separate reduced reactions")
            notes.append(msg)
            warnings.warn(msg, stacklevel=2)

    reduced = []
    for key, members in groups.items():
        members = sorted(members, key=lambda m: _natural(m[0]))
        kappa = sum((m[1] * m[2] for m in members), Fraction(0))
        reduced.append(ReducedReaction(
            "_".join(m[0] for m in members), key[0], key[1], kappa, members[0][3],
            tuple((m[0], m[1], m[2]) for m in members),
        ))
    order = {k: i for i, k in enumerate(net.reaction_ids)}
    reduced.sort(key=lambda r: order[r.members[0][0]])
    species = tuple(Species(n, Fraction(0), net.species_by_name(n).z0) for n in low)
    limits = {k: (high_part_limit(sys, k) if k in sys.dominant else Fraction(0)) for k in net.reaction_ids}
    return ProjectedSystem(species, tuple(reduced), tuple(notes), limits)


@dataclass
class ProbeReport:
    irreducible: bool
    truncations: list[int]
    moment_sums: list[float]
    stabilized: bool
    stationary: object | None
    messages: list[str]

    def to_dict(self) -> dict:
        return {
            "irreducible": self.irreducible,
            "truncations": self.truncations,
            "moment_sums": self.moment_sums,
            "stabilized": self.stabilized,
            "messages": self.messages,
        }


def stationarity_probe(proj: ProjectedSystem | ReactionNetwork, truncation: int | None = None,
                       max_doublings: int = 4, rel_tol: float = 0.01) -> ProbeReport:
    """Numerical check that the reduced chain has a stationary law with a finite second moment.

    Solves for pi on successively doubled truncations and watches the sum
    sum_x sum_u lambda_u(x)^2 pi(x) settle within ``rel_tol``.
    """
    from .cme import (ReducibleChainError, build_generator, default_box, enumerate_states,
                      reaction_rates, stationary_solve)

    net = proj.to_network() if isinstance(proj, ProjectedSystem) else proj
    M = default_box(net) if truncation is None else int(truncation)
    truncs, sums, msgs = [], [], []
    irreducible, pi = True, None
    for _ in range(max_doublings + 1):
        enum = enumerate_states(net, box=M)
        gen = build_generator(net, enum)
        try:
            pi = stationary_solve(gen)
        except ReducibleChainError as exc:
            irreducible = False
            msgs.append(f"M={M}: {exc}")
            break
        rates = reaction_rates(net, enum.states)
        truncs.append(M)
        sums.append(float(((rates ** 2).sum(axis=1) * pi.probs).sum()))
        if enum.truncation["kind"] == "slice":
            msgs.append("finite conserved slice: truncation is exact")
            break
        if len(sums) >= 2 and abs(sums[-1] - sums[-2]) <= rel_tol * abs(sums[-2]):
            break
        M *= 2
    stabilized = irreducible and (
        (len(sums) >= 1 and msgs and msgs[-1].startswith("finite"))
        or (len(sums) >= 2 and abs(sums[-1] - sums[-2]) <= rel_tol * abs(sums[-2]))
    )
    if irreducible and not stabilized:
        msgs.append("second-moment sum did not settle; stationarity not confirmed")
    return ProbeReport(irreducible, truncs, sums, bool(stabilized), pi, msgs)
