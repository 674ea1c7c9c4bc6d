"""Reaction-network data model, rate-law catalog and the ``.net`` text format.

A network file is line oriented::

    # comment
    species A alpha=0 z0=2
    species C alpha=1 z0=3
    reaction r1: A + C -> 2 C kappa=1 beta=0
    reaction r2: A + C -> C kappa=0.5 beta=1 law=ff(A);hill(C,4.7)

Omitting ``law=`` means stochastic mass action (falling factorials of the
source-complex coefficients).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from decimal import Decimal, localcontext
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "NetworkError",
    "NetworkSyntaxError",
    "Species",
    "Complex",
    "Factor",
    "RateLaw",
    "Reaction",
    "ReactionNetwork",
    "parse_network",
    "load_network",
    "serialize_network",
    "evaluate_intensity",
    "conservation_laws",
    "format_number",
    "parse_number",
]

FACTOR_KINDS = ("ff", "pow", "hill", "sqrt", "log1p")
_NAME = r"[A-Za-z_][A-Za-z0-9_]*"
_NAME_RE = re.compile(rf"^{_NAME}$")


class NetworkError(ValueError):
    """Structural problem with a reaction network."""


class NetworkSyntaxError(NetworkError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


def parse_number(text: str) -> Fraction:
    """Parse a decimal (``0.011``, ``1e-3``) or rational (``-1/2``) literal exactly."""
    text = text.strip()
    if not text:
        raise ValueError("empty number")
    return Fraction(text)


def format_number(q: Fraction) -> str:
    """Shortest exact text for ``q``: integer, terminating decimal, else ``p/q``."""
    q = Fraction(q)
    if q.denominator == 1:
        return str(q.numerator)
    d = q.denominator
    for p in (2, 5):
        while d % p == 0:
            d //= p
    if d != 1:
        return f"{q.numerator}/{q.denominator}"
    with localcontext() as ctx:
        ctx.prec = 400
        text = format(Decimal(q.numerator) / Decimal(q.denominator), "f")
    return text


@dataclass(frozen=True)
class Species:
    name: str
    alpha: Fraction
    z0: Fraction

    def __post_init__(self):
        object.__setattr__(self, "alpha", Fraction(self.alpha))
        object.__setattr__(self, "z0", Fraction(self.z0))
        if not _NAME_RE.match(self.name):
            raise NetworkError(f"invalid species name {self.name!r}")
        if self.alpha < 0:
            raise NetworkError(f"species {self.name}: alpha must be >= 0")
        if self.z0 < 0:
            raise NetworkError(f"species {self.name}: z0 must be >= 0")
        if self.alpha == 0 and self.z0.denominator != 1:
            raise NetworkError(f"species {self.name}: low-copy species (alpha=0) need an integer z0")

    @property
    def is_low(self) -> bool:
        return self.alpha == 0


@dataclass(frozen=True)
class Complex:
    """Nonnegative integer combination of species; the empty complex is 0."""

    terms: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        merged: dict[str, int] = {}
        for name, c in self.terms:
            if int(c) != c or c < 0:
                raise NetworkError(f"stoichiometric coefficient of {name} must be a nonnegative integer")
            merged[name] = merged.get(name, 0) + int(c)
        object.__setattr__(self, "terms", tuple(sorted((n, c) for n, c in merged.items() if c > 0)))

    @classmethod
    def of(cls, coefficients: Mapping[str, int] | None = None, **kw: int) -> "Complex":
        items = dict(coefficients or {})
        items.update(kw)
        return cls(tuple(items.items()))

    def __getitem__(self, name: str) -> int:
        return dict(self.terms).get(name, 0)

    def get(self, name: str, default: int = 0) -> int:
        return dict(self.terms).get(name, default)

    @property
    def species(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.terms)

    def as_dict(self) -> dict[str, int]:
        return dict(self.terms)

    def restrict(self, names: Iterable[str]) -> "Complex":
        keep = set(names)
        return Complex(tuple((n, c) for n, c in self.terms if n in keep))

    def __add__(self, other: "Complex") -> "Complex":
        return Complex(self.terms + other.terms)

    def is_empty(self) -> bool:
        return not self.terms

    def vector(self, order: Sequence[str]) -> np.ndarray:
        d = self.as_dict()
        return np.array([d.get(n, 0) for n in order], dtype=np.int64)

    def format(self, order: Sequence[str] | None = None) -> str:
        if not self.terms:
            return "0"
        d = self.as_dict()
        names = [n for n in order if n in d] if order is not None else list(d)
        return " + ".join(n if d[n] == 1 else f"{d[n]} {n}" for n in names)

    def __str__(self) -> str:
        return self.format()


@dataclass(frozen=True)
class Factor:
    """One multiplicative term of a rate law.

    ``ff``    falling factorial x(x-1)...(x-degree+1)
    ``pow``   x**degree
    ``hill``  x/(x+c)
    ``sqrt``  sqrt(x)
    ``log1p`` log(1 + x1*x2*...)
    """

    kind: str
    species: tuple[str, ...]
    degree: int = 1
    c: Fraction | None = None

    def __post_init__(self):
        if self.kind not in FACTOR_KINDS:
            raise NetworkError(f"unknown factor kind {self.kind!r}")
        object.__setattr__(self, "species", tuple(self.species))
        if not self.species:
            raise NetworkError(f"{self.kind}: needs at least one species")
        if self.kind != "log1p" and len(self.species) != 1:
            raise NetworkError(f"{self.kind}: takes exactly one species")
        if len(set(self.species)) != len(self.species):
            raise NetworkError(f"{self.kind}: repeated species")
        if self.kind in ("ff", "pow"):
            if int(self.degree) != self.degree or self.degree < 1:
                raise NetworkError(f"{self.kind}({self.species[0]}): degree must be a positive integer")
            object.__setattr__(self, "degree", int(self.degree))
        else:
            object.__setattr__(self, "degree", 1)
        if self.kind == "hill":
            if self.c is None:
                raise NetworkError("hill factor needs a constant c")
            c = Fraction(self.c)
            if c <= 0:
                raise NetworkError(f"hill({self.species[0]}): c must be positive")
            object.__setattr__(self, "c", c)
        elif self.c is not None:
            raise NetworkError(f"{self.kind}: takes no constant")

    def __call__(self, *values):
        """Evaluate on counts (scalars or numpy arrays, one per species)."""
        x = values[0]
        if self.kind == "ff":
            out = np.ones_like(np.asarray(x, dtype=float))
            for j in range(self.degree):
                out = out * np.maximum(np.asarray(x, dtype=float) - j, 0.0)
            return out
        if self.kind == "pow":
            return np.asarray(x, dtype=float) ** self.degree
        if self.kind == "hill":
            x = np.asarray(x, dtype=float)
            return x / (x + float(self.c))
        if self.kind == "sqrt":
            return np.sqrt(np.asarray(x, dtype=float))
        prod = np.ones_like(np.asarray(x, dtype=float))
        for v in values:
            prod = prod * np.asarray(v, dtype=float)
        return np.log1p(prod)

    def vanishes_below(self, coefficient: int) -> bool:
        """True if the factor is zero whenever its species count is < coefficient."""
        if self.kind == "ff":
            return self.degree >= coefficient
        return coefficient <= 1

    def spec(self) -> str:
        s = self.species[0]
        if self.kind == "ff":
            return f"ff({s})" if self.degree == 1 else f"ff({s},{self.degree})"
        if self.kind == "pow":
            return f"pow({s},{self.degree})"
        if self.kind == "hill":
            return f"hill({s},{format_number(self.c)})"
        if self.kind == "sqrt":
            return f"sqrt({s})"
        return f"log1p({'*'.join(self.species)})"


def mass_action_factors(source: Complex) -> tuple[Factor, ...]:
    return tuple(Factor("ff", (n,), c) for n, c in source.terms)


@dataclass(frozen=True)
class RateLaw:
    kappa: Fraction
    beta: Fraction = Fraction(0)
    factors: tuple[Factor, ...] = ()
    mass_action: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kappa", Fraction(self.kappa))
        object.__setattr__(self, "beta", Fraction(self.beta))
        object.__setattr__(self, "factors", tuple(self.factors))
        if self.kappa <= 0:
            raise NetworkError("rate constant kappa must be positive")
        seen: set[str] = set()
        for f in self.factors:
            for s in f.species:
                if s in seen:
                    raise NetworkError(f"species {s} appears in more than one factor")
                seen.add(s)

    @property
    def species(self) -> tuple[str, ...]:
        return tuple(s for f in self.factors for s in f.species)

    def factor_for(self, name: str) -> Factor | None:
        for f in self.factors:
            if name in f.species:
                return f
        return None


@dataclass(frozen=True)
class Reaction:
    id: str
    source: Complex
    target: Complex
    rate_law: RateLaw

    def __post_init__(self):
        if self.source == self.target:
            raise NetworkError(f"reaction {self.id}: source equals target (self-loop)")
        for name, c in self.source.terms:
            f = self.rate_law.factor_for(name)
            if f is None or not f.vanishes_below(c):
                raise NetworkError(
                    f"reaction {self.id}: rate law does not vanish when reactant {name} is depleted"
                )

    @classmethod
    def mass_action(cls, id: str, source: Complex, target: Complex, kappa, beta=0) -> "Reaction":
        law = RateLaw(Fraction(kappa), Fraction(beta), mass_action_factors(source), True)
        return cls(id, source, target, law)

    @property
    def kappa(self) -> Fraction:
        return self.rate_law.kappa

    @property
    def beta(self) -> Fraction:
        return self.rate_law.beta

    @property
    def factors(self) -> tuple[Factor, ...]:
        return self.rate_law.factors


def _species_key(s: Species):
    return (s.alpha > 0, s.name)


@dataclass(frozen=True)
class ReactionNetwork:
    """Species (canonically ordered: low-copy first, then by name) and reactions."""

    species: tuple[Species, ...]
    reactions: tuple[Reaction, ...] = ()
    _index: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        names = [s.name for s in self.species]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise NetworkError(f"duplicate species: {', '.join(sorted(dup))}")
        object.__setattr__(self, "species", tuple(sorted(self.species, key=_species_key)))
        object.__setattr__(self, "reactions", tuple(self.reactions))
        object.__setattr__(self, "_index", {s.name: i for i, s in enumerate(self.species)})
        ids = [r.id for r in self.reactions]
        dup = {i for i in ids if ids.count(i) > 1}
        if dup:
            raise NetworkError(f"duplicate reaction ids: {', '.join(sorted(dup))}")
        for r in self.reactions:
            for name in r.source.species + r.target.species + r.rate_law.species:
                if name not in self._index:
                    raise NetworkError(f"reaction {r.id}: undeclared species {name}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.species)

    @property
    def low(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.species if s.is_low)

    @property
    def high(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.species if not s.is_low)

    @property
    def reaction_ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.reactions)

    def index(self, name: str) -> int:
        return self._index[name]

    def species_by_name(self, name: str) -> Species:
        return self.species[self._index[name]]

    def reaction(self, rid: str) -> Reaction:
        for r in self.reactions:
            if r.id == rid:
                return r
        raise KeyError(f"unknown reaction id {rid!r}")

    def stoichiometry(self) -> np.ndarray:
        """Net-change matrix, shape (n_species, n_reactions)."""
        out = np.zeros((len(self.species), len(self.reactions)), dtype=np.int64)
        for j, r in enumerate(self.reactions):
            out[:, j] = r.target.vector(self.names) - r.source.vector(self.names)
        return out

    def initial_counts(self, N: float = 1) -> np.ndarray:
        return np.array([float(N) ** float(s.alpha) * float(s.z0) for s in self.species])

    def __str__(self) -> str:
        return serialize_network(self)


# --- parsing --------------------------------------------------------------------------

_SPECIES_RE = re.compile(r"^species\s+(?P<name>\S+)(?P<rest>.*)$")
_REACTION_RE = re.compile(
    r"^reaction\s+(?P<id>[^\s:]+)\s*:\s*(?P<src>[^>]*?)\s*->\s*(?P<tgt>.*?)(?P<params>(?:\s+\w+\s*=\s*\S+)*)\s*$"
)
_TERM_RE = re.compile(rf"^(?P<coef>\d*)\s*(?P<name>{_NAME})$")
_PARAM_RE = re.compile(r"(\w+)\s*=\s*(\S+)")
_FACTOR_RE = re.compile(r"^(?P<kind>\w+)\((?P<args>[^()]*)\)$")


def _parse_complex(text: str, lineno: int, col: int) -> Complex:
    text = text.strip()
    if text in ("0", "∅"):
        return Complex()
    terms = []
    for part in text.split("+"):
        m = _TERM_RE.match(part.strip())
        if not m:
            raise NetworkSyntaxError(f"bad complex term {part.strip()!r}", lineno, col)
        coef = int(m.group("coef")) if m.group("coef") else 1
        terms.append((m.group("name"), coef))
    return Complex(tuple(terms))


def _parse_factor(text: str, lineno: int, col: int) -> Factor:
    m = _FACTOR_RE.match(text.strip())
    if not m:
        raise NetworkSyntaxError(f"bad factor {text!r}", lineno, col)
    kind, args = m.group("kind"), [a.strip() for a in m.group("args").split(",")]
    try:
        if kind == "ff":
            return Factor("ff", (args[0],), int(args[1]) if len(args) > 1 else 1)
        if kind == "pow":
            if len(args) != 2:
                raise NetworkSyntaxError("pow needs (species,degree)", lineno, col)
            return Factor("pow", (args[0],), int(args[1]))
        if kind == "hill":
            if len(args) != 2:
                raise NetworkSyntaxError("hill needs (species,c)", lineno, col)
            return Factor("hill", (args[0],), 1, parse_number(args[1]))
        if kind == "sqrt":
            return Factor("sqrt", (args[0],))
        if kind == "log1p":
            return Factor("log1p", tuple(s.strip() for s in args[0].split("*")))
    except NetworkSyntaxError:
        raise
    except (ValueError, IndexError) as exc:
        raise NetworkSyntaxError(f"bad factor {text!r}: {exc}", lineno, col) from exc
    raise NetworkSyntaxError(f"unknown factor kind {kind!r}", lineno, col)


def _params(text: str, base_col: int, lineno: int, allowed: set[str]) -> dict[str, tuple[str, int]]:
    out: dict[str, tuple[str, int]] = {}
    pos = 0
    for m in _PARAM_RE.finditer(text):
        gap = text[pos:m.start()]
        if gap.strip():
            raise NetworkSyntaxError(f"unexpected text {gap.strip()!r}", lineno, base_col + pos + 1)
        key = m.group(1)
        if key not in allowed:
            raise NetworkSyntaxError(f"unknown parameter {key!r}", lineno, base_col + m.start() + 1)
        if key in out:
            raise NetworkSyntaxError(f"repeated parameter {key!r}", lineno, base_col + m.start() + 1)
        out[key] = (m.group(2), base_col + m.start(2) + 1)
        pos = m.end()
    if text[pos:].strip():
        raise NetworkSyntaxError(f"unexpected text {text[pos:].strip()!r}", lineno, base_col + pos + 1)
    return out


def _number(value: tuple[str, int], what: str, lineno: int) -> Fraction:
    try:
        return parse_number(value[0])
    except (ValueError, ZeroDivisionError) as exc:
        raise NetworkSyntaxError(f"bad {what} {value[0]!r}", lineno, value[1]) from exc


def parse_network(text: str) -> ReactionNetwork:
    species: list[Species] = []
    reactions: list[Reaction] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        indent = len(line) - len(line.lstrip())
        line = line.strip()
        keyword = line.split(None, 1)[0]
        if keyword == "species":
            m = _SPECIES_RE.match(line)
            if not m:
                raise NetworkSyntaxError("expected 'species <name> alpha=.. z0=..'", lineno, indent + 1)
            name = m.group("name")
            if not _NAME_RE.match(name):
                raise NetworkSyntaxError(f"bad species name {name!r}", lineno, indent + m.start("name") + 1)
            p = _params(m.group("rest"), indent + m.start("rest"), lineno, {"alpha", "z0"})
            for key in ("alpha", "z0"):
                if key not in p:
                    raise NetworkSyntaxError(f"species {name}: missing {key}=", lineno, indent + 1)
            alpha = _number(p["alpha"], "alpha", lineno)
            z0 = _number(p["z0"], "z0", lineno)
            try:
                species.append(Species(name, alpha, z0))
            except NetworkError as exc:
                raise NetworkError(f"line {lineno}: {exc}") from exc
        elif keyword == "reaction":
            m = _REACTION_RE.match(line)
            if not m:
                raise NetworkSyntaxError("expected 'reaction <id>: <complex> -> <complex> kappa=.. beta=..'",
                                         lineno, indent + 1)
            rid = m.group("id")
            src = _parse_complex(m.group("src"), lineno, indent + m.start("src") + 1)
            tgt = _parse_complex(m.group("tgt"), lineno, indent + m.start("tgt") + 1)
            p = _params(m.group("params"), indent + m.start("params"), lineno, {"kappa", "beta", "law"})
            if "kappa" not in p:
                raise NetworkSyntaxError(f"reaction {rid}: missing kappa=", lineno, indent + 1)
            kappa = _number(p["kappa"], "kappa", lineno)
            beta = _number(p["beta"], "beta", lineno) if "beta" in p else Fraction(0)
            if kappa <= 0:
                raise NetworkError(f"line {lineno}: reaction {rid}: kappa must be positive")
            try:
                if "law" in p:
                    law_text, law_col = p["law"]
                    factors = tuple(_parse_factor(f, lineno, law_col) for f in law_text.split(";") if f)
                    law = RateLaw(kappa, beta, factors, False)
                else:
                    law = RateLaw(kappa, beta, mass_action_factors(src), True)
                reactions.append(Reaction(rid, src, tgt, law))
            except NetworkSyntaxError:
                raise
            except NetworkError as exc:
                raise NetworkError(f"line {lineno}: {exc}") from exc
        else:
            raise NetworkSyntaxError(f"unknown keyword {keyword!r}", lineno, indent + 1)
    return ReactionNetwork(tuple(species), tuple(reactions))


def load_network(path) -> ReactionNetwork:
    with open(path, encoding="utf-8") as fh:
        return parse_network(fh.read())


def serialize_network(net: ReactionNetwork) -> str:
    lines = []
    for s in net.species:
        lines.append(f"species {s.name} alpha={format_number(s.alpha)} z0={format_number(s.z0)}")
    for r in net.reactions:
        law = r.rate_law
        text = (f"reaction {r.id}: {r.source.format(net.names)} -> {r.target.format(net.names)} "
                f"kappa={format_number(law.kappa)} beta={format_number(law.beta)}")
        if not law.mass_action:
            text += " law=" + ";".join(f.spec() for f in law.factors)
        lines.append(text)
    return "\n".join(lines) + "\n"


# --- evaluation -----------------------------------------------------------------------

def _count_lookup(net: ReactionNetwork, x) -> Mapping[str, float]:
    if isinstance(x, Mapping):
        return x
    x = list(x)
    if len(x) != len(net.species):
        raise ValueError(f"state has {len(x)} entries, network has {len(net.species)} species")
    return dict(zip(net.names, x))


def evaluate_intensity(net: ReactionNetwork, k: str, x) -> float:
    """Unscaled intensity lambda_k(x) at integer counts ``x`` (no N factors)."""
    r = net.reaction(k)
    counts = _count_lookup(net, x)
    if r.rate_law.mass_action:
        prod = 1
        for name, c in r.source.terms:
            n = int(counts[name])
            if n < c:
                return 0.0
            prod *= math.perm(n, c)
        return float(r.kappa * prod)
    value = float(r.kappa)
    for f in r.factors:
        value *= float(f(*(counts[s] for s in f.species)))
    return value


def conservation_laws(net: ReactionNetwork) -> list[tuple[int, ...]]:
    """Integer basis of {w : w . (y'_k - y_k) = 0 for all k}, in reduced row-echelon order."""
    import sympy

    n = len(net.species)
    if not net.reactions:
        return [tuple(int(i == j) for j in range(n)) for i in range(n)]
    S = sympy.Matrix(net.stoichiometry().T.tolist())
    basis = []
    for v in S.nullspace():
        den = sympy.ilcm(*[sympy.fraction(e)[1] for e in v])
        w = [int(e * den) for e in v]
        g = math.gcd(*w)
        w = [e // g for e in w]
        if next(e for e in w if e != 0) < 0:
            w = [-e for e in w]
        basis.append(tuple(w))
    return sorted(basis, reverse=True)
