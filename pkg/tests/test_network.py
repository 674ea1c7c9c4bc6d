import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from mssr.network import (Complex, Factor, NetworkError, NetworkSyntaxError, evaluate_intensity,
                          conservation_laws, parse_network, serialize_network)

EXAMPLE = """
species A alpha=0 z0=2
species B alpha=0 z0=2
species C alpha=1 z0=3
reaction r1: A + B -> 2 B kappa=1 beta=-1
reaction r2: 2 B -> A + B kappa=2 beta=0
reaction r3: A + C -> 2 C kappa=3 beta=0
reaction r4: 3 C -> A kappa=4 beta=-2
reaction r5: A -> 3 C kappa=5 beta=1
reaction r6: B -> 0 kappa=6 beta=1
"""


def test_parse_small_two_scale_network():
    net = parse_network(EXAMPLE)
    assert len(net.species) == 3
    assert len(net.reactions) == 6
    assert net.low == ("A", "B") and net.high == ("C",)
    r4 = net.reaction("r4")
    assert r4.source == Complex.of(C=3) and r4.beta == -2


def test_one_species_no_reactions():
    net = parse_network("species X alpha=0 z0=0\n")
    assert net.reactions == () and net.names == ("X",)


def test_self_loop_rejected():
    with pytest.raises(NetworkError, match="self-loop"):
        parse_network("species A alpha=0 z0=1\nreaction r: 2A -> 2A kappa=1 beta=0\n")


@pytest.mark.parametrize("text, line, col", [
    ("species A alpha=0 z0=1\nreaction r1 A -> 0 kappa=1\n", 2, 1),
    ("species A alpha=0 z0=1\nreaction r1: A -> 0 kappa=x\n", 2, 27),
    ("species A alpha=0 z0=1\nreaction r1: A -> 0 kappa=1 foo=2\n", 2, 29),
    ("speces A alpha=0 z0=1\n", 1, 1),
])
def test_syntax_errors_carry_position(text, line, col):
    with pytest.raises(NetworkSyntaxError) as info:
        parse_network(text)
    assert (info.value.line, info.value.column) == (line, col)


@pytest.mark.parametrize("text, match", [
    ("species A alpha=0 z0=1\nspecies A alpha=0 z0=2\n", "duplicate species"),
    ("species A alpha=0 z0=1\nreaction r1: A -> B kappa=1\n", "undeclared"),
    ("species A alpha=0 z0=1\nreaction r1: A -> 0 kappa=-1\n", "positive"),
    ("species A alpha=-1 z0=1\n", "alpha"),
    ("species A alpha=0 z0=-1\n", "z0"),
    ("species A alpha=0 z0=1.5\n", "integer"),
    ("species A alpha=0 z0=1\nreaction r1: 2 A -> 0 kappa=1 law=sqrt(A)\n", "depleted"),
])
def test_structural_errors(text, match):
    with pytest.raises(NetworkError, match=match):
        parse_network(text)


def test_round_trip_bundled(futile, yeast, p53, lotka, example):
    for net in (futile, yeast, p53, lotka, example):
        text = serialize_network(net)
        again = parse_network(text)
        assert again == net
        assert serialize_network(again) == text


def test_round_trip_random_networks():
    rng = np.random.default_rng(1)
    names = ["A", "B", "C", "D"]
    for _ in range(50):
        lines = []
        for n in names:
            alpha = rng.choice(["0", "1", "1/2", "2"])
            z0 = str(rng.integers(0, 5)) if alpha == "0" else rng.choice(["1", "0.5", "3"])
            lines.append(f"species {n} alpha={alpha} z0={z0}")
        for k in range(int(rng.integers(0, 6))):
            while True:
                src = {n: int(rng.integers(0, 3)) for n in names}
                tgt = {n: int(rng.integers(0, 3)) for n in names}
                if src != tgt:
                    break
            fmt = lambda d: " + ".join(f"{c} {n}" for n, c in d.items() if c) or "0"
            lines.append(f"reaction r{k}: {fmt(src)} -> {fmt(tgt)} kappa={rng.integers(1, 9)}.25 "
                         f"beta={rng.integers(-2, 2)}")
        net = parse_network("\n".join(lines))
        assert parse_network(serialize_network(net)) == net


def test_intensity_examples(futile, p53):
    x = {n: 0 for n in futile.names}
    x.update(S1=2, S2=200)
    assert evaluate_intensity(futile, "r1", x) == 400
    net = parse_network("species A alpha=0 z0=1\nreaction r: 2 A -> 0 kappa=1\n")
    assert evaluate_intensity(net, "r", [1]) == 0
    x = {n: 0 for n in p53.names}
    x.update(P0=5, S=10)
    assert evaluate_intensity(p53, "r1", x) == pytest.approx(1.1 * 5 * 10 / 14.7, rel=1e-12)
    assert evaluate_intensity(p53, "r1", x) == pytest.approx(3.7415, abs=1e-4)
    with pytest.raises(KeyError):
        evaluate_intensity(futile, "nope", x)


def test_mass_action_matches_factorial_quotient():
    net = parse_network("species A alpha=0 z0=0\nspecies B alpha=0 z0=0\n"
                        "reaction r: 3 A + 2 B -> 0 kappa=7/3 beta=0\n")
    for a, b in itertools.product(range(21), repeat=2):
        want = Fraction(7, 3) * (math.factorial(a) // math.factorial(a - 3) if a >= 3 else 0) \
            * (math.factorial(b) // math.factorial(b - 2) if b >= 2 else 0)
        assert evaluate_intensity(net, "r", [a, b]) == float(want)


@pytest.mark.parametrize("factor", [
    Factor("ff", ("A",), 3), Factor("pow", ("A",), 2), Factor("hill", ("A",), 1, Fraction(47, 10)),
    Factor("sqrt", ("A",)), Factor("log1p", ("A", "B")),
])
def test_catalog_factors_monotone(factor):
    xs = np.arange(0, 60)
    other = np.full_like(xs, 3)
    vals = factor(xs, other) if len(factor.species) == 2 else factor(xs)
    assert np.all(np.diff(vals) >= 0) and np.all(vals >= 0)


def test_conservation_laws_examples():
    g = parse_network("species G alpha=0 z0=5\nspecies Gbg alpha=0 z0=5\n"
                      "reaction a: G -> Gbg kappa=1\nreaction b: Gbg -> G kappa=1\n")
    assert conservation_laws(g) == [(1, 1)]
    bd = parse_network("species S alpha=0 z0=0\nreaction a: S -> 0 kappa=1\nreaction b: 0 -> S kappa=1\n")
    assert conservation_laws(bd) == []
    ab = parse_network("species A alpha=0 z0=1\nspecies B alpha=0 z0=1\n"
                       "reaction a: A + B -> 2 B kappa=1\nreaction b: B -> A kappa=1\n")
    assert conservation_laws(ab) == [(1, 1)]


def test_conservation_vectors_annihilate_stoichiometry(futile, yeast, p53, lotka):
    for net in (futile, yeast, p53, lotka):
        S = net.stoichiometry()
        for w in conservation_laws(net):
            assert not np.any(np.array(w) @ S)
