"""End-to-end acceptance checks; each test prints one PASS/FAIL line."""

import json
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy.linalg import expm
from scipy.stats import poisson

from conftest import bundled
from mssr.analysis import convergence_sweep, lemma_harness, total_variation
from mssr.cli import main
from mssr.cme import birth_death_reference, build_generator, enumerate_states, stationary_solve, transient_solve
from mssr.distribution import DistributionVector
from mssr.projection import build_projected_system
from mssr.scaling import classify_reactions, scale_network
from mssr.ssa import SimulationConfig, empirical_distribution, simulate_original


@pytest.fixture
def verdict(pytestconfig):
    capman = pytestconfig.pluginmanager.getplugin("capturemanager")

    def emit(name, ok, detail):
        with capman.global_and_fixture_disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
        assert ok, detail

    return emit


def _reduced_table(proj):
    return [(r.source.format(proj.names), r.target.format(proj.names), r.kappa) for r in proj.reactions]


def test_criterion_1_projection_example(verdict, tmp_path):
    start = time.perf_counter()
    out = tmp_path / "reduce.json"
    code = main(["reduce", "projection_example.net", "--N", "1000", "--out", str(out)])
    data = json.loads(out.read_text())
    proj = build_projected_system(scale_network(bundled("projection_example.net"), 1000))
    elapsed = time.perf_counter() - start
    k = {i: Fraction(i) for i in range(1, 7)}
    want = [("A", "0", 3 * k[3] + k[5]), ("0", "A", 27 * k[4]), ("B", "0", k[6])]
    s_values = [proj.limits[r] for r in ("r3", "r4", "r5", "r6")]
    cli_kappas = [Fraction(r["kappa"]) for r in data["reduced"]]
    ok = (code == 0 and _reduced_table(proj) == want and s_values == [3, 27, 1, 1]
          and cli_kappas == [w[2] for w in want] and elapsed < 1.0)
    verdict("criterion 1 (projection example)", ok,
            f"reduced={[(a, b, str(c)) for a, b, c in _reduced_table(proj)]} s={[str(s) for s in s_values]} "
            f"time={elapsed:.3f}s")


def test_criterion_2_futile_classification(verdict):
    start = time.perf_counter()
    sys = scale_network(bundled("futile.net"), 10_000)
    _, minor = classify_reactions(sys)
    proj = build_projected_system(sys)
    elapsed = time.perf_counter() - start
    want = [("S1", "0", Fraction(1)), ("0", "S1", Fraction(11, 5)), ("S4", "0", Fraction(1)),
            ("0", "S4", Fraction(11, 10))]
    ok = sys.theta0 == 1 and minor == ("r7", "r8") and _reduced_table(proj) == want and elapsed < 1.0
    verdict("criterion 2 (futile classification)", ok,
            f"theta0={sys.theta0} R0c={minor} reduced={[(a, b, str(c)) for a, b, c in _reduced_table(proj)]} "
            f"time={elapsed:.3f}s")


def test_criterion_3_futile_distribution(verdict):
    sys = scale_network(bundled("futile.net"), 10_000)
    ens = simulate_original(sys, SimulationConfig(T=100.0, samples=100_000, base_seed=31, record=("S1",)))
    ref = birth_death_reference(2.2, 1.0, 2, 100.0, "S1")
    tv = total_variation(empirical_distribution(ens, "S1"), ref)
    verdict("criterion 3 (futile S1 marginal, N=1e4, t=100)", tv <= 0.02, f"TV={tv:.4f} (limit 0.02)")


def test_criterion_4_yeast_distribution(verdict):
    net = bundled("yeast.net")
    sys = scale_network(net, 1000)
    ens = simulate_original(sys, SimulationConfig(T=10.0, samples=100_000, base_seed=41, record=("G_bg",)))
    proj = build_projected_system(sys)
    enum = enumerate_states(proj)
    exact = transient_solve(build_generator(proj, enum), proj.initial_state(), 10.0)
    tv = total_variation(empirical_distribution(ens, "G_bg"), exact.marginal("G_bg"))
    verdict("criterion 4 (yeast G_bg marginal, N=1e3, t=10)", tv <= 0.03 and len(enum) == 11,
            f"TV={tv:.4f} (limit 0.03), CME states={len(enum)}")


@pytest.fixture(scope="module")
def futile_sweep():
    return convergence_sweep(bundled("futile.net"), "S1 in {3,4}", 100.0, [100, 1000, 10_000], 100_000, seed=7)


def test_criterion_5_convergence_trend(verdict, futile_sweep):
    rep = futile_sweep
    nu = rep.fit.nu
    ok = rep.strictly_decreasing(2.0) and rep.fit.reliable and 0 < nu < 1
    verdict("criterion 5 (futile d(N) trend)", ok,
            f"d={[round(v, 5) for v in rep.d]} se={[round(v, 5) for v in rep.stderr]} nu={nu:.3f} "
            f"flatness={rep.flatness():.2f}")


def test_futile_sweep_is_power_law_flat(verdict, futile_sweep):
    flat = futile_sweep.flatness()
    verdict("futile d(N) N^nu flatness", flat < 3, f"max/min of d(N) N^nu = {flat:.2f} (limit 3)")


def test_criterion_6_cme_cross_validation(verdict):
    yeast = build_projected_system(scale_network(bundled("yeast.net"), 1000))
    gen = build_generator(yeast, enumerate_states(yeast))
    p0 = np.zeros(len(gen.enumeration))
    p0[gen.enumeration.index(yeast.initial_state())] = 1.0
    tvs = []
    for t in (1.0, 10.0):
        uni = transient_solve(gen, p0, t).probs
        dense = expm(gen.Q.toarray() * t) @ p0
        tvs.append(0.5 * np.abs(uni - dense).sum())
    futile = build_projected_system(scale_network(bundled("futile.net"), 1000))
    pi = stationary_solve(build_generator(futile, enumerate_states(futile, box=40)))
    s1 = pi.species.index("S1")
    s4 = pi.species.index("S4")
    product = poisson.pmf(pi.states[:, s1], 2.2) * poisson.pmf(pi.states[:, s4], 1.1)
    tv_pi = total_variation(pi, DistributionVector(pi.species, pi.states, product))
    ok = max(tvs) <= 1e-8 and tv_pi <= 1e-6
    verdict("criterion 6 (CME cross-validation)", ok,
            f"yeast TV t=1: {tvs[0]:.2e}, t=10: {tvs[1]:.2e}; futile stationary TV={tv_pi:.2e}")


def test_criterion_7_lemma_harness(verdict):
    gap = {"intensity-gap": {"grid": (1000, 10_000), "rho": 0.3, "n_states": 10_000, "seed": 0}}
    futile = lemma_harness(bundled("futile.net"), "all", **gap,
                           **{"jump-moment": {"times": (1, 10, 100), "samples": 10_000, "seed": 0},
                              "exit-probability": {"grid": (100, 1000, 10_000), "rho": 0.3, "samples": 10_000,
                                                   "seed": 0}})
    lotka = lemma_harness(bundled("lotka.net"), "intensity-gap", **gap)
    exit_p = [row["p"] for row in futile["exit-probability"]["rows"]]
    ok = futile["passed"] and lotka["passed"]
    verdict("criterion 7 (lemma harness)", ok,
            f"futile gap={futile['intensity-gap']['passed']} jump={futile['jump-moment']['passed']} "
            f"exit={futile['exit-probability']['passed']} {exit_p}; lotka gap={lotka['intensity-gap']['passed']}")


def test_criterion_8_p53_stationary(verdict):
    proj = build_projected_system(scale_network(bundled("p53.net"), 1000))
    pi = stationary_solve(build_generator(proj, enumerate_states(proj)))
    P = pi.marginal("P")
    mean = float(P.mean("P"))
    k = P.states[:, 0]
    tv = total_variation(P, DistributionVector(("P",), P.states, poisson.pmf(k, mean)))
    ok = abs(mean - 2.4) <= 0.02 * 2.4 and tv <= 0.01
    verdict("criterion 8 (p53 stationary P marginal)", ok, f"mean={mean:.4f} (2.4 +- 2%), TV to Poisson={tv:.2e}")


def test_criterion_9_determinism(verdict, tmp_path):
    outputs = []
    for run in range(2):
        conv = tmp_path / f"conv{run}.json"
        lem = tmp_path / f"lem{run}.json"
        main(["converge", "futile.net", "--event", "S1 in {3,4}", "--t", "20", "--grid", "100,1000",
              "--samples", "5000", "--seed", "7", "--out", str(conv)])
        main(["lemmas", "futile.net", "--grid", "100,1000", "--states", "1000", "--samples", "2000",
              "--seed", "3", "--out", str(lem)])
        outputs.append((conv.read_bytes(), lem.read_bytes()))
    ok = outputs[0] == outputs[1]
    verdict("criterion 9 (determinism)", ok, f"converge and lemmas reports identical across runs: {ok}")
