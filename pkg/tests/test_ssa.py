import math

import numpy as np
import pytest

from mssr.analysis import total_variation
from mssr.cme import build_generator, enumerate_states, transient_solve
from mssr.distribution import DistributionVector
from mssr.network import parse_network
from mssr.projection import build_projected_system
from mssr.scaling import scale_network
from mssr.ssa import (SimulationConfig, empirical_distribution, exit_probability_estimate, jump_moment_estimate,
                      simulate_coupled, simulate_network, simulate_original, simulate_reduced, trajectory_rng)
from scipy.stats import poisson


def poisson_process(k=3.0):
    return parse_network(f"species X alpha=0 z0=0\nreaction in: 0 -> X kappa={k}\n")


def test_same_seed_same_paths(futile):
    sys = scale_network(futile, 100)
    cfg = SimulationConfig(T=5.0, samples=50, base_seed=9, times=(1.0, 2.5))
    a, b = simulate_original(sys, cfg), simulate_original(sys, cfg)
    assert np.array_equal(a.counts, b.counts) and np.array_equal(a.jumps, b.jumps)
    c = simulate_original(sys, SimulationConfig(T=5.0, samples=50, base_seed=10, times=(1.0, 2.5)))
    assert not np.array_equal(a.counts, c.counts)


def test_trajectory_streams_are_independent_of_batch():
    a = trajectory_rng(5, 3).random(4)
    assert np.array_equal(a, trajectory_rng(5, 3).random(4))
    assert not np.array_equal(a, trajectory_rng(5, 4).random(4))
    net = poisson_process()
    full = simulate_network(net, SimulationConfig(T=2.0, samples=20, base_seed=1))
    threaded = simulate_network(net, SimulationConfig(T=2.0, samples=20, base_seed=1, workers=4))
    assert np.array_equal(full.counts, threaded.counts)


def test_absorbing_chain_stops():
    net = parse_network("species X alpha=0 z0=4\nreaction out: X -> 0 kappa=1\n")
    ens = simulate_network(net, SimulationConfig(T=100.0, samples=200, base_seed=0))
    assert (ens.counts[:, -1, 0] == 0).all() and (ens.jumps[:, -1] == 4).all()


def test_poisson_process_moments():
    k, t, n = 3.0, 2.0, 20_000
    ens = simulate_network(poisson_process(k), SimulationConfig(T=t, samples=n, base_seed=2))
    x = ens.counts[:, -1, 0]
    assert abs(x.mean() - k * t) <= 4 * math.sqrt(k * t / n)
    mean2, se2 = jump_moment_estimate(ens, 2)
    assert abs(mean2 - (k * t + (k * t) ** 2)) <= 4 * se2


def test_reduced_futile_is_poisson(futile):
    proj = build_projected_system(scale_network(futile, 10_000))
    ens = simulate_reduced(proj, SimulationConfig(T=100.0, samples=100_000, base_seed=3))
    emp = empirical_distribution(ens, "S1")
    k = np.arange(40)
    ref = DistributionVector(("S1",), k.reshape(-1, 1), poisson.pmf(k, 2.2))
    assert total_variation(emp, ref) <= 0.01


def test_two_state_chain_matches_cme():
    net = parse_network("species A alpha=0 z0=3\nspecies B alpha=0 z0=0\n"
                        "reaction f: A -> B kappa=2\nreaction b: B -> A kappa=1\n")
    n, t = 40_000, 0.7
    ens = simulate_network(net, SimulationConfig(T=t, samples=n, base_seed=4))
    exact = transient_solve(build_generator(net, enumerate_states(net)), (3, 0), t)
    assert total_variation(empirical_distribution(ens), exact) <= 3 * math.sqrt(1 / (4 * n))


def test_yeast_support_and_lattice(yeast):
    sys = scale_network(yeast, 1000)
    ens = simulate_original(sys, SimulationConfig(T=2.0, samples=200, base_seed=5))
    assert ens.counts.dtype.kind == "i"
    g = ens.species.index("G")
    gb = ens.species.index("G_bg")
    assert set(np.unique(ens.counts[:, -1, g] + ens.counts[:, -1, gb])) == {10}
    hi = [i for i, s in enumerate(ens.scale) if s != 1.0]
    scaled = ens.scaled()[:, hi]
    assert np.allclose(scaled * 1000, np.round(scaled * 1000))


def test_horizon_zero_returns_initial(futile):
    sys = scale_network(futile, 100)
    ens = simulate_original(sys, SimulationConfig(T=0.0, samples=10, base_seed=0))
    init = sys.initial_state()
    assert np.allclose(ens.terminal[0], init.low + tuple(init.high))
    assert (ens.jumps == 0).all()


def test_conservation_along_paths():
    net = parse_network("species A alpha=0 z0=5\nspecies B alpha=0 z0=2\n"
                        "reaction f: A + B -> 2 B kappa=1\nreaction b: B -> A kappa=1\n")
    ens = simulate_network(net, SimulationConfig(T=3.0, samples=300, base_seed=6, times=(0.5, 1.0, 2.0)))
    assert (ens.counts.sum(axis=2) == 7).all()


def test_max_jumps_flags_trajectory():
    with pytest.warns(UserWarning, match="max_jumps"):
        ens = simulate_network(poisson_process(100.0), SimulationConfig(T=10.0, samples=5, max_jumps=10))
    assert ens.capped.all()
    with pytest.raises(ValueError):
        empirical_distribution(ens)


def test_exit_probability_extremes(futile):
    sys = scale_network(futile, 1000)
    est = exit_probability_estimate(sys, SimulationConfig(T=5.0, samples=200, exit_M=1e9))
    assert est.p == 0 and est.ci_low == 0
    est = exit_probability_estimate(sys, SimulationConfig(T=0.0, samples=50, exit_M=5.0))
    assert est.exits == 0


def test_coupled_marginals_match_independent_runs(futile):
    sys = scale_network(futile, 100)
    cfg = SimulationConfig(T=5.0, samples=20_000, base_seed=8, record=("S1",))
    x, z = simulate_coupled(sys, cfg)
    ind_x = simulate_original(sys, SimulationConfig(T=5.0, samples=20_000, base_seed=99, record=("S1",)))
    ind_z = simulate_reduced(build_projected_system(sys), SimulationConfig(T=5.0, samples=20_000, base_seed=98))
    for a, b in ((x, ind_x), (z, ind_z)):
        ea, eb = empirical_distribution(a, "S1"), empirical_distribution(b, "S1")
        assert total_variation(ea, eb) <= 0.03
    assert z.species == ("S1",)
