"""Command line: mssr reduce | simulate | cme | converge | lemmas."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from fractions import Fraction
from importlib import resources
from pathlib import Path

from .analysis import EventSet, _jsonable, convergence_sweep, emit_report, lemma_harness
from .cme import build_generator, enumerate_states, stationary_solve, transient_solve
from .network import NetworkError, ReactionNetwork, format_number, load_network, serialize_network
from .projection import build_projected_system
from .scaling import ConditionError, in_compact_set, scale_network, validate_conditions
from .ssa import SimulationConfig, empirical_distribution, simulate_original, simulate_reduced


def _load(path: str) -> ReactionNetwork:
    """Load a network file; bare names of bundled examples (e.g. ``futile.net``) also resolve."""
    p = Path(path)
    if not p.exists():
        bundled = resources.files("mssr") / "data" / p.name
        if bundled.is_file():
            return load_network(bundled)
    return load_network(p)


def _dump(data, out: str | None) -> None:
    text = json.dumps(_jsonable(data), sort_keys=True, indent=2) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _q(x: Fraction | None) -> str | None:
    return None if x is None else format_number(x)


def cmd_reduce(args) -> int:
    net = _load(args.network)
    sys_ = scale_network(net, args.N)
    report = validate_conditions(sys_)
    data = {
        "N": args.N,
        "theta0": _q(sys_.theta0),
        "gamma": _q(sys_.gamma),
        "orders": {k: _q(v) if v is not None else "-inf" for k, v in sys_.orders.items()},
        "R0": [k for k in net.reaction_ids if k in sys_.dominant],
        "R0c": [k for k in net.reaction_ids if k not in sys_.dominant],
        "conditions": report.to_dict(),
    }
    if report.ok:
        proj = build_projected_system(sys_)
        M = args.N ** args.rho
        data["limits"] = {k: _q(v) for k, v in proj.limits.items()}
        data["reduced"] = [
            {"id": r.id, "source": r.source.format(proj.names), "target": r.target.format(proj.names),
             "kappa": _q(r.kappa),
             "provenance": [{"reaction": m[0], "kappa": _q(m[1]), "s": _q(m[2])} for m in r.members]}
            for r in proj.reactions
        ]
        data["warnings"] = list(proj.warnings)
        data["compact_set"] = {"rho": args.rho, "M": M,
                               "initial_state_inside": in_compact_set(sys_, sys_.initial_state(), M)}
        text = serialize_network(proj.to_network())
        data["reduced_network"] = text
        if args.emit_net:
            Path(args.emit_net).write_text(text, encoding="utf-8")
    _dump(data, args.out)
    return 0 if report.ok else 1


def _reduced_or_same(net: ReactionNetwork):
    if all(s.alpha == 0 for s in net.species) and all(r.beta == 0 for r in net.reactions):
        return net
    return build_projected_system(scale_network(net, 1)).to_network()


def _histograms(ens, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["species", "value", "probability"])
        for name, scale in zip(ens.species, ens.scale):
            if scale != 1.0:
                continue
            dist = empirical_distribution(ens, name)
            for (v,), p in zip(dist.states.tolist(), dist.probs):
                w.writerow([name, v, repr(float(p))])


def cmd_simulate(args) -> int:
    net = _load(args.network)
    record = tuple(args.record.split(",")) if args.record else None
    exit_M = args.N ** args.exit_rho if args.exit_rho is not None else None
    cfg = SimulationConfig(T=args.T, samples=args.samples, base_seed=args.seed, record=record,
                           exit_M=None if args.reduced else exit_M, max_jumps=args.max_jumps,
                           workers=args.workers)
    if args.reduced:
        ens = simulate_reduced(build_projected_system(scale_network(net, args.N)), cfg)
    else:
        ens = simulate_original(scale_network(net, args.N), cfg)
    summary = ens.summary()
    if exit_M is not None and not args.reduced:
        summary["exit_M"] = exit_M
    if args.hist:
        _histograms(ens, args.hist)
        summary["histograms"] = args.hist
    _dump(summary, args.out)
    return 0


def _parse_init(text: str, names) -> dict[str, int]:
    vals = {}
    for part in text.split(","):
        if not part.strip():
            continue
        k, _, v = part.partition("=")
        vals[k.strip()] = int(v)
    unknown = set(vals) - set(names)
    if unknown:
        raise ValueError(f"unknown species in --init: {sorted(unknown)}")
    return vals


def cmd_cme(args) -> int:
    net = _reduced_or_same(_load(args.network))
    z0 = [int(s.z0) for s in net.species]
    if args.init:
        given = _parse_init(args.init, net.names)
        z0 = [given.get(n, v) for n, v in zip(net.names, z0)]
    if args.box is not None:
        enum = enumerate_states(net, z0, box=args.box)
    else:
        enum = enumerate_states(net, z0, truncation="slice" if args.auto_slice else "auto")
    gen = build_generator(net, enum)
    if args.stationary:
        dist = stationary_solve(gen)
        cert = {"mode": "stationary", "residual": dist.meta["residual"], "leaked_mass": 0.0,
                "truncation": enum.truncation, "states": len(enum),
                "boundary_outflow": dist.meta["boundary_outflow"]}
    else:
        dist = transient_solve(gen, z0, args.T)
        cert = {"mode": "transient", "t": args.T, "leaked_mass": dist.leaked, "truncation": enum.truncation,
                "states": len(enum), "residual": None}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(dist.species) + ["probability"])
    for state, p in zip(dist.states.tolist(), dist.probs):
        w.writerow(state + [repr(float(p))])
    if args.out:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
    else:
        sys.stdout.write(buf.getvalue())
    text = json.dumps(_jsonable(cert), sort_keys=True, indent=2) + "\n"
    if args.certificate:
        Path(args.certificate).write_text(text, encoding="utf-8")
    else:
        sys.stderr.write(text)
    return 0


def cmd_converge(args) -> int:
    net = _load(args.network)
    grid = [int(float(v)) for v in args.grid.split(",")]
    report = convergence_sweep(net, EventSet.parse(args.event), args.t, grid, args.samples, args.seed,
                               method=args.method, workers=args.workers)
    text = emit_report(report, "json", args.out)
    if not args.out:
        sys.stdout.write(text)
    if args.csv:
        emit_report(report, "csv", args.csv)
    return 0


def cmd_lemmas(args) -> int:
    net = _load(args.network)
    grid = [int(float(v)) for v in args.grid.split(",")]
    options = {
        "intensity-gap": {"grid": [N for N in grid if N >= 1000] or grid, "rho": args.rho,
                          "n_states": args.states, "seed": args.seed},
        "jump-moment": {"samples": args.samples, "seed": args.seed},
        "exit-probability": {"grid": grid, "rho": args.rho, "T": args.exit_T, "samples": args.samples,
                             "seed": args.seed},
    }
    result = lemma_harness(net, args.which, **options)
    _dump(result, args.out)
    return 0 if result["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mssr", description="Reduce, simulate and solve multiscale reaction networks.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("reduce", help="orders, dominant reactions, condition report and reduced network")
    r.add_argument("network")
    r.add_argument("--N", type=int, required=True)
    r.add_argument("--rho", type=float, default=0.3)
    r.add_argument("--out")
    r.add_argument("--emit-net", help="write the reduced network file here")
    r.set_defaults(func=cmd_reduce)

    s = sub.add_parser("simulate", help="SSA ensemble of the original or reduced system")
    s.add_argument("network")
    s.add_argument("--N", type=int, default=1)
    s.add_argument("--T", type=float, required=True)
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--reduced", action="store_true")
    s.add_argument("--record")
    s.add_argument("--exit-rho", type=float)
    s.add_argument("--max-jumps", type=int, default=10**8)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--hist", help="CSV of low-species histograms at T")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("cme", help="transient or stationary master-equation solution of the reduced system")
    c.add_argument("network")
    c.add_argument("--T", type=float, default=0.0)
    g = c.add_mutually_exclusive_group()
    g.add_argument("--box", type=int)
    g.add_argument("--auto-slice", action="store_true")
    c.add_argument("--init", default="")
    c.add_argument("--stationary", action="store_true")
    c.add_argument("--out", help="pmf CSV (default stdout)")
    c.add_argument("--certificate", help="certificate JSON (default stderr)")
    c.set_defaults(func=cmd_cme)

    v = sub.add_parser("converge", help="estimate d(N) over an N grid and fit its decay exponent")
    v.add_argument("network")
    v.add_argument("--event", required=True)
    v.add_argument("--t", type=float, required=True)
    v.add_argument("--grid", default="100,1000,10000")
    v.add_argument("--samples", type=int, default=100_000)
    v.add_argument("--seed", type=int, default=7)
    v.add_argument("--method", choices=["coupled", "independent"], default="coupled")
    v.add_argument("--workers", type=int, default=1)
    v.add_argument("--out")
    v.add_argument("--csv")
    v.set_defaults(func=cmd_converge)

    m = sub.add_parser("lemmas", help="intensity-gap, jump-moment and exit-probability checks")
    m.add_argument("network")
    m.add_argument("--which", default="all", choices=["all", "intensity-gap", "jump-moment", "exit-probability"])
    m.add_argument("--grid", default="100,1000,10000")
    m.add_argument("--rho", type=float, default=0.3)
    m.add_argument("--states", type=int, default=10_000)
    m.add_argument("--samples", type=int, default=10_000)
    m.add_argument("--exit-T", type=float, default=10.0)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out")
    m.set_defaults(func=cmd_lemmas)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (NetworkError, ConditionError, ValueError, KeyError, OSError) as exc:
        print(f"mssr: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
