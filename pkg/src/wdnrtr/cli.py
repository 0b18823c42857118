"""Command-line entry point: ``wdnrtr {build,solve,simulate-quality,obbt,generate}``.

Exit codes: 0 success, 1 infeasible or no solution found, 2 input error,
3 internal error.  ``WDNRTR_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .bounds import initial_box
from .hydraulics import HydraulicState, fit_network_coefficients, network_analysis
from .network import NetworkError, ProblemConfig, load_network, problem_size, with_initial_concentrations
from .obbt import ObbtInfeasible, tighten_flow_bounds
from .quality import (WARMUP_SOURCE_C, WARMUP_STEPS, simulate_quality, warmup_initial_concentrations,
                      write_trajectory_csv)
from .relaxation import DEFAULT_M, assemble_linear_model, cut_row_count, linear_row_count
from .rtr import STATUS_SOLVED, run_rtr

EXIT_OK, EXIT_INFEASIBLE, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("wdnrtr")


class InputError(Exception):
    """Bad command-line input."""


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_build(args) -> int:
    net = load_network(args.network)
    cont, binary, nonconvex = problem_size(net)
    b = assemble_linear_model(net, initial_box(net, fit_network_coefficients(net)), args.nv, args.nb)
    families: dict[str, int] = {}
    for tag in b.row_tags:
        families[tag] = families.get(tag, 0) + 1
    report = {"continuous": cont, "binary": binary, "nonconvex": nonconvex,
              "linear_rows": linear_row_count(net), "cut_rows": cut_row_count(net, args.m),
              "row_families": dict(sorted(families.items()))}
    print(f"continuous={cont} binary={binary} nonconvex={nonconvex}")
    if args.out:
        (_out_dir(args) / "size.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_solve(args) -> int:
    net = load_network(args.network)
    cfg = ProblemConfig(args.nv, args.nb, args.m, args.eps_tol, args.imax)
    try:
        cfg.validate(net)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    res = run_rtr(net, cfg, threads=args.threads)
    out = _out_dir(args)
    res.write(net, out, record_time=args.record_time)
    if res.best is not None:
        (out / "hydraulics.json").write_text(json.dumps(res.best.hydraulics.to_dict()) + "\n",
                                             encoding="utf-8")
    gap = "n/a" if res.gap is None else f"{res.gap:.2f}%"
    print(f"status={res.status} LB={res.lb} UB={res.ub} gap={gap}")
    return EXIT_OK if res.status == STATUS_SOLVED else EXIT_INFEASIBLE


def _load_hydraulics(args, net) -> HydraulicState:
    if args.hydraulics:
        try:
            d = json.loads(Path(args.hydraulics).read_text(encoding="utf-8"))
            st = HydraulicState.from_dict(d)
        except (OSError, ValueError, KeyError) as exc:
            raise InputError(f"cannot read hydraulic schedule {args.hydraulics}: {exc}") from None
        if st.q.shape != (net.n_p, net.n_t):
            raise InputError(f"hydraulic schedule has flow shape {st.q.shape}, "
                             f"network needs {(net.n_p, net.n_t)}")
        return st
    if args.no_valves:
        return network_analysis(net, fit_network_coefficients(net))
    raise InputError("no hydraulic schedule: pass --hydraulics FILE (e.g. hydraulics.json "
                     "written by 'solve') or --no-valves to compute one without valves")


def cmd_simulate_quality(args) -> int:
    net = load_network(args.network)
    hyd = _load_hydraulics(args, net)
    out = _out_dir(args)
    if args.warmup:
        c0 = warmup_initial_concentrations(net, hyd, WARMUP_STEPS, WARMUP_SOURCE_C)
        with open(out / "c0.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node_id", "c0"])
            for i in range(net.n_n + net.n_0):
                w.writerow([net.node_id(i), repr(float(c0[i]))])
        net = with_initial_concentrations(net, c0)
    if args.source_c is None:
        source_c = np.repeat([[s.c_max] for s in net.source_nodes], net.n_t, axis=1)
    else:
        source_c = args.source_c
    st = simulate_quality(net, hyd, source_c)
    write_trajectory_csv(net, st, out / "trajectory.csv")
    return EXIT_OK


def cmd_obbt(args) -> int:
    net = load_network(args.network)
    coeffs = fit_network_coefficients(net)
    box = initial_box(net, coeffs)
    start = box
    reports = []
    for _ in range(args.sweeps):
        box, rep = tighten_flow_bounds(net, coeffs, box, args.m, args.nv, threads=args.threads)
        reports.append(rep)
    out = _out_dir(args)
    with open(out / "bounds.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["link_id", "time", "old_q_min", "old_q_max", "new_q_min", "new_q_max"])
        for l, link in enumerate(net.links):
            for k in range(net.n_t):
                w.writerow([link.id, k, repr(float(start.q_min[l, k])), repr(float(start.q_max[l, k])),
                            repr(float(box.q_min[l, k])), repr(float(box.q_max[l, k]))])
    for n, rep in enumerate(reports, 1):
        rep.to_csv(net, out / f"obbt_sweep{n}.csv", record_time=args.record_time)
    return EXIT_OK


def cmd_generate(args) -> int:
    from .fixtures import random_network_dict
    doc = random_network_dict(args.nodes, args.links, args.sources, n_t=args.steps,
                              segments=args.segments, seed=args.seed)
    Path(args.output).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wdnrtr", description="Joint valve and booster placement.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--network", required=True, help="network JSON file")
        sp.add_argument("--out", required=out_required, default=None, help="output directory")

    def sizes(sp):
        sp.add_argument("--nv", type=int, default=0, help="valve budget")
        sp.add_argument("--nb", type=int, default=0, help="booster budget")
        sp.add_argument("--m", type=int, default=DEFAULT_M, help="tangents per head-loss branch")

    sp = sub.add_parser("build", help="report problem size")
    common(sp, out_required=False)
    sizes(sp)
    sp.set_defaults(func=cmd_build)

    sp = sub.add_parser("solve", help="run the relax-tighten-round loop")
    common(sp)
    sizes(sp)
    sp.add_argument("--eps-tol", type=float, default=1e-2)
    sp.add_argument("--imax", type=int, default=10)
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--record-time", action="store_true", help="fill timing columns (not reproducible)")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("simulate-quality", help="simulate chlorine on a hydraulic schedule")
    common(sp)
    sp.add_argument("--hydraulics", default=None, help="hydraulic schedule JSON from 'solve'")
    sp.add_argument("--no-valves", action="store_true", help="compute the schedule without valves")
    sp.add_argument("--warmup", action="store_true", help="derive and emit initial concentrations")
    sp.add_argument("--source-c", type=float, default=None, help="source concentration (default c_max)")
    sp.set_defaults(func=cmd_simulate_quality)

    sp = sub.add_parser("obbt", help="tighten flow bounds")
    common(sp)
    sp.add_argument("--nv", type=int, default=0)
    sp.add_argument("--m", type=int, default=DEFAULT_M)
    sp.add_argument("--sweeps", type=int, default=1)
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--record-time", action="store_true")
    sp.set_defaults(func=cmd_obbt)

    sp = sub.add_parser("generate", help="write a random feasible network")
    sp.add_argument("--output", required=True)
    sp.add_argument("--nodes", type=int, default=4)
    sp.add_argument("--links", type=int, default=5)
    sp.add_argument("--sources", type=int, default=1)
    sp.add_argument("--steps", type=int, default=4)
    sp.add_argument("--segments", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_generate)
    return p


def main(argv=None) -> int:
    level = os.environ.get("WDNRTR_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (NetworkError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ObbtInfeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
