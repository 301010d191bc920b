"""Command line interface.

Exit codes:

    0  success
    2  invalid command line or solver settings (nothing was computed)
    3  scenario or input file could not be read, parsed or validated
    4  stationary initialization failed
    5  Newton failure during the time loop
    6  result directories missing, incomplete or mismatched
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .conversion import ConversionFactors, check_monotone
from .gas import CouplingKind
from .io.results import SNAPSHOT_MODES, ResultsError, compare_couplings, from_simulation, read_results, \
    summary, write_results
from .io.scenario import ScenarioError, load_scenario, save_scenario
from .network import NetworkError, build_layout, build_network
from .solver import ConfigError, SolverError, run_simulation, stationary_initial_state

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_INIT = 4
EXIT_NEWTON = 5
EXIT_RESULTS = 6


class CliError(Exception):
    def __init__(self, code, message):
        self.code = code
        super().__init__(message)


def _positive(kind):
    def conv(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
        return v
    return conv


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default=os.environ.get("GASPOWER_LOG_LEVEL", "WARNING"),
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], type=str.upper,
                        help="logging level (default from GASPOWER_LOG_LEVEL, else WARNING)")
    common.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--scenario", required=True, type=Path, help="scenario YAML file")
    solver.add_argument("--dt", type=_positive(float), help="time step [s]")
    solver.add_argument("--dx", type=_positive(float), help="target cell length [m]")
    solver.add_argument("--coupling", choices=[c.value for c in CouplingKind], help="node coupling condition")
    solver.add_argument("--tol", type=_positive(float), help="Newton tolerance (scaled infinity norm)")

    p = argparse.ArgumentParser(prog="gaspower", description="Transient simulation of coupled gas and power networks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common, solver], help="run a scenario and write results")
    s.add_argument("--out", required=True, type=Path, help="result directory")
    s.add_argument("--snapshots", choices=SNAPSHOT_MODES, default="conversion",
                   help="'full' also stores every pipe grid state (needed by compare-couplings)")

    v = sub.add_parser("validate", parents=[common, solver], help="check a scenario without simulating")

    c = sub.add_parser("compare-couplings", parents=[common], help="difference table of two runs")
    c.add_argument("run_p", type=Path, help="result directory of the reference run")
    c.add_argument("run_b", type=Path, help="result directory of the second run")
    c.add_argument("--out", type=Path, help="also write the statistics as JSON to this file")

    r = sub.add_parser("report", parents=[common], help="gas totals of a result directory")
    r.add_argument("run", type=Path, help="result directory")

    cv = sub.add_parser("convert", parents=[common], help="build a native scenario from GasLib/Matpower files")
    cv.add_argument("--gaslib", type=Path, help="GasLib network file (.net)")
    cv.add_argument("--nominations", type=Path, help="GasLib nomination file (.scn)")
    cv.add_argument("--matpower", type=Path, help="Matpower case file (.m)")
    cv.add_argument("--coupling-table", type=Path,
                    help="CSV with columns bus,gas_node listing the conversion plants")
    cv.add_argument("--benchmark", action="store_true",
                    help="apply the gaslib-134/IEEE-300 boundary flows and conversion table")
    cv.add_argument("--epsilon", type=_positive(float), default=1.0, help="conversion smoothing width [MW]")
    cv.add_argument("--out", required=True, type=Path, help="scenario file to write")
    return p


def _load(args):
    try:
        sc = load_scenario(args.scenario)
    except ScenarioError as exc:
        raise CliError(EXIT_INPUT, f"scenario error: {exc}") from None
    changes = {}
    if args.dt is not None:
        changes["dt"] = args.dt
    if args.dx is not None:
        changes["dx"] = args.dx
    if args.tol is not None:
        changes["newton_tol"] = args.tol
    try:
        sc = replace(sc, solver=replace(sc.solver, **changes))
    except ConfigError as exc:
        raise CliError(EXIT_USAGE, f"invalid solver settings: {exc}") from None
    if args.coupling is not None:
        sc = replace(sc, coupling=CouplingKind(args.coupling))
    try:
        net = build_network(sc)
        layout = build_layout(net, sc.solver.dx)
        for conv in net.conversions:
            check_monotone(conv)
    except (NetworkError, ValueError) as exc:
        raise CliError(EXIT_INPUT, f"scenario error: {exc}") from None
    return sc, net, layout


def _emit(args, payload: dict, text: str):
    print(json.dumps(payload, indent=2) if args.json else text)


def cmd_validate(args) -> int:
    sc, net, layout = _load(args)
    info = {
        "valid": True,
        "gas_nodes": len(net.gas_nodes),
        "gas_edges": len(net.gas_edges),
        "buses": len(net.buses),
        "lines": len(net.lines),
        "conversions": len(net.conversions),
        "unknowns": layout.n,
        "steps": sc.solver.n_steps,
    }
    _emit(args, info, "scenario ok: " + ", ".join(f"{k}={v}" for k, v in info.items() if k != "valid"))
    return EXIT_OK


def cmd_simulate(args) -> int:
    sc, net, layout = _load(args)
    cfg = sc.solver
    try:
        init = stationary_initial_state(net, layout, sc.coupling, cfg)
    except SolverError as exc:
        _diagnostics(exc)
        raise CliError(EXIT_INIT, str(exc)) from None
    try:
        result = run_simulation(net, cfg, sc.coupling, keep_states=args.snapshots == "full", x_init=init.x)
    except SolverError as exc:
        _diagnostics(exc)
        raise CliError(EXIT_NEWTON, str(exc)) from None
    result.newton_iterations[0] = init.iterations
    result.residual_norms[0] = init.history[-1]
    rs = from_simulation(result, args.snapshots)
    rs.meta["scenario"] = sc.name
    try:
        write_results(rs, args.out)
    except ResultsError as exc:
        raise CliError(EXIT_RESULTS, str(exc)) from None
    s = summary(rs)
    _emit(args, s, f"wrote {args.out}: {s['steps']} steps, consumed {s['totals']['consumed_m3']:.6g} m3, "
                   f"generated {s['totals']['generated_m3']:.6g} m3")
    return EXIT_OK


def _diagnostics(exc: SolverError):
    if exc.diagnostics:
        for cat, rows in exc.diagnostics.items():
            print(f"  {cat}: " + ", ".join(f"row {r} |r|={v:.3e}" for r, v in rows), file=sys.stderr)


def _read(path):
    try:
        return read_results(path)
    except ResultsError as exc:
        raise CliError(EXIT_RESULTS, str(exc)) from None


def format_comparison(stats: dict) -> str:
    p = stats["pressure"]
    lines = [
        f"{'max|p_p-p_b| [bar]':>24} {'max|p_p-p_b|/p_p':>18}",
        f"{p['max_abs_bar']:>24.4g} {p['max_rel']:>18.4g}",
        "",
        f"{'|q_p| range [m3/s]':>24} {'max|q_p-q_b|':>14} {'max rel':>10} {'points':>8}",
    ]
    for b in stats["flow_bins"]:
        rng = f"{b['lower']:g} < |q_p| < {b['upper']:g}" if b["upper"] is not None else f"{b['lower']:g} < |q_p|"
        if b["count"]:
            lines.append(f"{rng:>24} {b['max_abs']:>14.4g} {b['max_rel']:>10.4g} {b['count']:>8d}")
        else:
            lines.append(f"{rng:>24} {'-':>14} {'-':>10} {0:>8d}")
    return "\n".join(lines)


def cmd_compare(args) -> int:
    a, b = _read(args.run_p), _read(args.run_b)
    try:
        stats = compare_couplings(a, b)
    except ResultsError as exc:
        raise CliError(EXIT_RESULTS, str(exc)) from None
    if args.out is not None:
        args.out.write_text(json.dumps(stats, indent=2) + "\n")
    _emit(args, stats, format_comparison(stats))
    return EXIT_OK


def cmd_report(args) -> int:
    rs = _read(args.run)
    s = summary(rs)
    tot = s["totals"]
    text = [f"consumed  {tot['consumed_m3']:.6e} m3", f"generated {tot['generated_m3']:.6e} m3"]
    text += [f"  {n}: consumed {v['consumed_m3']:.6e} m3, generated {v['generated_m3']:.6e} m3"
             for n, v in tot["per_node"].items()]
    _emit(args, tot, "\n".join(text))
    return EXIT_OK


def _read_table(path: Path):
    try:
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"{path}: {exc.strerror}") from None
    if not rows or not {"bus", "gas_node"} <= set(rows[0]):
        raise CliError(EXIT_INPUT, f"{path}: expected CSV columns bus,gas_node")
    return [(r["bus"].strip(), r["gas_node"].strip()) for r in rows]


def cmd_convert(args) -> int:
    from .benchmark import benchmark_scenario, merge_scenario
    from .io.gaslib import import_gaslib
    from .io.matpower import import_matpower

    try:
        if args.benchmark:
            if args.gaslib is None or args.matpower is None:
                raise CliError(EXIT_USAGE, "--benchmark needs --gaslib and --matpower")
            sc = benchmark_scenario(args.gaslib, args.matpower)
        else:
            if args.gaslib is None:
                raise CliError(EXIT_USAGE, "convert needs --gaslib (and optionally --matpower)")
            sc = import_gaslib(args.gaslib, args.nominations)
            if args.matpower is not None:
                table = _read_table(args.coupling_table) if args.coupling_table else []
                slack = [b for b, _ in table] or None
                power = import_matpower(args.matpower, slack_buses=slack)
                sc = merge_scenario(sc, power, table, factors=ConversionFactors(), epsilon=args.epsilon)
            elif args.coupling_table is not None:
                raise CliError(EXIT_USAGE, "--coupling-table needs --matpower")
        build_network(sc)
    except (ScenarioError, NetworkError, OSError) as exc:
        raise CliError(EXIT_INPUT, f"conversion failed: {exc}") from None
    save_scenario(sc, args.out)
    info = {"out": str(args.out), "gas_nodes": len(sc.gas_nodes), "gas_edges": len(sc.gas_edges),
            "buses": len(sc.buses), "conversions": len(sc.conversions)}
    _emit(args, info, f"wrote {args.out}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "validate": cmd_validate,
    "compare-couplings": cmd_compare,
    "report": cmd_report,
    "convert": cmd_convert,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"gaspower {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
