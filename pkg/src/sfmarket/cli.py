"""Command-line interface.

Exit codes: 0 success, 1 infeasible, refused or failed verification,
2 malformed input or usage.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from typing import Sequence

import numpy as np

from . import engine
from .dispatch import efficient_dispatch, reported_dispatch
from .equilibrium import (
    DEFAULT_EPS,
    competitive_equilibrium,
    nash_equilibrium,
    unbounded_poa_instance,
    verify_nash,
)
from .errors import InfeasibleError, InputError, RegimeError
from .indices import envelope_check, index_report, lerner_index
from .io import Table, cells, emit, load_scenario, read_csv_rows, write_atomic
from .two_node import TwoNodeScenario, capacity_grid, capacity_sweep

log = logging.getLogger("sfmarket")

EQUILIBRIUM_COLUMNS = ["scope", "id", "node", "quantity", "price", "theta", "payoff",
                       "lerner", "ms", "rsi"]


def _parse_bids(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise InputError(f"--bids: {exc}") from exc


def cmd_dispatch(args) -> tuple[Table, str]:
    sc = load_scenario(args.scenario)
    if args.bids is not None:
        out = reported_dispatch(sc.network, sc.producers, _parse_bids(args.bids))
    else:
        out = efficient_dispatch(sc.network, sc.producers)
    rows = []
    for i in range(sc.network.node_count):
        rows.append(["node", sc.node_label(i), sc.node_label(i), out.q[i], out.p[i], None])
    for j, prod in enumerate(sc.producers):
        rows.append(["producer", prod.label, sc.node_label(prod.node), out.x[j], None,
                     prod.cost.value(out.x[j])])
    table = Table(["scope", "id", "node", "quantity", "price", "cost"],
                  [cells(r) for r in rows], {"objective": out.objective_value})
    summary = f"objective={out.objective_value:.9g}"
    if out.notes:
        summary += " notes=" + "; ".join(out.notes)
    return table, summary


def _equilibrium_table(sc, outcome) -> Table:
    report = index_report(sc.network, sc.producers)
    d = outcome.dispatch
    rows = []
    for i in range(sc.network.node_count):
        rows.append(["node", sc.node_label(i), sc.node_label(i), d.q[i], d.p[i],
                     None, None, None, None, None])
    for j, prod in enumerate(sc.producers):
        price = d.p[prod.node]
        li = lerner_index(price, prod, d.x[j]) if price != 0 else None
        rows.append(["producer", prod.label, sc.node_label(prod.node), d.x[j], price,
                     outcome.bids[j], outcome.payoffs[j], li, report.ms[j], report.rsi[j]])
    meta = {"kind": outcome.kind, "total_cost": d.objective_value,
            "verified": outcome.verified, "max_deviation_gain": outcome.max_deviation_gain}
    return Table(list(EQUILIBRIUM_COLUMNS), [cells(r) for r in rows], meta)


def _summary(outcome) -> str:
    text = (f"verified={'true' if outcome.verified else 'false'} "
            f"max_deviation_gain={outcome.max_deviation_gain:.3g} "
            f"total_cost={outcome.total_cost:.9g}")
    if outcome.notes:
        text += " notes=" + "; ".join(outcome.notes)
    return text


def cmd_ce(args) -> tuple[Table, str]:
    sc = load_scenario(args.scenario)
    outcome = competitive_equilibrium(sc.network, sc.producers)
    return _equilibrium_table(sc, outcome), _summary(outcome)


def cmd_nash(args) -> tuple[Table, str]:
    sc = load_scenario(args.scenario)
    outcome = nash_equilibrium(sc.network, sc.producers, eps=args.eps_nash)
    return _equilibrium_table(sc, outcome), _summary(outcome)


def cmd_indices(args) -> tuple[Table, str]:
    sc = load_scenario(args.scenario)
    outcome = eff = None
    if args.equilibrium:
        outcome = nash_equilibrium(sc.network, sc.producers, eps=args.eps_nash)
        eff = efficient_dispatch(sc.network, sc.producers).objective_value
    rep = index_report(sc.network, sc.producers, outcome, eff)
    cols = ["scope", "id", "node", "ms", "rsi", "pivotal", "lerner_bound", "markup_bound",
            "lerner", "q_max"]
    rows = []
    for i in range(sc.network.node_count):
        rows.append(["node", sc.node_label(i), sc.node_label(i), None, None, None, None, None,
                     None, rep.q_max[i]])
    for j, prod in enumerate(sc.producers):
        li = None if rep.lerner is None else rep.lerner[j]
        rows.append(["producer", prod.label, sc.node_label(prod.node), rep.ms[j], rep.rsi[j],
                     bool(rep.pivotal[j]), rep.lerner_bound[j], rep.markup_bound[j], li, None])
    meta = {"poa_bound": rep.poa_bound}
    if rep.poa is not None:
        meta["poa"] = rep.poa
    summary = f"poa_bound={rep.poa_bound:.9g}"
    if rep.poa is not None:
        summary += f" poa={rep.poa:.9g}"
    return Table(cols, [cells(r) for r in rows], meta), summary


def cmd_braess(args) -> tuple[Table, str]:
    s = TwoNodeScenario(args.d1, args.d2, args.n1, args.n2, args.k1, args.k2,
                        args.beta1, args.beta2)
    step = args.c_step if args.c_step is not None else 0.01 * s.demand
    sweep = capacity_sweep(s, capacity_grid(args.c_min, args.c_max, step))
    cols = ["c", "q1", "q2", "p1", "p2", "cost_ne", "cost_eff", "braess"]
    rows = [cells(list(r)) for r in sweep.rows]
    segs = ", ".join(f"{g.trend} [{g.start:.6g}, {g.end:.6g}]" for g in sweep.segments)
    meta = {"switch_points": ",".join(f"{x:.9g}" for x in sweep.switch_points)}
    return Table(cols, rows, meta), f"segments: {segs}"


def cmd_envelope(args) -> tuple[Table, str]:
    records = read_csv_rows(args.records)
    out = envelope_check(records, ms=args.ms, mc=args.mc)
    cols = ["rsi", "price", "mc", "ms", "bound", "flag", "exceedance", "status"]
    rows = [[r.rsi, r.price, r.mc, r.ms, r.bound, r.flagged, r.exceedance, r.status] for r in out]
    flagged = sum(r.flagged for r in out)
    return Table(cols, rows), f"rows={len(out)} flagged={flagged}"


def cmd_poa_example(args) -> tuple[Table, str]:
    inst = unbounded_poa_instance(args.n1, args.n2, args.k1, args.k2, args.demand, args.t)
    check = verify_nash(inst.network, inst.producers, inst.q, inst.bids, args.eps_nash)
    cols = ["scope", "id", "node", "capacity", "beta", "quantity", "theta"]
    rows = []
    for i in range(2):
        rows.append(["node", str(i + 1), str(i + 1), None, None, inst.q[i], None])
    for j, prod in enumerate(inst.producers):
        rows.append(["producer", prod.label, str(prod.node + 1), prod.capacity,
                     prod.cost.coeffs[0][1], inst.x[j], inst.bids[j]])
    meta = {"beta": inst.beta, "poa_lower_bound": inst.poa_lower_bound, "verified": check.ok}
    summary = (f"beta={inst.beta:.9g} poa_lower_bound={inst.poa_lower_bound:.9g} "
               f"verified={'true' if check.ok else 'false'}")
    return Table(cols, [cells(r) for r in rows], meta), summary


def cmd_verify(args) -> tuple[Table, str, int]:
    sc = load_scenario(args.scenario)
    rows = read_csv_rows(args.equilibrium)
    index = {sc.node_label(i): i for i in range(sc.network.node_count)}
    names = {p.label: j for j, p in enumerate(sc.producers)}
    q = np.full(sc.network.node_count, math.nan)
    theta = np.full(len(sc.producers), math.nan)
    for k, row in enumerate(rows, start=2):
        try:
            if row["scope"] == "node":
                q[index[row["id"]]] = float(row["quantity"])
            elif row["scope"] == "producer":
                theta[names[row["id"]]] = float(row["theta"])
        except (KeyError, ValueError, TypeError) as exc:
            raise InputError(f"{args.equilibrium}: line {k}: bad row ({exc})") from exc
    if np.any(np.isnan(q)) or np.any(np.isnan(theta)):
        raise InputError(f"{args.equilibrium}: missing node or producer rows")
    check = verify_nash(sc.network, sc.producers, q, theta, args.eps_nash)
    cols = ["id", "deviation_gain"]
    table = Table(cols, [[p.label, float(g)] for p, g in zip(sc.producers, check.gains)],
                  {"ok": check.ok, "iso_optimal": check.iso_optimal})
    summary = (f"verified={'true' if check.ok else 'false'} "
               f"max_deviation_gain={check.max_deviation_gain:.3g} "
               f"iso_optimal={'true' if check.iso_optimal else 'false'}")
    return table, summary, 0 if check.ok else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=["csv", "json"], default="csv")
    common.add_argument("-o", "--output", help="write to this file instead of stdout")
    common.add_argument("--tol-feas", type=float, default=None,
                        help=f"primal feasibility tolerance (default {engine.Tolerances.primal:g})")
    common.add_argument("--tol-kkt", type=float, default=None,
                        help=f"stationarity tolerance (default {engine.Tolerances.dual:g})")
    common.add_argument("--eps-nash", type=float, default=DEFAULT_EPS,
                        help="payoff tolerance of the equilibrium check")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="sfmarket", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dispatch", parents=[common], help="efficient or bid-based dispatch")
    p.add_argument("scenario")
    p.add_argument("--bids", help="comma-separated bids, one per producer")
    p.set_defaults(func=cmd_dispatch)

    p = sub.add_parser("ce", parents=[common], help="competitive equilibrium")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_ce)

    p = sub.add_parser("nash", parents=[common], help="supply-function Nash equilibrium")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_nash)

    p = sub.add_parser("indices", parents=[common], help="market-power indices and bounds")
    p.add_argument("scenario")
    p.add_argument("--equilibrium", action="store_true",
                   help="also solve for the equilibrium and report Lerner indices and PoA")
    p.set_defaults(func=cmd_indices)

    p = sub.add_parser("braess", parents=[common], help="two-node capacity sweep")
    for flag, kind, default in [("--d1", float, 1.0), ("--d2", float, 1.0), ("--n1", int, 3),
                                ("--n2", int, 10), ("--k1", float, 1.02), ("--k2", float, 1.02),
                                ("--beta1", float, 1.0), ("--beta2", float, 1.15),
                                ("--c-min", float, 0.0), ("--c-max", float, 0.8)]:
        p.add_argument(flag, type=kind, default=default)
    p.add_argument("--c-step", type=float, default=None, help="default: 1%% of total demand")
    p.set_defaults(func=cmd_braess)

    p = sub.add_parser("envelope", parents=[common], help="check prices against the RSI envelope")
    p.add_argument("records", help="CSV with header rsi,price[,mc][,ms]")
    p.add_argument("--ms", type=float, default=1.0)
    p.add_argument("--mc", type=float, default=8.0)
    p.set_defaults(func=cmd_envelope)

    p = sub.add_parser("poa-example", parents=[common],
                       help="two-node market with unbounded price of anarchy")
    for flag, kind, default in [("--n1", int, 2), ("--n2", int, 2), ("--k1", float, 1.5),
                                ("--k2", float, 4.0), ("--demand", float, 2.0), ("--t", float, 1.2)]:
        p.add_argument(flag, type=kind, default=default)
    p.set_defaults(func=cmd_poa_example)

    p = sub.add_parser("verify", parents=[common], help="re-check an emitted equilibrium")
    p.add_argument("scenario")
    p.add_argument("equilibrium", help="CSV written by the nash or ce command")
    p.set_defaults(func=cmd_verify)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    if args.tol_feas is not None:
        overrides["primal"] = args.tol_feas
    if args.tol_kkt is not None:
        overrides["dual"] = args.tol_kkt
    try:
        with engine.tolerances(**overrides):
            result = args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InfeasibleError, RegimeError) as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return 1
    table, summary, *rest = result
    code = rest[0] if rest else 0
    payload = emit(table, args.format)
    if args.output:
        write_atomic(args.output, payload)
    else:
        sys.stdout.buffer.write(payload)
        sys.stdout.flush()
    print(summary, file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
