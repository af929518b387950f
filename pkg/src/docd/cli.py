"""Command line: ``docd run``, ``docd compare``, ``docd metrics``.

Exit codes: 0 success, 1 comparison failure, 2 input error, 3 divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from importlib import resources
from pathlib import Path

from docd import engine, metrics, oracle
from docd.graph import Graph, GraphError, load_edge_list
from docd.protocol import ProtocolFault

EXIT_OK, EXIT_MISMATCH, EXIT_INPUT, EXIT_DIVERGED = 0, 1, 2, 3

FIXTURES = ("karate", "dolphin", "football")

PALETTE = ("#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf", "#aec7e8", "#98df8a", "#c5b0d5")
OVERLAP_COLOR = "#ff7f0e"


class InputError(Exception):
    pass


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("docd") / "data" / f"{name}.txt"))


def resolve_graph_path(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    if arg in FIXTURES:
        fx = fixture_path(arg)
        if fx.exists():
            return fx
        raise InputError(f"bundled fixture {arg!r} is not available in this installation")
    raise InputError(f"graph file not found: {arg}")


def read_graph(args) -> Graph:
    if getattr(args, "format", "edgelist") != "edgelist":
        raise InputError(f"unsupported format {args.format!r}")
    path = resolve_graph_path(args.graph)
    try:
        return load_edge_list(path, relabel=args.relabel, skip_self_loops=args.skip_self_loops)
    except OSError as exc:
        raise InputError(f"{path}: {exc}") from exc
    except GraphError as exc:
        raise InputError(f"{path}: {exc}") from exc


def to_dot(g: Graph, report) -> str:
    held = report.membership()
    order = {c["c_id"]: k for k, c in enumerate(report.communities)}
    lines = ["graph docd {", "  node [style=filled];"]
    for v in g.vertices:
        cs = sorted(held.get(v, []))
        over = len(cs) >= 2
        color = OVERLAP_COLOR if over else PALETTE[order[cs[0]] % len(PALETTE)] if cs else "#ffffff"
        comm = ";".join(str(c) for c in cs)
        lines.append(f'  {v} [community="{comm}", overlapped={str(over).lower()}, fillcolor="{color}"];')
    for u, v in g.edges():
        lines.append(f"  {u} -- {v};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def cmd_run(args) -> int:
    try:
        g = read_graph(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    trace_fh = None
    trace = False
    if args.trace_file:
        trace_fh = open(args.trace_file, "w", encoding="utf-8")
        trace = trace_fh
    elif args.trace:
        trace = sys.stderr
    cfg = engine.SimulationConfig(max_rounds=args.max_rounds, extra_sweeps=args.extra_sweeps,
                                  parallel=args.parallel, trace=trace)
    try:
        report = engine.run(g, cfg)
    except engine.DivergenceError as exc:
        snap = args.snapshot or (f"{args.out}.snapshot.json" if args.out else "docd-snapshot.json")
        exc.write_snapshot(snap)
        print(f"error: {exc}; snapshot written to {snap}", file=sys.stderr)
        return EXIT_DIVERGED
    finally:
        if trace_fh is not None:
            trace_fh.close()
    _write(args.out, report.dumps())
    if args.dot:
        Path(args.dot).write_text(to_dot(g, report), encoding="utf-8")
    return EXIT_OK


def _load_expect(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read expectations {path}: {exc}") from exc


def compare(g: Graph, expect: dict, extra_sweeps: int = 1) -> tuple[list[tuple], bool]:
    """Rows of (field, actual, expected, tol, ok) plus the engine/oracle verdict."""
    cfg = engine.SimulationConfig(extra_sweeps=extra_sweeps)
    t0 = time.perf_counter()
    report = engine.run(g, cfg)
    elapsed = time.perf_counter() - t0
    actual = {"communities": len(report.communities), "cm": report.overall_cm,
              "overlapped": len(report.overlapped_nodes)}
    rows = []
    for name in ("communities", "cm", "overlapped"):
        if name in expect:
            want, tol = expect[name]["value"], expect[name]["tol"]
            rows.append((name, actual[name], want, tol, abs(actual[name] - want) <= tol))
    if "max_seconds" in expect:
        rows.append(("seconds", round(elapsed, 4), expect["max_seconds"], None,
                     elapsed < expect["max_seconds"]))
    same = report.comparable() == oracle.sequential_replay(g, cfg).comparable()
    return rows, same


def cmd_compare(args) -> int:
    try:
        g = read_graph(args)
        expect = _load_expect(args.expect)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    rows, same = compare(g, expect, args.extra_sweeps)
    print(f"{'field':<12} {'actual':>10} {'expected':>10} {'tol':>8}  verdict")
    for name, got, want, tol, ok in rows:
        tol_s = "-" if tol is None else f"{tol:g}"
        got_s = f"{got:.4f}" if isinstance(got, float) else str(got)
        print(f"{name:<12} {got_s:>10} {want!s:>10} {tol_s:>8}  {'ok' if ok else 'FAIL'}")
    print(f"{'oracle':<12} {'equal' if same else 'DIFFERS':>10}")
    failed = [r[0] for r in rows if not r[4]] + ([] if same else ["oracle"])
    if failed:
        print("failed: " + ", ".join(failed))
        return EXIT_MISMATCH
    return EXIT_OK


def cmd_metrics(args) -> int:
    try:
        g = read_graph(args)
        raw = _load_expect(args.assignment)
        if not isinstance(raw, dict):
            raise InputError("assignment must map community ids to member lists")
        for c, ms in raw.items():
            if not ms:
                raise InputError(f"community {c} is empty")
        a = metrics.CommunityAssignment.from_communities({int(c): ms for c, ms in raw.items()})
        table = metrics.metrics_table(g, a)
    except (InputError, GraphError, metrics.MetricsError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    _write(args.out, json.dumps(table.as_json(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="docd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def graph_args(p):
        p.add_argument("--graph", required=True,
                       help="edge-list path, or a bundled fixture name (karate, dolphin, football)")
        p.add_argument("--format", default="edgelist", choices=["edgelist"])
        p.add_argument("--relabel", action="store_true", help="map string labels to dense ids")
        p.add_argument("--skip-self-loops", action="store_true")

    run = sub.add_parser("run", help="simulate the protocol and write a JSON report")
    graph_args(run)
    run.add_argument("--out", help="report path (default: stdout)")
    run.add_argument("--dot", help="also write a DOT rendering colored by community")
    run.add_argument("--trace", action="store_true", help="dump delivered messages to stderr")
    run.add_argument("--trace-file", help="dump delivered messages to this file")
    run.add_argument("--extra-sweeps", type=int, default=1)
    run.add_argument("--max-rounds", type=int, default=None)
    run.add_argument("--parallel", action="store_true")
    run.add_argument("--seedless", action="store_true",
                     help="accepted for scripts; the protocol uses no randomness")
    run.add_argument("--snapshot", help="where to write the state snapshot on divergence")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="run engine and oracle against expected values")
    graph_args(cmp_)
    cmp_.add_argument("--expect", required=True)
    cmp_.add_argument("--extra-sweeps", type=int, default=1)
    cmp_.set_defaults(func=cmd_compare)

    met = sub.add_parser("metrics", help="score a given community assignment")
    graph_args(met)
    met.add_argument("--assignment", required=True, help="JSON object community -> members")
    met.add_argument("--out")
    met.set_defaults(func=cmd_metrics)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ProtocolFault as exc:
        print(f"error: protocol fault: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
