"""One test per acceptance criterion; each prints a PASS/FAIL line."""

import json
import random
import time

import pytest

from checks import Violation, run_checked
from conftest import DATA, K3, S4, TWO_TRIANGLES, fixture_graph, gnp, random_connected
from docd import cli, engine, metrics, oracle
from docd.report import round_stats

SWEEP = random_connected(100, seed=7, max_n=40)
BENCHMARKS = ("karate", "dolphin", "football")


@pytest.fixture
def verdict(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, f"criterion {n}: {detail}"
    return report


def available():
    return [(name, fixture_graph(name)) for name in BENCHMARKS if (DATA / f"{name}.txt").exists()]


def benchmark(name, verdict, n):
    expect = json.loads((DATA / "expected" / f"{name}.json").read_text())
    path = DATA / f"{name}.txt"
    if not path.exists():
        verdict(n, False, f"{name} edge list is not bundled; nothing to measure")
    g = fixture_graph(name)
    t0 = time.perf_counter()
    r = engine.run(g)
    elapsed = time.perf_counter() - t0
    got = {"communities": len(r.communities), "cm": r.overall_cm, "overlapped": len(r.overlapped_nodes)}
    parts, ok = [], elapsed < expect["max_seconds"]
    for key in ("communities", "cm", "overlapped"):
        want, tol = expect[key]["value"], expect[key]["tol"]
        hit = abs(got[key] - want) <= tol
        ok &= hit
        parts.append(f"{key}={got[key]:.4g} (want {want}±{tol}{'' if hit else ' MISS'})")
    parts.append(f"{elapsed:.2f}s (< {expect['max_seconds']}s)")
    verdict(n, ok, f"{name}: " + ", ".join(parts))


def test_criterion_1_karate(verdict):
    benchmark("karate", verdict, 1)


def test_criterion_2_dolphin(verdict):
    benchmark("dolphin", verdict, 2)


def test_criterion_3_football(verdict):
    benchmark("football", verdict, 3)


def test_criterion_4_round_bounds(verdict):
    corpus = [name for name, _ in available()] + [f"random#{k}" for k in range(len(SWEEP))]
    graphs = [g for _, g in available()] + SWEEP
    t0 = time.perf_counter()
    fails: dict[str, list[str]] = {}
    for name, g in zip(corpus, graphs):
        bc = round_stats(engine.run(g))
        for check, ok in bc.checks.items():
            if not ok and "messages" not in check:
                fails.setdefault(check, []).append(name)
    elapsed = time.perf_counter() - t0
    missing = [b for b in BENCHMARKS if not (DATA / f"{b}.txt").exists()]
    ok = not fails and not missing and elapsed < 30
    detail = ", ".join(f"{k} violated on {len(v)}/{len(graphs)} (e.g. {v[0]})" for k, v in fails.items())
    if missing:
        detail += f"; benchmarks missing: {missing}"
    verdict(4, ok, (detail or "all round bounds hold") + f"; sweep {elapsed:.1f}s")


def test_criterion_5_message_bound(verdict):
    graphs = [g for _, g in available()] + SWEEP + [K3, S4, TWO_TRIANGLES]
    worst = 0.0
    bad = 0
    for g in graphs:
        bc = round_stats(engine.run(g))
        worst = max(worst, bc.phase1_messages / (6 * g.m))
        bad += not bc.checks["phase1_messages<=6m"]
    verdict(5, bad == 0, f"{bad} graphs exceed 6m; max Phase-I messages/6m = {worst:.3f} over {len(graphs)} graphs")


def test_criterion_6_oracle_equivalence(verdict):
    graphs = [g for _, g in available()] + SWEEP
    mismatches = sum(engine.run(g).comparable() != oracle.sequential_replay(g).comparable()
                     for g in graphs)
    verdict(6, mismatches == 0, f"{mismatches} mismatches over {len(graphs)} graphs")


def _random_pair(rng):
    n = rng.randint(1, 30)
    g = gnp(n, rng.choice((0.1, 0.2, 0.4, 0.7)), rng)
    k = rng.randint(1, 5)
    comms = {c: set() for c in range(k)}
    for v in g.vertices:
        for c in rng.sample(range(k), rng.randint(1, min(k, 3))):
            comms[c].add(v)
    return g, {c: ms for c, ms in comms.items() if ms}


def test_criterion_7_metric_differential(verdict):
    rng = random.Random(2024)
    worst = 0.0
    for _ in range(1000):
        g, comms = _random_pair(rng)
        a = metrics.CommunityAssignment.from_communities(comms)
        ref = oracle.brute_force_metrics(g, comms)
        table = metrics.metrics_table(g, a)
        for v in g.vertices:
            worst = max(worst, abs(float(table.cc[v]) - float(ref["cc"][v])),
                        abs(float(table.onm[v]) - float(ref["onm"][v])))
        for key, x in ref["nm"].items():
            worst = max(worst, abs(float(table.nm[key]) - float(x)))
        for c, x in ref["cm"].items():
            worst = max(worst, abs(float(metrics.community_modularity(g, a, c)) - float(x)))
        worst = max(worst, abs(float(metrics.overall_modularity(g, a)) - float(ref["overall"])))
    verdict(7, worst <= 1e-12, f"max abs difference {worst:.3g} over 1000 pairs")


def test_criterion_8_invariants(verdict):
    graphs = [g for _, g in available()] + SWEEP + [K3, S4, TWO_TRIANGLES]
    rng = random.Random(8)
    graphs += [gnp(rng.randint(1, 30), 0.08, rng) for _ in range(20)]
    failures = []
    for k, g in enumerate(graphs):
        try:
            run_checked(g)
        except Violation as exc:
            failures.append(f"graph {k}: {exc}")
    verdict(8, not failures, f"{len(failures)} violations over {len(graphs)} runs"
            + (f"; first: {failures[0]}" if failures else ""))


def test_criterion_9_determinism(verdict, tmp_path, capsys):
    outs = []
    for k in range(2):
        path = tmp_path / f"r{k}.json"
        assert cli.main(["run", "--graph", "karate", "--out", str(path)]) == 0
        outs.append(path.read_bytes())
    same_cli = outs[0] == outs[1]
    graphs = [g for _, g in available()] + SWEEP[:20]
    same_par = all(engine.run(g).dumps() == engine.run(g, engine.SimulationConfig(parallel=True)).dumps()
                   for g in graphs)
    verdict(9, same_cli and same_par,
            f"cmd_run byte-identical={same_cli}, parallel==sequential on {len(graphs)} graphs={same_par}")
