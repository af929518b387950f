"""Lockstep round scheduler for the per-node state machines.

A message sent while processing round r is delivered in round r+1. Stages
are separated by barriers: a stage ends when no message is in flight, and
then every node runs the next stage's entry transition. Rounds are counted
as delivery steps.
"""

from __future__ import annotations

import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, TextIO

from docd import protocol as P
from docd.graph import Graph, diameter, max_component_diameter
from docd.report import SimulationReport, build_report, round_stats  # noqa: F401  (re-export)


class DivergenceError(RuntimeError):
    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot

    def write_snapshot(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.snapshot, fh, indent=2, sort_keys=True)


@dataclass
class SimulationConfig:
    max_rounds: int | None = None
    extra_sweeps: int = 1
    parallel: bool = False
    trace: bool | TextIO = False
    workers: int = 4

    def __post_init__(self):
        if self.max_rounds is not None and self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.extra_sweeps < 0:
            raise ValueError("extra_sweeps must be >= 0")


def quiescent(states: dict[int, P.NodeState], in_flight) -> bool:
    return not in_flight and all(s.phase is P.Phase.DONE for s in states.values())


def _snapshot(states: dict[int, P.NodeState], in_flight, rnd: int) -> dict:
    return {
        "round": rnd,
        "in_flight": [m.trace_line(rnd + 1) for m in in_flight[:200]],
        "nodes": {
            str(v): {
                "phase": s.phase.value,
                "lock": s.lock,
                "cl": [[r.c_id, r.c_size, r.p_id, float(r.cm), r.label] for r in s.cl.values()],
                "children": {str(c): sorted(k) for c, k in s.children.items()},
            }
            for v, s in sorted(states.items())
        },
    }


@dataclass
class PassRecord:
    kind: str
    rounds: int = 0
    movers: tuple[int, ...] = ()
    ml: tuple = ()
    merges: int = 0


class Simulation:
    """One execution; keeps node states and per-pass history for inspection."""

    def __init__(self, g: Graph, cfg: SimulationConfig | None = None):
        self.g = g
        self.cfg = cfg or SimulationConfig()
        self.states = {v: P.init_node(g, v) for v in g.vertices}
        self.order = list(g.vertices)
        self.round = 0
        self.in_flight: list[P.Message] = []
        self.messages = {"phase1": Counter(), "phase2": Counter()}
        self.passes: list[PassRecord] = []
        self.trace_lines: list[str] = []
        self.diameter = diameter(g)
        self.comp_diameter = max_component_diameter(g)
        self.max_rounds = self.cfg.max_rounds or 50 * (self.comp_diameter + 1)
        self.selection_rounds = 0
        self.phase1_rounds = 0
        self.phase1_parents: dict[int, dict[int, int | None]] = {}
        self._pool = ThreadPoolExecutor(self.cfg.workers) if self.cfg.parallel else None

    # plumbing -------------------------------------------------------------

    def _map(self, fn: Callable[[P.NodeState], list[P.Message]], nodes: list[int]) -> list[P.Message]:
        for v in nodes:
            self.states[v].now = self.round
        if self._pool is not None:
            results = list(self._pool.map(lambda v: fn(self.states[v]), nodes))
        else:
            results = [fn(self.states[v]) for v in nodes]
        return [m for out in results for m in out]

    def _emit_trace(self, msgs: list[P.Message]) -> None:
        if not self.cfg.trace:
            return
        lines = [m.trace_line(self.round) for m in msgs]
        self.trace_lines.extend(lines)
        if not isinstance(self.cfg.trace, bool):
            self.cfg.trace.write("".join(line + "\n" for line in lines))

    def run_stage(self, stage: P.Stage) -> tuple[int, Counter]:
        self.in_flight = self._map(lambda s: P.begin_stage(s, stage), self.order)
        rounds, delivered = 0, Counter()
        while self.in_flight:
            self.round += 1
            rounds += 1
            if self.round > self.max_rounds:
                raise DivergenceError(f"exceeded max_rounds={self.max_rounds} in {stage.value}",
                                      _snapshot(self.states, self.in_flight, self.round))
            boxes: dict[int, list[P.Message]] = {}
            for m in self.in_flight:
                if m.dst not in self.states[m.src].gamma_nbrs:
                    raise P.ProtocolFault(f"{m.kind.value} from {m.src} to non-neighbor {m.dst}")
                boxes.setdefault(m.dst, []).append(m)
                delivered[m.kind.value] += 1
            self._emit_trace(self.in_flight)
            dsts = sorted(boxes)
            before = {v: self.states[v].join for v in dsts} if stage is P.Stage.PHASE1 else {}
            self.in_flight = self._map(lambda s: P.step(s, boxes[s.id], stage), dsts)
            if stage is P.Stage.PHASE1 and any(self.states[v].join != before[v] for v in dsts):
                self.selection_rounds = rounds
        return rounds, delivered

    # protocol ------------------------------------------------------------

    def _phase1(self) -> None:
        rounds, delivered = self.run_stage(P.Stage.PHASE1)
        self.messages["phase1"] = delivered
        self.phase1_rounds = rounds
        for v, s in self.states.items():
            if not s.cl:
                raise DivergenceError(f"node {v} ended Phase I without a community",
                                      _snapshot(self.states, [], self.round))
        self.phase1_parents = {v: {c: r.p_id for c, r in s.cl.items()} for v, s in self.states.items()}

    def _movement_pass(self) -> None:
        rec = PassRecord("movement")
        for stage in P.MOVEMENT_STAGES:
            rounds, delivered = self.run_stage(stage)
            self.messages["phase2"].update(delivered)
            rec.rounds += rounds
            if stage is P.Stage.MOVE_DECIDE:
                rec.movers = tuple(v for v in self.order if self.states[v].moving)
        ml = []
        for v in self.order:
            ml.extend(self.states[v].ml_log)
            self.states[v].ml_log = []
        rec.ml = tuple(ml)
        self.passes.append(rec)

    def _merge_pass(self) -> int:
        rec = PassRecord("merging")
        for stage in P.MERGE_STAGES:
            rounds, delivered = self.run_stage(stage)
            self.messages["phase2"].update(delivered)
            rec.rounds += rounds
            if stage is P.Stage.MERGE_CONFIRM:
                rec.merges = sum(1 for s in self.states.values() if s.confirm is not None)
        self.passes.append(rec)
        return rec.merges

    def execute(self, observer: Callable[[str, "Simulation"], None] | None = None) -> SimulationReport:
        """Run to completion; ``observer`` sees the states after Phase I and each pass."""
        see = observer or (lambda label, sim: None)
        try:
            self._phase1()
            see("phase1", self)
            for _ in range(1 + self.cfg.extra_sweeps):
                self._movement_pass()
                see("movement", self)
                while True:
                    merged = self._merge_pass()
                    see("merging", self)
                    if not merged:
                        break
            for s in self.states.values():
                P.identify_overlaps(s)
                s.phase = P.Phase.DONE
        finally:
            if self._pool is not None:
                self._pool.shutdown()
        return self.report()

    def assignment(self) -> dict[int, set[int]]:
        comms: dict[int, set[int]] = {}
        for v, s in self.states.items():
            for c in s.cl:
                comms.setdefault(c, set()).add(v)
        return comms

    def report(self) -> SimulationReport:
        comms = self.assignment()
        cm = {}
        for c in comms:
            head = self.states.get(c)
            if head is None or head.head_of() != c:
                raise P.ProtocolFault(f"community {c} has no head")
            cm[c] = head.cl[c].cm
        movement = sum(p.rounds for p in self.passes if p.kind == "movement")
        merging = sum(p.rounds for p in self.passes if p.kind == "merging")
        rounds = {"phase1_selection": self.selection_rounds, "phase1": self.phase1_rounds,
                  "movement": movement, "merging": merging, "phase2": movement + merging,
                  "total": self.phase1_rounds + movement + merging}
        p1 = {k.value: self.messages["phase1"].get(k.value, 0) for k in P.PHASE1_KINDS}
        p2 = {k.value: self.messages["phase2"].get(k.value, 0) for k in P.Kind}
        messages = {"phase1": p1, "phase2": p2, "total": sum(p1.values()) + sum(p2.values())}
        extra = {"extra_sweeps": self.cfg.extra_sweeps, "component_diameter": self.comp_diameter,
                 "merge_passes": sum(1 for p in self.passes if p.kind == "merging")}
        return build_report(n=self.g.n, m=self.g.m, diameter=self.diameter, communities=comms,
                            cm=cm, rounds=rounds, messages=messages, labels=self.g.label_map,
                            extra=extra)


def run(g: Graph, cfg: SimulationConfig | None = None) -> SimulationReport:
    return Simulation(g, cfg).execute()

