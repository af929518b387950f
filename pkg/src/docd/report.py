"""SimulationReport: the JSON-serializable outcome of a run or a replay."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

SCHEMA_VERSION = 1
PHASE2_ROUND_FACTOR = 10


@dataclass
class SimulationReport:
    communities: list[dict]
    overlapped_nodes: list[int]
    overlapped_communities: list[dict]
    rounds: dict
    messages: dict
    modularity: dict
    meta: dict
    diameter: int | None = None

    def to_json(self) -> dict:
        return {
            "communities": self.communities,
            "overlapped_nodes": self.overlapped_nodes,
            "overlapped_communities": self.overlapped_communities,
            "rounds": self.rounds,
            "messages": self.messages,
            "modularity": self.modularity,
            "meta": self.meta,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @property
    def overall_cm(self) -> float:
        return self.modularity["overall"]

    def comparable(self) -> dict:
        """The part of the report the sequential replay must reproduce exactly."""
        d = self.to_json()
        d["rounds"] = {k: d["rounds"][k] for k in ("phase1_selection", "phase1")}
        d["messages"] = {"phase1": d["messages"]["phase1"]}
        return d

    def membership(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for c in self.communities:
            for v in c["members"]:
                out.setdefault(v, []).append(c["c_id"])
        return out


def build_report(*, n: int, m: int, diameter, communities: Mapping[int, set[int]],
                 cm: Mapping[int, Fraction], rounds: dict, messages: dict,
                 labels: Mapping[str, int] | None = None, extra: dict | None = None) -> SimulationReport:
    comms = []
    membership: dict[int, set[int]] = {}
    for c in sorted(communities):
        members = sorted(communities[c])
        comms.append({"c_id": c, "head": c, "size": len(members), "cm": float(cm[c]),
                      "members": members})
        for v in members:
            membership.setdefault(v, set()).add(c)
    overlapped = sorted(v for v, cs in membership.items() if len(cs) >= 2)
    ov_set = set(overlapped)
    ov_comms = []
    for c in sorted(communities):
        hit = sorted(v for v in communities[c] if v in ov_set)
        if hit:
            ov_comms.append({"c_id": c, "overlapped_members": hit})
    overall = sum(cm.values(), Fraction(0)) / len(cm) if cm else Fraction(0)
    finite = diameter is not None and diameter != float("inf")
    meta = {"n": n, "m": m, "diameter": int(diameter) if finite else None,
            "schema_version": SCHEMA_VERSION}
    if labels:
        meta["labels"] = {str(i): lab for lab, i in sorted(labels.items(), key=lambda kv: kv[1])}
    if extra:
        meta.update(extra)
    return SimulationReport(
        communities=comms,
        overlapped_nodes=overlapped,
        overlapped_communities=ov_comms,
        rounds=rounds,
        messages=messages,
        modularity={"per_community": {str(c): float(cm[c]) for c in sorted(cm)},
                    "overall": float(overall)},
        meta=meta,
        diameter=int(diameter) if finite else None,
    )


@dataclass
class BoundCheck:
    diameter: int
    selection_rounds: int
    phase1_rounds: int
    phase1_messages: int
    phase2_rounds: int
    m: int
    checks: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


def round_stats(report: SimulationReport) -> BoundCheck:
    d = report.meta.get("component_diameter", report.meta["diameter"]) or 0
    r = report.rounds
    p1 = sum(report.messages["phase1"].values())
    bc = BoundCheck(d, r["phase1_selection"], r["phase1"], p1, r.get("phase2", 0), report.meta["m"])
    bc.checks = {
        "selection<=D+1": bc.selection_rounds <= d + 1,
        "phase1<=2(D+1)": bc.phase1_rounds <= 2 * (d + 1),
        "phase1_messages<=6m": bc.phase1_messages <= 6 * bc.m,
        f"phase2<={PHASE2_ROUND_FACTOR}D": bc.phase2_rounds <= PHASE2_ROUND_FACTOR * d,
    }
    return bc
