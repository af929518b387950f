"""Centralized ground truth for the distributed run.

``sequential_replay`` re-derives every decision from a global view using the
metrics module only; it never touches docd.protocol. ``brute_force_metrics``
recounts everything from neighbor pairs without docd.metrics.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

from docd import metrics
from docd.graph import Graph, diameter, max_component_diameter
from docd.report import SimulationReport, build_report

ZERO = Fraction(0)


@dataclass
class ReplayConfig:
    extra_sweeps: int = 1


class _Replay:
    def __init__(self, g: Graph, extra_sweeps: int):
        self.g = g
        self.extra_sweeps = extra_sweeps
        # v -> {c: parent or None}
        self.memb: dict[int, dict[int, int | None]] = {v: {} for v in g.vertices}
        self.labels: dict[tuple[int, int], int] = {}
        self.merge_passes = 0
        self.history: list[dict] = []

    # helpers ---------------------------------------------------------------

    def comms(self) -> dict[int, set[int]]:
        out: dict[int, set[int]] = {}
        for v, held in self.memb.items():
            for c in held:
                out.setdefault(c, set()).add(v)
        return out

    def nm(self, v: int, members) -> Fraction:
        return metrics.set_modularity(self.g, v, members)

    def depth(self, v: int, c: int) -> int:
        d = 0
        while self.memb[v][c] is not None:
            v = self.memb[v][c]
            d += 1
        return d

    def is_head(self, v: int) -> bool:
        return any(p is None for p in self.memb[v].values())

    def kids(self, v: int) -> set[int]:
        return {x for x in self.g.adjacency[v] if v in self.memb[x].values()}

    # Phase I -----------------------------------------------------------------

    def phase1(self) -> tuple[int, int, dict]:
        g = self.g
        cc = {v: metrics.cluster_coefficient(g, v) for v in g.vertices}
        heads = [v for v in g.vertices
                 if all((cc[v], -v) > (cc[u], -u) for u in g.adjacency[v])]
        layer = {}
        for h in heads:
            self.memb[h][h] = None
            layer[h] = 0
        frontier, d = set(heads), 0
        while frontier:
            d += 1
            fresh: dict[int, dict[int, int]] = {}
            for v in g.vertices:
                if self.memb[v]:
                    continue
                ann = [u for u in g.adjacency[v] if u in frontier]
                if not ann:
                    continue
                counts: dict[int, int] = {}
                for u in ann:
                    for c in self.memb[u]:
                        counts[c] = counts.get(c, 0) + 1
                best = max(counts.values())
                fresh[v] = {c: min(u for u in ann if c in self.memb[u])
                            for c, k in counts.items() if k == best}
            for v, picks in fresh.items():
                self.memb[v].update(picks)
                layer[v] = d
            frontier = set(fresh)

        if g.m == 0:
            return 0, 0, {"CC_msg": 0, "Join_Com": 0, "Complete": 0}
        top = max(layer.values())
        known = {v: max((2 + layer[u] for u in g.adjacency[v]), default=0) for v in g.vertices}

        @lru_cache(maxsize=None)
        def ready(v: int, c: int) -> int:
            t = known[v]
            for x in g.adjacency[v]:
                if self.memb[x].get(c, -1) == v:
                    t = max(t, arrive(x, v))
            return t

        @lru_cache(maxsize=None)
        def arrive(x: int, p: int) -> int:
            return 1 + max(ready(x, c) for c, q in self.memb[x].items() if q == p)

        last = max(2 + top, 0)
        edges_up = set()
        for v, held in self.memb.items():
            for c, p in held.items():
                if p is None:
                    last = max(last, ready(v, c))
                else:
                    edges_up.add((v, p))
                    last = max(last, arrive(v, p))
        msgs = {"CC_msg": 2 * g.m, "Join_Com": 2 * g.m, "Complete": len(edges_up)}
        return 1 + top, last, msgs

    # Phase II: movement --------------------------------------------------------

    def movement(self) -> None:
        g = self.g
        comm = self.comms()
        cm = {c: sum((self.nm(v, ms) for v in ms), ZERO) / len(ms) for c, ms in comm.items()}
        size = {c: len(ms) for c, ms in comm.items()}
        label = {(v, c): self.depth(v, c) for v in g.vertices for c in self.memb[v]}

        intents = {}
        for v in g.vertices:
            if not self.memb[v] or self.is_head(v):
                continue
            own = set(self.memb[v])
            leave = {}
            for c in own:
                if size[c] >= 2:
                    b = metrics.benefit_exclude(cm[c], size[c], self.nm(v, comm[c]))
                    if b > 0:
                        leave[c] = b
            join = {}
            for c in {c for u in g.adjacency[v] for c in self.memb[u]} - own:
                b = metrics.benefit_include(cm[c], size[c], self.nm(v, comm[c]))
                if b > 0:
                    join[c] = b
            if join:
                intents[v] = (_top(leave), _top(join))
        onm = {}
        for v in intents:
            union = set().union(*(comm[c] for c in self.memb[v]))
            onm[v] = self.nm(v, union)

        movers = []
        for v in sorted(intents):
            rivals = [u for u in g.adjacency[v] if u in intents]
            if any(not (onm[v], v) < (onm[u], u) for u in rivals):
                continue
            if any(g.degree(x) == 1 for x in self.kids(v)):
                continue
            movers.append(v)

        joins = []
        for v in movers:
            for c in intents[v][1]:
                gw = min(u for u in g.adjacency[v] if c in self.memb[u])
                joins.append((v, c, gw))
        leavers: dict[int, list] = {}
        for v in movers:
            for c, b in intents[v][0].items():
                leavers.setdefault(c, []).append((b, v, self.nm(v, comm[c])))
        accepted: dict[int, set[int]] = {}
        ml_log = []
        for c, ml in sorted(leavers.items()):
            cur, l = cm[c], size[c]
            for b, v, x in sorted(ml, key=lambda t: (-t[0], t[1])):
                if l <= 1:
                    break
                after = metrics.modularity_without(cur, l, x)
                if after >= cur:
                    ml_log.append((c, v, cur, after))
                    cur, l = after, l - 1
                    accepted.setdefault(c, set()).add(v)

        for v, c, gw in joins:
            self.memb[v][c] = gw
            label[(v, c)] = label[(gw, c)] + 1
        for c, gone in accepted.items():
            for v in gone:
                del self.memb[v][c]

        # orphan repair, shallowest first
        for c in sorted(accepted):
            members = sorted((v for v in g.vertices if c in self.memb[v]),
                             key=lambda v: (label[(v, c)], v))
            alive: set[int] = set()
            for w in members:
                p = self.memb[w][c]
                if p is None or p in alive:
                    alive.add(w)
                    continue
                anchors = [y for y in g.adjacency[w] if y in alive and label[(y, c)] < label[(w, c)]]
                if anchors:
                    self.memb[w][c] = min(anchors)
                    alive.add(w)
                else:
                    del self.memb[w][c]

        homeless = [v for v in g.vertices if not self.memb[v]]
        picks = {}
        for v in homeless:
            counts: dict[int, int] = {}
            for u in g.adjacency[v]:
                for c in self.memb[u]:
                    counts[c] = counts.get(c, 0) + 1
            if not counts:
                picks[v] = {v: None}
                continue
            best = max(counts.values())
            picks[v] = {c: min(u for u in g.adjacency[v] if c in self.memb[u])
                        for c, k in counts.items() if k == best}
        for v, held in picks.items():
            self.memb[v].update(held)
        self.history.append({"kind": "movement", "movers": tuple(movers), "ml": tuple(ml_log)})

    # Phase II: merging ---------------------------------------------------------

    def merge(self) -> int:
        g = self.g
        comm = self.comms()
        total = {c: sum((self.nm(v, ms) for v in ms), ZERO) for c, ms in comm.items()}
        n = {c: len(ms) for c, ms in comm.items()}
        cm = {c: total[c] / n[c] for c in comm}

        def union_total(i: int, j: int) -> Fraction:
            both = comm[i] | comm[j]
            return sum((self.nm(v, both) for v in comm[i]), ZERO)

        want: dict[int, int] = {}
        for i in sorted(comm):
            best, key = None, None
            for j in sorted(comm):
                if j == i:
                    continue
                k = len(comm[i] & comm[j])
                if k < 1 or 2 * k < n[i]:
                    continue
                own = union_total(i, j) / n[i]
                if own <= cm[i]:
                    continue
                cand = (Fraction(k, n[i]), own, -j)
                if key is None or cand > key:
                    best, key = j, cand
            if best is not None:
                want[i] = best

        asked: dict[int, list[int]] = {}
        for i, j in want.items():
            asked.setdefault(j, []).append(i)
        confirmed = []
        for j, reqs in sorted(asked.items()):
            if j in want:
                t = want[j]
                pool = [t] if t in reqs and j < t else []
            else:
                pool = sorted(reqs)
            for i in pool:
                both = comm[i] | comm[j]
                merged = sum((self.nm(v, both) for v in both), ZERO) / len(both)
                if merged > max(cm[i], cm[j]):
                    confirmed.append((i, j))

        renames: dict[int, dict[int, list[tuple[int, int | None]]]] = {}
        for i, j in confirmed:
            parent = {v: self.memb[v][i] for v in comm[i]}
            kids: dict[int, list[int]] = {}
            for v, p in parent.items():
                if p is not None:
                    kids.setdefault(p, []).append(v)

            @lru_cache(maxsize=None)
            def has_shared(x: int) -> bool:
                return x in comm[j] or any(has_shared(y) for y in kids.get(x, ()))

            def hint(x: int) -> int:
                return min(y for y in kids.get(x, ()) if has_shared(y))

            new_parent = dict(parent)
            x = i
            while x not in comm[j]:
                new_parent[x] = hint(x)
                x = new_parent[x]
            for v in comm[i]:
                renames.setdefault(v, {}).setdefault(j, []).append((i, new_parent[v]))

        for v, by_target in renames.items():
            for j, olds in by_target.items():
                had = j in self.memb[v]
                for i, _ in olds:
                    del self.memb[v][i]
                if not had:
                    i, p = min(olds)
                    self.memb[v][j] = p
        self.merge_passes += 1
        self.history.append({"kind": "merging", "merges": tuple(confirmed)})
        return len(confirmed)

    def run(self) -> SimulationReport:
        sel, p1, msgs = self.phase1()
        for _ in range(1 + self.extra_sweeps):
            self.movement()
            while self.merge():
                pass
        comm = self.comms()
        a = metrics.CommunityAssignment.from_communities(comm)
        cm = {c: metrics.community_modularity(self.g, a, c) for c in comm}
        rounds = {"phase1_selection": sel, "phase1": p1, "movement": None, "merging": None,
                  "phase2": None, "total": None}
        extra = {"extra_sweeps": self.extra_sweeps,
                 "component_diameter": max_component_diameter(self.g),
                 "merge_passes": self.merge_passes}
        return build_report(n=self.g.n, m=self.g.m, diameter=diameter(self.g), communities=comm,
                            cm=cm, rounds=rounds, messages={"phase1": msgs, "phase2": None, "total": None},
                            labels=self.g.label_map, extra=extra)


def _top(scored: dict[int, Fraction]) -> dict[int, Fraction]:
    if not scored:
        return {}
    best = max(scored.values())
    return {c: b for c, b in scored.items() if b == best}


def sequential_replay(g: Graph, cfg=None) -> SimulationReport:
    extra = getattr(cfg, "extra_sweeps", 1) if cfg is not None else 1
    return _Replay(g, extra).run()


def replay_with_history(g: Graph, extra_sweeps: int = 1) -> tuple[SimulationReport, list[dict]]:
    r = _Replay(g, extra_sweeps)
    report = r.run()
    return report, r.history


# brute force -----------------------------------------------------------------

def brute_force_metrics(g: Graph, communities: dict[int, set[int]]) -> dict:
    """CC/NM/ONM/CM/overall by literal neighbor-pair counting."""
    adj = {v: set(ns) for v, ns in g.adjacency.items()}

    def score(v: int, keep) -> Fraction:
        nbrs = sorted(adj[v])
        d = len(nbrs)
        if d < 2:
            return ZERO
        hits = 0
        for a, b in itertools.combinations(nbrs, 2):
            if b in adj[a] and keep(a) and keep(b):
                hits += 1
        return Fraction(2 * hits, d * (d - 1))

    held: dict[int, list[int]] = {}
    for c, ms in communities.items():
        for v in ms:
            held.setdefault(v, []).append(c)
    cc = {v: score(v, lambda _: True) for v in g.vertices}
    nm = {}
    cm = {}
    for c, ms in communities.items():
        ms = set(ms)
        vals = []
        for v in ms:
            nm[(v, c)] = score(v, lambda u, ms=ms: u in ms)
            vals.append(nm[(v, c)])
        cm[c] = sum(vals, ZERO) / len(vals)
    onm = {}
    for v, cs in held.items():
        union = set()
        for c in cs:
            union |= set(communities[c])
        onm[v] = score(v, lambda u, union=union: u in union)
    overall = sum(cm.values(), ZERO) / len(cm) if cm else None
    return {"cc": cc, "nm": nm, "onm": onm, "cm": cm, "overall": overall}


def _partitions(items: list[int]):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _partitions(rest):
        for k in range(len(part)):
            yield part[:k] + [[first] + part[k]] + part[k + 1:]
        yield [[first]] + part


def exhaustive_partition_baseline(g: Graph, max_n: int = 10) -> tuple[Fraction, list[list[int]]]:
    """Best overall CM over all set partitions of the vertices."""
    if g.n > max_n:
        raise ValueError(f"exhaustive search refused for n={g.n} > {max_n}")
    best, arg = None, None
    for part in _partitions(list(g.vertices)):
        vals = brute_force_metrics(g, {k: set(b) for k, b in enumerate(part)})
        score = vals["overall"]
        if best is None or score > best:
            best, arg = score, sorted(sorted(b) for b in part)
    return best, arg
