"""Invariant checks over a running Simulation, shared by several test modules."""

from docd import engine, metrics


class Violation(AssertionError):
    pass


def _require(cond, msg):
    if not cond:
        raise Violation(msg)


def check_forest(sim, rosters=True):
    """Every membership has a parent chain of neighbors ending at the head.

    Head sizes are only exact after a quiescent probe, so ``rosters`` is off
    right after a pass that merged.
    """
    comms = sim.assignment()
    for c, members in comms.items():
        head = sim.states.get(c)
        _require(head is not None and head.head_of() == c, f"community {c} lacks its head")
        _require(not rosters or head.cl[c].c_size == len(members), f"head {c} roster {head.cl[c].c_size} != {len(members)}")
        for v in members:
            seen, x = set(), v
            while sim.states[x].cl[c].p_id is not None:
                p = sim.states[x].cl[c].p_id
                _require(p in sim.g.adjacency[x], f"{x} parent {p} in {c} is not a neighbor")
                _require(p in members, f"{x} parent {p} outside {c}")
                _require(x not in seen, f"cycle through {x} in {c}")
                seen.add(x)
                x = p
            _require(x == c, f"{v} reaches {x}, not head {c}")


def check_phase1(sim):
    for v, s in sim.states.items():
        _require(len(s.cl) >= 1, f"{v} has no community after Phase I")
    heads = [v for v, s in sim.states.items() if s.head]
    for v in heads:
        for u in sim.g.adjacency[v]:
            _require(u not in heads, f"adjacent heads {v} and {u}")
    check_forest(sim)


def check_movement(sim):
    rec = sim.passes[-1]
    movers = set(rec.movers)
    for v in movers:
        _require(sim.states[v].intent.kind.value != "Stay", f"{v} moved without an intent")
        for u in sim.g.adjacency[v]:
            _require(u not in movers, f"adjacent movers {v} and {u}")
    for c, v, before, after in rec.ml:
        _require(after >= before, f"leave of {v} lowered cm of {c}")


def check_final(sim, report):
    check_forest(sim)
    comms = sim.assignment()
    a = metrics.CommunityAssignment.from_communities(comms)
    table = metrics.metrics_table(sim.g, a)
    for v in sim.g.vertices:
        for c in a.of(v):
            _require(table.nm[(v, c)] <= table.onm[v] <= table.cc[v], f"ordering broken at {v}")
    overlapped = {v for v, s in sim.states.items() if len(s.cl) >= 2}
    _require(overlapped == set(report.overlapped_nodes), "overlapped set mismatch")
    for c in report.communities:
        _require(c["cm"] == float(table.cm[c["c_id"]]), f"reported cm of {c['c_id']} is stale")


def run_checked(g, cfg=None):
    sim = engine.Simulation(g, cfg)

    def observe(label, s):
        if label == "phase1":
            check_phase1(s)
        elif label == "movement":
            check_movement(s)
        else:
            check_forest(s, rosters=s.passes[-1].merges == 0)

    report = sim.execute(observe)
    check_final(sim, report)
    return sim, report
