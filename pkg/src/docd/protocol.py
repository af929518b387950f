"""Per-node DOCD state machine.

Every node only reads its own state and its inbox. The engine calls
``begin_stage`` once per node at each stage barrier and ``step`` whenever a
node has mail; both return the node's outbox for the current round.

Stage order (see engine.run):

    PHASE1
    repeated sweeps of:
        MOVE_FLOOD, MOVE_INTENT, MOVE_DECIDE, MOVE_LEAVE, MOVE_REPAIR, MOVE_RESELECT
        (MERGE_PROBE, MERGE_REQUEST, MERGE_CONFIRM, MERGE_APPLY, MERGE_SETTLE)+
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, NamedTuple

from docd import metrics
from docd.graph import Graph, neighbors

ZERO = Fraction(0)


class ProtocolFault(RuntimeError):
    """A node received a message its state cannot account for."""


class Kind(str, enum.Enum):
    CC = "CC_msg"
    JOIN_COM = "Join_Com"
    COMPLETE = "Complete"
    MOVEMENT = "Movement"
    ONM = "ONM_msg"
    DECISION = "Decision"
    LEAVE_ACCEPTED = "Leave_Accepted"
    JOIN_REQ = "Join_Req"
    MERGE_REQ = "Merge_Req"
    CONFIRM = "Confirm"
    UPDATE_COM = "Update_Com"


PHASE1_KINDS = (Kind.CC, Kind.JOIN_COM, Kind.COMPLETE)


class Phase(str, enum.Enum):
    HEAD_ELECTION = "HeadElection"
    SELECTION = "Selection"
    COMPLETING = "Completing"
    MOVEMENT = "Movement"
    MERGING = "Merging"
    DONE = "Done"


class Stage(str, enum.Enum):
    PHASE1 = "phase1"
    MOVE_FLOOD = "move_flood"
    MOVE_INTENT = "move_intent"
    MOVE_DECIDE = "move_decide"
    MOVE_LEAVE = "move_leave"
    MOVE_REPAIR = "move_repair"
    MOVE_RESELECT = "move_reselect"
    MERGE_PROBE = "merge_probe"
    MERGE_REQUEST = "merge_request"
    MERGE_CONFIRM = "merge_confirm"
    MERGE_APPLY = "merge_apply"
    MERGE_SETTLE = "merge_settle"


MOVEMENT_STAGES = (Stage.MOVE_FLOOD, Stage.MOVE_INTENT, Stage.MOVE_DECIDE,
                   Stage.MOVE_LEAVE, Stage.MOVE_REPAIR, Stage.MOVE_RESELECT)
MERGE_STAGES = (Stage.MERGE_PROBE, Stage.MERGE_REQUEST, Stage.MERGE_CONFIRM,
                Stage.MERGE_APPLY, Stage.MERGE_SETTLE)


# payloads ------------------------------------------------------------------
# Join_Com and Complete carry one entry per community the sender holds, so a
# node announces itself once per neighbor however many communities it joins.

class Membership(NamedTuple):
    c_id: int
    p_id: int | None
    label: int


class CCMsg(NamedTuple):
    cc: Fraction


class JoinCom(NamedTuple):
    v: int
    entries: tuple[Membership, ...]


class Candidate(NamedTuple):
    c_id: int
    delta: Fraction        # Σ (NM w.r.t. the union − NM w.r.t. own community)
    share: int             # members also holding c_id
    shared_nm: Fraction    # Σ NM over those shared members (own community)
    shared_delta: Fraction


class CompleteEntry(NamedTuple):
    c_id: int
    nm: Fraction           # subtree mean
    c_size: int            # subtree size
    candidates: tuple[Candidate, ...] = ()


class Complete(NamedTuple):
    v: int
    entries: tuple[CompleteEntry, ...]


class Movement(NamedTuple):
    c_id: int
    cm: Fraction
    c_size: int
    label: int


class ONMMsg(NamedTuple):
    onm: Fraction


class Decision(NamedTuple):
    v: int
    c_id: int
    nm: Fraction
    benefit: Fraction
    leave: bool


class LeaveAccepted(NamedTuple):
    v: int
    c_id: int
    cm: Fraction
    c_size: int
    seq: int


class JoinReq(NamedTuple):
    v: int
    c_id: int
    nm: Fraction


class MergeReq(NamedTuple):
    v: int                 # requesting head (its community id)
    c_id: int              # target community
    onm: Fraction
    total: Fraction        # Σ over requester members of NM w.r.t. the union
    c_size: int
    share: int
    shared_total: Fraction
    cm: Fraction


class Confirm(NamedTuple):
    v: int
    c_id: int
    c_size: int
    cm: Fraction
    requester: int


class UpdateCom(NamedTuple):
    v: int
    c_id: int
    c_size: int
    cm: Fraction
    old_c_id: int
    on_path: bool


def _fmt(x) -> str:
    if isinstance(x, Fraction):
        return repr(float(x))
    if isinstance(x, tuple) and hasattr(x, "_fields"):
        return "(" + ",".join(f"{k}={_fmt(getattr(x, k))}" for k in x._fields) + ")"
    if isinstance(x, tuple):
        return "[" + ",".join(_fmt(e) for e in x) + "]"
    return str(x)


@dataclass(frozen=True)
class Message:
    kind: Kind
    src: int
    dst: int
    payload: NamedTuple
    round: int = 0

    def trace_line(self, delivered: int) -> str:
        return (f"round={delivered} kind={self.kind.value} from={self.src} to={self.dst} "
                f"payload={_fmt(self.payload)}")


# state ---------------------------------------------------------------------

@dataclass
class CommunityRecord:
    c_id: int
    c_size: int
    p_id: int | None
    cm: Fraction
    label: int = 0
    seq: int = 0


class IntentKind(str, enum.Enum):
    STAY = "Stay"
    JOIN_KEEPING = "JoinKeeping"
    LEAVE_AND_JOIN = "LeaveAndJoin"


@dataclass(frozen=True)
class MovementIntent:
    kind: IntentKind
    leave: tuple[tuple[int, Fraction], ...] = ()
    join: tuple[tuple[int, Fraction], ...] = ()


STAY = MovementIntent(IntentKind.STAY)


@dataclass
class NodeState:
    id: int
    nbrs: tuple[int, ...]
    gamma_nbrs: dict[int, frozenset[int]]
    local_edges: tuple[tuple[int, int], ...]
    cc: Fraction
    gamma_comms: dict[int, tuple[int, Fraction, int]] = field(default_factory=dict)
    nbr_comms: dict[int, dict[int, Membership]] = field(default_factory=dict)
    cl: dict[int, CommunityRecord] = field(default_factory=dict)
    children: dict[int, set[int]] = field(default_factory=dict)
    z: tuple = ()
    phase: Phase = Phase.HEAD_ELECTION
    lock: bool = False
    nm: dict[int, Fraction] = field(default_factory=dict)
    onm: Fraction = ZERO
    now: int = 0
    # per-stage scratch
    cc_seen: dict[int, Fraction] = field(default_factory=dict)
    reports: dict[int, dict[int, CompleteEntry]] = field(default_factory=dict)
    sent_up: set[int] = field(default_factory=set)
    hints: dict[tuple[int, int], int] = field(default_factory=dict)
    probe: dict[int, tuple[int, Fraction, dict]] = field(default_factory=dict)
    flooded: set = field(default_factory=set)
    intent: MovementIntent = STAY
    moving: bool = False
    onm_seen: dict[int, Fraction] = field(default_factory=dict)
    decisions: dict[int, list[Decision]] = field(default_factory=dict)
    join_reqs: dict[int, list[JoinReq]] = field(default_factory=dict)
    pending_leave: set[int] = field(default_factory=set)
    merge_target: int | None = None
    requests: list[MergeReq] = field(default_factory=list)
    confirm: Confirm | None = None
    renames: dict[int, tuple[int, bool, int, Fraction]] = field(default_factory=dict)
    ml_log: list[tuple[int, int, Fraction, Fraction]] = field(default_factory=list)

    @property
    def join(self) -> bool:
        return bool(self.cl)

    @property
    def head(self) -> bool:
        return any(r.p_id is None for r in self.cl.values())

    @property
    def parent(self) -> bool:
        return any(self.children.get(c) for c in self.cl)

    @property
    def degree(self) -> int:
        return len(self.nbrs)

    @property
    def overlapped(self) -> bool:
        return len(self.cl) >= 2

    def head_of(self) -> int | None:
        for c, r in self.cl.items():
            if r.p_id is None:
                return c
        return None

    def send(self, kind: Kind, dst: int, payload) -> Message:
        return Message(kind, self.id, dst, payload, self.now)

    def broadcast(self, kind: Kind, payload, exclude: int | None = None) -> list[Message]:
        return [self.send(kind, u, payload) for u in self.nbrs if u != exclude]

    # local metric views -------------------------------------------------

    def _in(self, u: int, *cs: int) -> bool:
        held = self.nbr_comms.get(u)
        return bool(held) and any(c in held for c in cs)

    def nm_of(self, *cs: int) -> Fraction:
        """NM w.r.t. the union of communities cs, from neighbor memberships."""
        return metrics.local_ratio(self.degree, self.local_edges, lambda u: self._in(u, *cs))

    def onm_now(self) -> Fraction:
        return self.nm_of(*self.cl)

    def announcement(self) -> JoinCom:
        return JoinCom(self.id, tuple(Membership(c, r.p_id, r.label) for c, r in sorted(self.cl.items())))


def init_node(g: Graph, v: int) -> NodeState:
    nbrs = neighbors(g, v)
    gamma = {u: g.neighbor_set(u) for u in nbrs}
    edges = tuple(metrics.neighbor_edges(g, v))
    cc = metrics.local_ratio(len(nbrs), edges)
    return NodeState(id=v, nbrs=nbrs, gamma_nbrs=gamma, local_edges=edges, cc=cc)


def _learn(state: NodeState, msg: JoinCom) -> None:
    """Record a neighbor's membership announcement and update child sets."""
    u = msg.v
    state.nbr_comms[u] = {e.c_id: e for e in msg.entries}
    mine = {e.c_id for e in msg.entries if e.p_id == state.id}
    for c in mine:
        state.children.setdefault(c, set()).add(u)
    for c, kids in state.children.items():
        if c not in mine:
            kids.discard(u)


def _by_kind(inbox: Iterable[Message], *kinds: Kind) -> list[Message]:
    return [m for m in inbox if m.kind in kinds]


# Phase I -------------------------------------------------------------------

def elect_head(state: NodeState, inbox: list[Message]) -> list[Message]:
    for m in inbox:
        state.cc_seen[m.src] = m.payload.cc
    if set(state.cc_seen) != set(state.nbrs):
        missing = sorted(set(state.nbrs) - set(state.cc_seen))
        raise ProtocolFault(f"node {state.id}: missing CC_msg from {missing}")
    mine = (state.cc, -state.id)
    if all(mine > (cc, -u) for u, cc in state.cc_seen.items()):
        state.cl[state.id] = CommunityRecord(state.id, 1, None, state.cc, 0)
        state.phase = Phase.COMPLETING
        return state.broadcast(Kind.JOIN_COM, state.announcement())
    state.phase = Phase.SELECTION
    return []


def choose_communities(state: NodeState, inbox: list[Message]) -> list[Message]:
    """Join every community announced by the largest number of neighbors."""
    for m in inbox:
        for e in m.payload.entries:
            state.gamma_comms.setdefault(e.c_id, (-1, Fraction(-1), 0))
    counts: dict[int, int] = {}
    for held in state.nbr_comms.values():
        for c in held:
            counts[c] = counts.get(c, 0) + 1
    if not counts:
        return []
    best = max(counts.values())
    for c in sorted(c for c, k in counts.items() if k == best):
        p = min(u for u, held in state.nbr_comms.items() if c in held)
        label = state.nbr_comms[p][c].label + 1
        state.cl[c] = CommunityRecord(c, 1, p, state.cc, label)
    state.phase = Phase.COMPLETING
    return state.broadcast(Kind.JOIN_COM, state.announcement())


def _own_entry(state: NodeState, c: int, with_candidates: bool) -> tuple[Fraction, dict]:
    nm = state.nm_of(c)
    state.nm[c] = nm
    cands: dict[int, list] = {}
    if with_candidates:
        visible = set(state.cl)
        for held in state.nbr_comms.values():
            visible.update(held)
        visible.discard(c)
        for j in sorted(visible):
            delta = state.nm_of(c, j) - nm
            shared = j in state.cl
            if delta or shared:
                cands[j] = [delta, int(shared), nm if shared else ZERO, delta if shared else ZERO]
    return nm, cands


def _ready(state: NodeState, c: int) -> bool:
    kids = state.children.get(c, set())
    return kids.issubset(state.reports.get(c, {}))


def _aggregate(state: NodeState, c: int, with_candidates: bool) -> CompleteEntry:
    nm, cands = _own_entry(state, c, with_candidates)
    size, total = 1, nm
    for x, e in sorted(state.reports.get(c, {}).items()):
        size += e.c_size
        total += e.nm * e.c_size
        for cand in e.candidates:
            acc = cands.setdefault(cand.c_id, [ZERO, 0, ZERO, ZERO])
            acc[0] += cand.delta
            acc[1] += cand.share
            acc[2] += cand.shared_nm
            acc[3] += cand.shared_delta
            if cand.share and (c, cand.c_id) not in state.hints:
                state.hints[(c, cand.c_id)] = x
    for j in cands:
        if j in state.cl:
            state.hints[(c, j)] = state.id
    packed = tuple(Candidate(j, *acc) for j, acc in sorted(cands.items()))
    return CompleteEntry(c, total / size, size, packed)


def aggregate_complete(state: NodeState, inbox: list[Message], with_candidates: bool = False,
                       bundle: bool = True) -> list[Message]:
    """Convergecast (subtree mean, subtree size) toward each community head.

    In Phase I one Complete per (child, parent) edge carries every community
    routed through that parent; in Phase II probes go per community.
    """
    for m in inbox:
        for e in m.payload.entries:
            if m.src not in state.children.get(e.c_id, ()):
                raise ProtocolFault(f"node {state.id}: Complete for {e.c_id} from unregistered child {m.src}")
            state.reports.setdefault(e.c_id, {})[m.src] = e
    if state.phase in (Phase.HEAD_ELECTION, Phase.SELECTION):
        return []
    if len(state.nbr_comms) < state.degree:
        return []
    out: list[Message] = []
    by_parent: dict[int, list[int]] = {}
    for c, r in sorted(state.cl.items()):
        if c in state.sent_up:
            continue
        if r.p_id is None:
            if _ready(state, c):
                e = _aggregate(state, c, with_candidates)
                r.c_size, r.cm = e.c_size, e.nm
                state.probe[c] = (e.c_size, e.nm * e.c_size,
                                  {k.c_id: k for k in e.candidates})
                state.sent_up.add(c)
            continue
        by_parent.setdefault(r.p_id, []).append(c)
    for p, cs in sorted(by_parent.items()):
        groups = [cs] if bundle else [[c] for c in cs]
        for group in groups:
            if all(_ready(state, c) for c in group):
                entries = tuple(_aggregate(state, c, with_candidates) for c in group)
                state.sent_up.update(group)
                out.append(state.send(Kind.COMPLETE, p, Complete(state.id, entries)))
    return out


# Phase II: movement ---------------------------------------------------------

def _keep_max(scored: dict[int, Fraction]) -> tuple[tuple[int, Fraction], ...]:
    if not scored:
        return ()
    best = max(scored.values())
    return tuple((c, b) for c, b in sorted(scored.items()) if b == best)


def compute_movement_decision(state: NodeState, inbox: Iterable[Message] = ()) -> MovementIntent:
    for m in inbox:
        _absorb_movement(state, m)
    if not state.cl or state.head:
        return STAY
    bl_self: dict[int, Fraction] = {}
    for c, r in state.cl.items():
        if r.c_size >= 2:
            b = metrics.benefit_exclude(r.cm, r.c_size, state.nm_of(c))
            if b > 0:
                bl_self[c] = b
    bl_nbr: dict[int, Fraction] = {}
    seen = {c for held in state.nbr_comms.values() for c in held} - set(state.cl)
    for c in seen:
        size, cm, _ = state.gamma_comms[c]
        b = metrics.benefit_include(cm, size, state.nm_of(c))
        if b > 0:
            bl_nbr[c] = b
    leave, join = _keep_max(bl_self), _keep_max(bl_nbr)
    if not join:
        return STAY
    if not leave:
        return MovementIntent(IntentKind.JOIN_KEEPING, (), join)
    return MovementIntent(IntentKind.LEAVE_AND_JOIN, leave, join)


def _absorb_movement(state: NodeState, m: Message) -> list[Message]:
    p: Movement = m.payload
    held = state.nbr_comms.get(m.src)
    if held is not None and p.c_id in held:
        held[p.c_id] = held[p.c_id]._replace(label=p.label)
    state.gamma_comms[p.c_id] = (p.c_size, p.cm, 0)
    r = state.cl.get(p.c_id)
    if r is not None and r.p_id == m.src and p.c_id not in state.flooded:
        r.cm, r.c_size, r.label, r.seq = p.cm, p.c_size, p.label + 1, 0
        state.flooded.add(p.c_id)
        return state.broadcast(Kind.MOVEMENT, Movement(p.c_id, p.cm, p.c_size, r.label))
    return []


def resolve_lock(state: NodeState, inbox: Iterable[Message], intent: MovementIntent) -> list[Message]:
    for m in inbox:
        state.onm_seen[m.src] = m.payload.onm
    proceed = intent.kind is not IntentKind.STAY
    if proceed:
        mine = (state.onm, state.id)
        if any(not mine < (onm, u) for u, onm in state.onm_seen.items()):
            proceed = False
        kids = set().union(*state.children.values()) if state.children else set()
        if any(len(state.gamma_nbrs[x]) == 1 for x in kids):
            proceed = False
    state.lock = intent.kind is not IntentKind.STAY and not proceed
    state.moving = proceed
    out: list[Message] = []
    leaving = dict(intent.leave) if proceed else {}
    for c, r in sorted(state.cl.items()):
        if r.p_id is None:
            continue
        nm = state.nm_of(c)
        b = leaving.get(c, ZERO)
        out.append(state.send(Kind.DECISION, r.p_id, Decision(state.id, c, nm, b, c in leaving)))
    if proceed:
        for c, _ in intent.join:
            out.extend(_join_via_gateway(state, c))
        out.extend(state.broadcast(Kind.JOIN_COM, state.announcement()))
    return out


def _join_via_gateway(state: NodeState, c: int) -> list[Message]:
    gw = min(u for u, held in state.nbr_comms.items() if c in held)
    size, cm, _ = state.gamma_comms.get(c, (1, ZERO, 0))
    nm = state.nm_of(c)
    state.cl[c] = CommunityRecord(c, size, gw, cm, state.nbr_comms[gw][c].label + 1)
    return [state.send(Kind.JOIN_REQ, gw, JoinReq(state.id, c, nm))]


def _route_up(state: NodeState, m: Message) -> list[Message]:
    """Deliver Decision/Join_Req at the head or pass it to the parent."""
    p = m.payload
    r = state.cl.get(p.c_id)
    if r is None:
        raise ProtocolFault(f"node {state.id}: {m.kind.value} for foreign community {p.c_id}")
    if r.p_id is None:
        box = state.decisions if m.kind is Kind.DECISION else state.join_reqs
        box.setdefault(p.c_id, []).append(p)
        return []
    return [state.send(m.kind, r.p_id, p)]


def head_process_leaves(state: NodeState, decisions: list[Decision]) -> list[Message]:
    c = state.head_of()
    if c is None:
        raise ProtocolFault(f"node {state.id}: leave processing on a non-head")
    r = state.cl[c]
    if len(decisions) != r.c_size - 1:
        raise ProtocolFault(f"head {state.id}: {len(decisions)} decisions for {r.c_size - 1} members")
    ml = sorted((d for d in decisions if d.leave), key=lambda d: (-d.benefit, d.v))
    out: list[Message] = []
    for seq, d in enumerate(ml, start=1):
        if r.c_size <= 1:
            break
        after = metrics.modularity_without(r.cm, r.c_size, d.nm)
        if after >= r.cm:
            state.ml_log.append((c, d.v, r.cm, after))
            r.cm, r.c_size = after, r.c_size - 1
            state.flooded.add((c, d.v))
            if d.v in state.nbr_comms:
                state.nbr_comms[d.v].pop(c, None)
            state.children.get(c, set()).discard(d.v)
            out.extend(state.broadcast(Kind.LEAVE_ACCEPTED, LeaveAccepted(d.v, c, r.cm, r.c_size, seq)))
    return out


def _apply_joins(state: NodeState) -> None:
    for c, reqs in sorted(state.join_reqs.items()):
        r = state.cl[c]
        for q in sorted(reqs, key=lambda q: q.v):
            r.cm = metrics.modularity_with(r.cm, r.c_size, q.nm)
            r.c_size += 1
    state.join_reqs.clear()


def _absorb_leave(state: NodeState, m: Message) -> list[Message]:
    p: LeaveAccepted = m.payload
    key = (p.c_id, p.v)
    if key in state.flooded:
        return []
    state.flooded.add(key)
    if p.v in state.nbr_comms:
        state.nbr_comms[p.v].pop(p.c_id, None)
        state.children.get(p.c_id, set()).discard(p.v)
    r = state.cl.get(p.c_id)
    if r is None:
        size, cm, seq = state.gamma_comms.get(p.c_id, (0, ZERO, 0))
        if p.seq > seq:
            state.gamma_comms[p.c_id] = (p.c_size, p.cm, p.seq)
        return []
    if p.seq > r.seq:
        r.cm, r.c_size, r.seq = p.cm, p.c_size, p.seq
    if p.v == state.id:
        state.pending_leave.add(p.c_id)
    return state.broadcast(Kind.LEAVE_ACCEPTED, p, exclude=m.src)


def _repair(state: NodeState) -> bool:
    """Re-parent orphaned memberships; drop those with no lower-labelled anchor."""
    changed = False
    for c in sorted(state.cl):
        r = state.cl[c]
        if r.p_id is None:
            continue
        if c in state.nbr_comms.get(r.p_id, {}):
            continue
        anchors = [u for u in state.nbrs
                   if c in state.nbr_comms.get(u, {}) and state.nbr_comms[u][c].label < r.label]
        if anchors:
            r.p_id = min(anchors)
        else:
            del state.cl[c]
            state.children.pop(c, None)
        changed = True
    return changed


def _reselect(state: NodeState) -> list[Message]:
    counts: dict[int, int] = {}
    for held in state.nbr_comms.values():
        for c in held:
            counts[c] = counts.get(c, 0) + 1
    out: list[Message] = []
    if not counts:
        state.cl[state.id] = CommunityRecord(state.id, 1, None, ZERO, 0)
    else:
        best = max(counts.values())
        for c in sorted(c for c, k in counts.items() if k == best):
            out.extend(_join_via_gateway(state, c))
    out.extend(state.broadcast(Kind.JOIN_COM, state.announcement()))
    return out


# Phase II: merging ----------------------------------------------------------

def _merge_choice(state: NodeState) -> tuple[int, MergeReq] | None:
    c = state.head_of()
    if c is None:
        return None
    n, total, cands = state.probe[c]
    cm = total / n
    best, best_key = None, None
    for j, k in cands.items():
        if k.share < 1 or 2 * k.share < n:
            continue
        own = (total + k.delta) / n
        if own <= cm:
            continue
        key = (Fraction(k.share, n), own, -j)
        if best_key is None or key > best_key:
            best, best_key = j, key
    if best is None:
        return None
    k = cands[best]
    req = MergeReq(c, best, state.onm_now(), total + k.delta, n, k.share,
                   k.shared_nm + k.shared_delta, cm)
    return best, req


def _route_merge(state: NodeState, kind: Kind, payload, origin: int, target: int) -> list[Message]:
    """Route down origin's tree toward a shared member, then up target's tree."""
    r = state.cl.get(target)
    if r is not None:
        if r.p_id is None:
            return []
        return [state.send(kind, r.p_id, payload)]
    hop = state.hints.get((origin, target))
    if hop is None or hop == state.id:
        raise ProtocolFault(f"node {state.id}: no route from {origin} to {target}")
    return [state.send(kind, hop, payload)]


def merged_modularity(req: MergeReq, own_total: Fraction, own_size: int) -> Fraction:
    return (req.total + own_total - req.shared_total) / (req.c_size + own_size - req.share)


def _answer_requests(state: NodeState) -> list[Message]:
    c = state.head_of()
    if c is None or not state.requests:
        return []
    n, total, cands = state.probe[c]
    cm = total / n
    if state.merge_target is not None:
        t = state.merge_target
        pool = [q for q in state.requests if q.v == t] if c < t else []
    else:
        pool = sorted(state.requests, key=lambda q: q.v)
    out: list[Message] = []
    r = state.cl[c]
    for q in pool:
        k = cands.get(q.v)
        own_total = total + (k.delta if k else ZERO)
        merged = merged_modularity(q, own_total, n)
        if merged > max(q.cm, cm):
            r.c_size += q.c_size - q.share
            r.cm = merged
            conf = Confirm(c, c, r.c_size, merged, q.v)
            out.extend(_route_merge(state, Kind.CONFIRM, conf, c, q.v))
    if out:
        state.merge_target = None
    return out


def _start_update(state: NodeState, p: UpdateCom) -> list[Message]:
    old, new = p.old_c_id, p.c_id
    if old not in state.cl or old in state.renames:
        return []
    shared = new in state.cl
    on_path = p.on_path and not shared
    state.renames[old] = (new, on_path, p.c_size, p.cm)
    hop = state.hints.get((old, new)) if on_path else None
    out = []
    for x in sorted(state.children.get(old, ())):
        q = UpdateCom(state.id, new, p.c_size, p.cm, old, x == hop)
        out.append(state.send(Kind.UPDATE_COM, x, q))
    return out


def _settle(state: NodeState) -> bool:
    if not state.renames:
        return False
    by_target: dict[int, list[int]] = {}
    for old, (new, _, _, _) in state.renames.items():
        by_target.setdefault(new, []).append(old)
    for new, olds in sorted(by_target.items()):
        keep = None if new in state.cl else min(olds)
        for old in sorted(olds):
            rec = state.cl.pop(old)
            kids = state.children.pop(old, set())
            state.children.setdefault(new, set()).update(kids)
            if old == keep:
                _, on_path, size, cm = state.renames[old]
                parent = state.hints[(old, new)] if on_path else rec.p_id
                state.cl[new] = CommunityRecord(new, size, parent, cm, rec.label)
    state.renames.clear()
    return True


def identify_overlaps(state: NodeState) -> tuple[tuple[int, tuple[int, ...]], ...]:
    z = []
    for c in sorted(state.cl):
        known = {state.id} if state.overlapped else set()
        for u, held in state.nbr_comms.items():
            if c in held and len(held) >= 2:
                known.add(u)
        if known:
            z.append((c, tuple(sorted(known))))
    state.z = tuple(z)
    return state.z


# dispatch -------------------------------------------------------------------

def _reset_merge(state: NodeState) -> None:
    state.reports, state.sent_up, state.hints, state.probe = {}, set(), {}, {}
    state.merge_target, state.requests, state.confirm, state.renames = None, [], None, {}


def begin_stage(state: NodeState, stage: Stage) -> list[Message]:
    """Stage-barrier entry: everything a node does before its first delivery."""
    if stage is Stage.PHASE1:
        if not state.nbrs:
            state.cl[state.id] = CommunityRecord(state.id, 1, None, ZERO, 0)
            state.phase = Phase.COMPLETING
            return aggregate_complete(state, [])
        state.phase = Phase.HEAD_ELECTION
        return state.broadcast(Kind.CC, CCMsg(state.cc))

    if stage is Stage.MOVE_FLOOD:
        state.phase = Phase.MOVEMENT
        state.flooded, state.onm_seen, state.decisions = set(), {}, {}
        state.intent, state.moving, state.lock = STAY, False, False
        _apply_joins(state)
        c = state.head_of()
        if c is None:
            return []
        r = state.cl[c]
        r.label = 0
        state.flooded.add(c)
        return state.broadcast(Kind.MOVEMENT, Movement(c, r.cm, r.c_size, 0))
    if stage is Stage.MOVE_INTENT:
        state.intent = compute_movement_decision(state)
        state.onm = state.onm_now()
        if state.intent.kind is IntentKind.STAY:
            return []
        return state.broadcast(Kind.ONM, ONMMsg(state.onm))
    if stage is Stage.MOVE_DECIDE:
        return resolve_lock(state, [], state.intent)
    if stage is Stage.MOVE_LEAVE:
        out = []
        if state.head_of() is not None:
            out = head_process_leaves(state, state.decisions.get(state.head_of(), []))
        _apply_joins(state)
        return out
    if stage is Stage.MOVE_REPAIR:
        for c in sorted(state.pending_leave):
            del state.cl[c]
            state.children.pop(c, None)
        state.pending_leave.clear()
        if _repair(state):
            return state.broadcast(Kind.JOIN_COM, state.announcement())
        return []
    if stage is Stage.MOVE_RESELECT:
        return _reselect(state) if not state.cl else []

    if stage is Stage.MERGE_PROBE:
        state.phase = Phase.MERGING
        _apply_joins(state)
        _reset_merge(state)
        return aggregate_complete(state, [], with_candidates=True, bundle=False)
    if stage is Stage.MERGE_REQUEST:
        choice = _merge_choice(state)
        if choice is None:
            return []
        target, req = choice
        state.merge_target = target
        return _route_merge(state, Kind.MERGE_REQ, req, req.v, target)
    if stage is Stage.MERGE_CONFIRM:
        return _answer_requests(state)
    if stage is Stage.MERGE_APPLY:
        if state.confirm is None:
            return []
        c = state.head_of()
        conf = state.confirm
        return _start_update(state, UpdateCom(state.id, conf.c_id, conf.c_size, conf.cm, c, True))
    if stage is Stage.MERGE_SETTLE:
        if _settle(state):
            return state.broadcast(Kind.JOIN_COM, state.announcement())
        return []
    raise ValueError(f"unknown stage {stage}")


_ORDER = {k: i for i, k in enumerate([Kind.UPDATE_COM, Kind.CC, Kind.JOIN_COM, Kind.MOVEMENT,
                                      Kind.ONM, Kind.DECISION, Kind.JOIN_REQ, Kind.LEAVE_ACCEPTED,
                                      Kind.COMPLETE, Kind.MERGE_REQ, Kind.CONFIRM])}


def step(state: NodeState, inbox: list[Message], stage: Stage) -> list[Message]:
    """Process one round's deliveries and return the messages to send."""
    inbox = sorted(inbox, key=lambda m: (_ORDER[m.kind], m.src))
    out: list[Message] = []
    joins = _by_kind(inbox, Kind.JOIN_COM)
    for m in joins:
        _learn(state, m.payload)

    if stage is Stage.PHASE1:
        ccs = _by_kind(inbox, Kind.CC)
        if ccs:
            if state.phase is not Phase.HEAD_ELECTION:
                raise ProtocolFault(f"node {state.id}: CC_msg outside head election")
            out.extend(elect_head(state, ccs))
        if joins and state.phase is Phase.SELECTION:
            out.extend(choose_communities(state, joins))
        out.extend(aggregate_complete(state, _by_kind(inbox, Kind.COMPLETE)))
        return out

    if stage is Stage.MERGE_PROBE:
        return aggregate_complete(state, _by_kind(inbox, Kind.COMPLETE), with_candidates=True, bundle=False)

    for m in inbox:
        k = m.kind
        if k is Kind.JOIN_COM:
            continue
        if k is Kind.MOVEMENT:
            out.extend(_absorb_movement(state, m))
        elif k is Kind.ONM:
            state.onm_seen[m.src] = m.payload.onm
        elif k in (Kind.DECISION, Kind.JOIN_REQ):
            out.extend(_route_up(state, m))
        elif k is Kind.LEAVE_ACCEPTED:
            out.extend(_absorb_leave(state, m))
        elif k is Kind.MERGE_REQ:
            p: MergeReq = m.payload
            if state.head_of() == p.c_id:
                state.requests.append(p)
            else:
                out.extend(_route_merge(state, k, p, p.v, p.c_id))
        elif k is Kind.CONFIRM:
            p: Confirm = m.payload
            if state.head_of() == p.requester:
                if state.merge_target != p.c_id:
                    raise ProtocolFault(f"head {state.id}: Confirm from {p.c_id} without a request")
                state.confirm = p
            else:
                out.extend(_route_merge(state, k, p, p.c_id, p.requester))
        elif k is Kind.UPDATE_COM:
            out.extend(_start_update(state, m.payload))
        else:
            raise ProtocolFault(f"node {state.id}: unexpected {k.value} in stage {stage.value}")

    if stage is Stage.MOVE_REPAIR and joins and _repair(state):
        out.extend(state.broadcast(Kind.JOIN_COM, state.announcement()))
    return out
