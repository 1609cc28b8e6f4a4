"""Core domain types: events, dynamic graph state, trajectories, snapshots.

Node ids are assigned in birth order starting from 1. Each alive node owns
either 0 or ``d`` out-slots; a slot holds the id of its target or ``None``
once the target has died. The undirected graph is the symmetric closure of
the live slots with parallel slots collapsed.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import IO, Callable, Iterable, NamedTuple

import numpy as np
from scipy import sparse

SCHEMA_VERSION = "v1"


class ModelKind(str, enum.Enum):
    SDG = "sdg"
    SDGR = "sdgr"
    PDG = "pdg"
    PDGR = "pdgr"

    @property
    def streaming(self) -> bool:
        return self in (ModelKind.SDG, ModelKind.SDGR)

    @property
    def regenerate(self) -> bool:
        return self in (ModelKind.SDGR, ModelKind.PDGR)


@dataclass(frozen=True)
class ModelParams:
    """Parameters of one of the four dynamic graph models.

    Streaming models use the lifetime ``n`` (rounds). Poisson models use the
    arrival rate ``lam`` and per-node death rate ``mu``; ``n`` defaults to
    ``lam / mu`` rounded, and ``mu`` defaults to ``lam / n``.

    ``regen_before_birth`` selects the intra-round order of the streaming
    regeneration models. By default a round is: the oldest node dies, the
    new node joins and issues its requests, then the survivors that lost a
    slot resample it among all other alive nodes (newborn included). With
    the switch on, resampling happens before the newborn joins.
    """

    kind: ModelKind
    d: int
    n: int | None = None
    lam: float | None = None
    mu: float | None = None
    regen_before_birth: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if not isinstance(self.d, (int, np.integer)) or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d!r}")
        if self.kind.streaming:
            if self.n is None or int(self.n) != self.n or self.n < 1:
                raise ValueError(f"streaming models need an integer lifetime n >= 1, got {self.n!r}")
            object.__setattr__(self, "n", int(self.n))
            return
        lam = 1.0 if self.lam is None else float(self.lam)
        mu = self.mu
        if mu is None:
            if self.n is None:
                raise ValueError("Poisson models need mu or n")
            mu = lam / float(self.n)
        mu = float(mu)
        if not (math.isfinite(lam) and math.isfinite(mu)) or lam <= 0 or mu <= 0:
            raise ValueError(f"lambda and mu must be positive and finite, got {lam!r}, {mu!r}")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "mu", mu)
        if self.n is None:
            object.__setattr__(self, "n", max(1, round(lam / mu)))

    @property
    def regenerate(self) -> bool:
        return self.kind.regenerate

    @property
    def nominal_n(self) -> float:
        if self.kind.streaming:
            return float(self.n)
        return self.lam / self.mu

    def header(self, seed: int) -> dict:
        h = {"model": self.kind.value, "n": self.n, "d": self.d, "seed": seed}
        if not self.kind.streaming:
            h["lambda"] = self.lam
            h["mu"] = self.mu
        if self.regen_before_birth:
            h["regen_before_birth"] = True
        return h

    @classmethod
    def from_header(cls, h: dict) -> ModelParams:
        return cls(
            kind=ModelKind(h["model"]),
            d=int(h["d"]),
            n=h.get("n"),
            lam=h.get("lambda"),
            mu=h.get("mu"),
            regen_before_birth=bool(h.get("regen_before_birth", False)),
        )


class NodeRecord(NamedTuple):
    id: int
    birth: float
    death: float | None = None


class OutSlot(NamedTuple):
    owner: int
    slot_index: int
    target: int
    established_at: float


class Birth(NamedTuple):
    t: float
    id: int
    targets: tuple

    kind = "birth"


class Death(NamedTuple):
    t: float
    id: int

    kind = "death"


class Rewire(NamedTuple):
    t: float
    owner: int
    slot: int
    old_target: int | None
    new_target: int

    kind = "rewire"


Event = Birth | Death | Rewire


class InvariantError(AssertionError):
    pass


class GraphState:
    """Mutable dynamic graph: alive nodes and their out-slots.

    ``alive`` is kept in an order that only depends on the history of
    births and deaths, so uniform sampling by index is reproducible.
    In-slots are indexed by the integer key ``owner * d + slot``.
    """

    __slots__ = ("d", "clock", "alive", "pos", "born", "slots", "stamp", "inslots", "pending")

    def __init__(self, d: int, clock: float = 0):
        self.d = d
        self.clock = clock
        self.alive: list[int] = []
        self.pos: dict[int, int] = {}
        self.born: dict[int, float] = {}
        self.slots: dict[int, list] = {}
        self.stamp: dict[int, list] = {}
        self.inslots: dict[int, set] = {}
        # vacant slots that could not be refilled because the owner was alone
        self.pending: list[int] = []

    def copy(self) -> GraphState:
        g = GraphState(self.d, self.clock)
        g.alive = list(self.alive)
        g.pos = dict(self.pos)
        g.born = dict(self.born)
        g.slots = {k: list(v) for k, v in self.slots.items()}
        g.stamp = {k: list(v) for k, v in self.stamp.items()}
        g.inslots = {k: set(v) for k, v in self.inslots.items()}
        g.pending = list(self.pending)
        return g

    def __len__(self) -> int:
        return len(self.alive)

    def __contains__(self, node: int) -> bool:
        return node in self.pos

    def add_node(self, node: int, t: float, targets) -> None:
        if node in self.pos:
            raise InvariantError(f"node {node} is already alive")
        self.pos[node] = len(self.alive)
        self.alive.append(node)
        self.born[node] = t
        self.slots[node] = list(targets)
        self.stamp[node] = [t] * len(targets)
        self.inslots[node] = set()
        base = node * self.d
        inslots = self.inslots
        for i, v in enumerate(targets):
            inslots[v].add(base + i)

    def remove_node(self, node: int) -> list[int]:
        """Remove ``node``; return the sorted keys of slots that lost their target."""
        i = self.pos.pop(node)
        last = self.alive.pop()
        if last != node:
            self.alive[i] = last
            self.pos[last] = i
        d = self.d
        base = node * d
        inslots = self.inslots
        for k, v in enumerate(self.slots.pop(node)):
            if v is not None:
                inslots[v].discard(base + k)
        del self.stamp[node]
        del self.born[node]
        vacated = sorted(inslots.pop(node))
        slots = self.slots
        for key in vacated:
            o, k = divmod(key, d)
            slots[o][k] = None
        if self.pending:
            self.pending = [key for key in self.pending if key // d != node]
        return vacated

    def fill_slot(self, owner: int, slot: int, target: int, t: float) -> None:
        self.slots[owner][slot] = target
        self.stamp[owner][slot] = t
        self.inslots[target].add(owner * self.d + slot)

    def neighbors(self, node: int) -> set[int]:
        d = self.d
        out = {v for v in self.slots[node] if v is not None}
        out.update(key // d for key in self.inslots[node])
        return out

    def degree(self, node: int) -> int:
        return len(self.neighbors(node))

    def has_edge(self, u: int, v: int) -> bool:
        if u not in self.pos or v not in self.pos:
            return False
        return v in self.slots[u] or u in self.slots[v]

    def out_degree(self, node: int) -> int:
        return sum(1 for v in self.slots[node] if v is not None)

    def check(self, params: ModelParams | None = None) -> None:
        """Raise :class:`InvariantError` if the state is inconsistent."""
        d = self.d
        if len(self.pos) != len(self.alive):
            raise InvariantError("alive index out of sync")
        for i, v in enumerate(self.alive):
            if self.pos.get(v) != i:
                raise InvariantError(f"alive index broken at {v}")
        seen: dict[int, set] = {v: set() for v in self.alive}
        for owner, targets in self.slots.items():
            if owner not in self.pos:
                raise InvariantError(f"slots owned by dead node {owner}")
            if len(targets) not in (0, d):
                raise InvariantError(f"node {owner} owns {len(targets)} slots")
            for k, v in enumerate(targets):
                if v is None:
                    continue
                if v == owner:
                    raise InvariantError(f"self-loop at {owner}")
                if v not in self.pos:
                    raise InvariantError(f"slot ({owner}, {k}) targets dead node {v}")
                seen[v].add(owner * d + k)
        for v, keys in self.inslots.items():
            if keys != seen.get(v, set()):
                raise InvariantError(f"in-slot index of {v} out of sync")
        if params is not None and params.regenerate and len(self.alive) > 1:
            for owner, targets in self.slots.items():
                if any(v is None for v in targets):
                    raise InvariantError(f"node {owner} has a vacant slot under regeneration")


def _edges_of(state: GraphState) -> set[tuple[int, int]]:
    edges = set()
    for u, targets in state.slots.items():
        for v in targets:
            if v is not None:
                edges.add((u, v) if u < v else (v, u))
    return edges


@dataclass(frozen=True)
class Snapshot:
    """Frozen graph of the alive nodes and live edges at one instant."""

    time: float
    nodes: tuple[NodeRecord, ...]
    adjacency: dict[int, tuple[int, ...]]
    out_slots: tuple[OutSlot, ...]

    @classmethod
    def from_state(cls, state: GraphState) -> Snapshot:
        ids = sorted(state.alive)
        nodes = tuple(NodeRecord(v, state.born[v]) for v in ids)
        adjacency = {v: tuple(sorted(state.neighbors(v))) for v in ids}
        out_slots = tuple(
            OutSlot(u, k, v, state.stamp[u][k])
            for u in ids
            for k, v in enumerate(state.slots[u])
            if v is not None
        )
        return cls(state.clock, nodes, adjacency, out_slots)

    @classmethod
    def from_edges(cls, node_ids: Iterable[int], edges: Iterable[tuple[int, int]], time: float = 0) -> Snapshot:
        """Snapshot of a plain undirected graph (slots recorded as u -> v)."""
        ids = sorted(set(node_ids))
        nbrs: dict[int, set] = {v: set() for v in ids}
        slots = []
        for u, v in edges:
            if u == v:
                raise ValueError("self-loops are not allowed")
            nbrs[u].add(v)
            nbrs[v].add(u)
            slots.append(OutSlot(u, sum(1 for s in slots if s.owner == u), v, time))
        return cls(
            time,
            tuple(NodeRecord(v, time) for v in ids),
            {v: tuple(sorted(nbrs[v])) for v in ids},
            tuple(slots),
        )

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def ids(self) -> list[int]:
        return [r.id for r in self.nodes]

    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u, vs in self.adjacency.items() for v in vs if u < v]

    def degree(self, node: int) -> int:
        return len(self.adjacency[node])

    @cached_property
    def index(self) -> dict[int, int]:
        return {v: i for i, v in enumerate(self.ids)}

    @cached_property
    def csr(self) -> sparse.csr_matrix:
        """Symmetric 0/1 adjacency matrix in ``ids`` order."""
        idx = self.index
        rows, cols = [], []
        for u, vs in self.adjacency.items():
            iu = idx[u]
            for v in vs:
                rows.append(iu)
                cols.append(idx[v])
        m = len(self.nodes)
        data = np.ones(len(rows), dtype=np.float32)
        return sparse.csr_matrix((data, (rows, cols)), shape=(m, m))

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "time": self.time,
            "nodes": [[r.id, r.birth] for r in self.nodes],
            "edges": [list(e) for e in self.edges()],
            "out_slots": [[s.owner, s.slot_index, s.target, s.established_at] for s in self.out_slots],
        }

    @classmethod
    def from_json(cls, obj: dict) -> Snapshot:
        nodes = tuple(NodeRecord(int(i), b) for i, b in obj["nodes"])
        nbrs: dict[int, set] = {r.id: set() for r in nodes}
        for u, v in obj["edges"]:
            nbrs[u].add(v)
            nbrs[v].add(u)
        slots = tuple(OutSlot(int(o), int(k), int(v), t) for o, k, v, t in obj.get("out_slots", []))
        return cls(obj["time"], nodes, {v: tuple(sorted(s)) for v, s in nbrs.items()}, slots)


class TimeOutOfRange(ValueError):
    pass


class Trajectory:
    """Ordered event log of one model run.

    ``base`` is the state the log starts from (``None``: the empty graph).
    ``horizon`` is the last instant whose state the log determines. A
    trajectory built by the engine in live mode carries a ``source``
    callable that appends further events on demand; the log is append-only
    either way.
    """

    def __init__(
        self,
        params: ModelParams,
        events: list,
        seed: int,
        horizon: float | None = None,
        base: GraphState | None = None,
        source: Callable[[float], float] | None = None,
    ):
        self.params = params
        self.events = events
        self.seed = seed
        if horizon is None:
            horizon = events[-1].t if events else (base.clock if base is not None else 0)
        self.horizon = horizon
        self.base = base
        self._source = source

    @property
    def start(self) -> float:
        return self.base.clock if self.base is not None else 0

    @property
    def live(self) -> bool:
        return self._source is not None

    def ensure(self, t: float) -> None:
        """Extend a live trajectory so that its horizon reaches ``t``."""
        if t > self.horizon and self._source is not None:
            self.horizon = self._source(t)

    def close(self) -> None:
        self._source = None

    def churn_times(self) -> list[float]:
        return [e.t for e in self.events if e.kind != "rewire"]

    def birth_time(self, node: int) -> float:
        for e in self.events:
            if e.kind == "birth" and e.id == node:
                return e.t
        if self.base is not None and node in self.base.born:
            return self.base.born[node]
        raise KeyError(node)

    def __repr__(self) -> str:
        return (
            f"Trajectory({self.params.kind.value}, n={self.params.n}, d={self.params.d}, "
            f"events={len(self.events)}, horizon={self.horizon})"
        )


class Replayer:
    """Applies a trajectory's events incrementally to a :class:`GraphState`.

    While advancing it logs nodes born and died and slot fills (new
    owner/target pairs) so callers can process changes window by window.
    """

    def __init__(self, traj: Trajectory, check: bool = False):
        self.traj = traj
        self.state = traj.base.copy() if traj.base is not None else GraphState(traj.params.d)
        self.i = 0
        self.check = check
        self.born: list[int] = []
        self.died: list[int] = []
        self.added: list[tuple[int, int]] = []

    def reset_log(self) -> None:
        self.born = []
        self.died = []
        self.added = []

    def advance_to(self, t: float) -> GraphState:
        traj = self.traj
        if t < self.state.clock:
            raise TimeOutOfRange(f"cannot rewind from {self.state.clock} to {t}")
        traj.ensure(t)
        if t > traj.horizon:
            raise TimeOutOfRange(f"time {t} beyond trajectory horizon {traj.horizon}")
        events = traj.events
        st = self.state
        i = self.i
        params = traj.params
        while i < len(events) and events[i].t <= t:
            e = events[i]
            if self.check and e.t != st.clock:
                st.check(params)
            self.apply(e)
            i += 1
        self.i = i
        if self.check:
            st.check(params)
        st.clock = t
        return st

    def apply(self, e) -> None:
        st = self.state
        kind = e.kind
        if kind == "birth":
            for v in e.targets:
                if v not in st.pos:
                    raise InvariantError(f"node {e.id} born with dead target {v}")
            st.add_node(e.id, e.t, e.targets)
            self.born.append(e.id)
            node = e.id
            self.added.extend((node, v) for v in e.targets)
        elif kind == "death":
            if e.id not in st.pos:
                raise InvariantError(f"death of unknown node {e.id}")
            vacated = st.remove_node(e.id)
            if self.traj.params.regenerate:
                st.pending.extend(vacated)
            self.died.append(e.id)
        else:
            if not self.traj.params.regenerate:
                raise InvariantError("rewire event in a model without regeneration")
            if e.owner not in st.pos or e.new_target not in st.pos or e.new_target == e.owner:
                raise InvariantError(f"invalid rewire {e}")
            if st.slots[e.owner][e.slot] is not None:
                raise InvariantError(f"rewire of occupied slot ({e.owner}, {e.slot})")
            st.fill_slot(e.owner, e.slot, e.new_target, e.t)
            key = e.owner * st.d + e.slot
            if key in st.pending:
                st.pending.remove(key)
            self.added.append((e.owner, e.new_target))
        st.clock = e.t

    def snapshot(self) -> Snapshot:
        return Snapshot.from_state(self.state)


def snapshot_at(traj: Trajectory, t: float) -> Snapshot:
    """Graph state right after every event with time <= ``t``."""
    if t < traj.start:
        raise TimeOutOfRange(f"time {t} precedes trajectory start {traj.start}")
    rep = Replayer(traj)
    rep.advance_to(t)
    return rep.snapshot()


def edge_present_throughout(traj: Trajectory, u: int, v: int, t_start: float, t_end: float) -> bool:
    """True iff u and v are alive and adjacent at every instant of [t_start, t_end]."""
    if not t_start < t_end:
        raise ValueError("t_start must precede t_end")
    rep = Replayer(traj)
    st = rep.advance_to(t_start)
    if u not in st.pos or v not in st.pos:
        known = {e.id for e in traj.events if e.kind == "birth"}
        if traj.base is not None:
            known.update(traj.base.born)
        for x in (u, v):
            if x not in known:
                raise KeyError(f"unknown node id {x}")
    if not st.has_edge(u, v):
        return False
    traj.ensure(t_end)
    events = traj.events
    while rep.i < len(events) and events[rep.i].t <= t_end:
        t = events[rep.i].t
        while rep.i < len(events) and events[rep.i].t == t:
            rep.apply(events[rep.i])
            rep.i += 1
        if not st.has_edge(u, v):
            return False
    if t_end > traj.horizon:
        raise TimeOutOfRange(f"time {t_end} beyond trajectory horizon {traj.horizon}")
    return True


# -- JSONL serialization ---------------------------------------------------

def _event_json(e, streaming: bool) -> dict:
    t = int(e.t) if streaming else e.t
    if e.kind == "birth":
        return {"t": t, "kind": "birth", "id": e.id, "targets": list(e.targets)}
    if e.kind == "death":
        return {"t": t, "kind": "death", "id": e.id}
    return {
        "t": t,
        "kind": "rewire",
        "id": e.old_target,
        "owner": e.owner,
        "slot": e.slot,
        "new_target": e.new_target,
    }


def write_jsonl(traj: Trajectory, fp: IO[str]) -> None:
    if traj.base is not None:
        raise ValueError("only trajectories that start from the empty graph can be serialized")
    header = traj.params.header(traj.seed)
    header["horizon"] = traj.horizon
    header["schema"] = SCHEMA_VERSION
    fp.write(json.dumps(header) + "\n")
    streaming = traj.params.kind.streaming
    for e in traj.events:
        fp.write(json.dumps(_event_json(e, streaming)) + "\n")


def read_jsonl(fp: IO[str]) -> Trajectory:
    lines = (line for line in fp if line.strip())
    try:
        header = json.loads(next(lines))
    except StopIteration:
        raise ValueError("empty trajectory file") from None
    params = ModelParams.from_header(header)
    events = []
    for lineno, line in enumerate(lines, start=2):
        obj = json.loads(line)
        kind = obj.get("kind")
        t = obj["t"]
        if kind == "birth":
            events.append(Birth(t, int(obj["id"]), tuple(int(v) for v in obj.get("targets", []))))
        elif kind == "death":
            events.append(Death(t, int(obj["id"])))
        elif kind == "rewire":
            old = obj.get("id")
            events.append(Rewire(t, int(obj["owner"]), int(obj["slot"]), old, int(obj["new_target"])))
        else:
            raise ValueError(f"line {lineno}: unknown event kind {kind!r}")
    return Trajectory(params, events, int(header.get("seed", 0)), horizon=header.get("horizon"))


def save_trajectory(traj: Trajectory, path) -> None:
    with open(path, "w") as fp:
        write_jsonl(traj, fp)


def load_trajectory(path) -> Trajectory:
    with open(path) as fp:
        return read_jsonl(fp)
