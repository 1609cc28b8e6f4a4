"""Topology dynamics on top of the churn processes.

A newborn creates ``d`` requests, each to a node drawn uniformly (with
replacement) among the nodes alive before it joined; a node born into an
empty network creates none. A death removes every slot owned by or
pointing at the dead node. Under regeneration each survivor that lost a
slot immediately redraws it uniformly among the other alive nodes.
"""
from __future__ import annotations

from typing import Iterable

from .churn import PoissonChurnParams, poisson_next_event
from .model import (
    Birth,
    Death,
    GraphState,
    ModelKind,
    ModelParams,
    OutSlot,
    Rewire,
    Snapshot,
    Trajectory,
)
from .rng import RandomStream


def apply_birth(state: GraphState, node: int, t: float, rng: RandomStream) -> Birth:
    alive = state.alive
    m = len(alive)
    if m:
        targets = tuple(alive[int(u * m)] for u in rng.take(state.d))
    else:
        targets = ()
    state.add_node(node, t, targets)
    return Birth(t, node, targets)


def regenerate(state: GraphState, keys: Iterable[int], t: float, rng: RandomStream,
               dead: int | None = None) -> list[Rewire]:
    """Refill the vacant slots ``keys`` (``owner * d + slot``).

    Slots lost to the death of ``dead`` are reported with that old target;
    slots parked earlier report ``None``. A slot whose owner is the only
    alive node is parked in ``state.pending`` until the next opportunity.
    """
    d = state.d
    alive = state.alive
    pos = state.pos
    m = len(alive)
    earlier = set(state.pending)
    out = []
    parked = []
    for key in keys:
        owner, k = divmod(key, d)
        if m < 2:
            parked.append(key)
            continue
        j = int(rng.random() * (m - 1))
        if j >= pos[owner]:
            j += 1
        target = alive[j]
        state.fill_slot(owner, k, target, t)
        out.append(Rewire(t, owner, k, None if key in earlier else dead, target))
    state.pending = parked
    return out


def apply_death(state: GraphState, node: int, t: float, regen: bool, rng: RandomStream) -> list:
    """Remove ``node``; with ``regen`` resample every slot that pointed at it."""
    if node not in state.pos:
        raise KeyError(f"node {node} is not alive")
    vacated = state.remove_node(node)
    events: list = [Death(t, node)]
    if regen:
        events.extend(regenerate(state, state.pending + vacated, t, rng, dead=node))
    return events


class Simulator:
    """Step-by-step generator of one model run.

    ``step()`` advances one round (streaming) or one churn event (Poisson)
    and returns the events it produced, in application order.
    """

    def __init__(self, params: ModelParams, rng: RandomStream | int):
        self.params = params
        self.rng = rng if isinstance(rng, RandomStream) else RandomStream(int(rng))
        self.state = GraphState(params.d)
        self.next_id = 1
        self.churn_count = 0
        self.time = 0.0 if not params.kind.streaming else 0
        if not params.kind.streaming:
            self.churn = PoissonChurnParams(params.lam, params.mu)

    def step(self) -> list:
        if self.params.kind.streaming:
            return self._round()
        return self.apply_jump(self.draw())

    def _round(self) -> list:
        p = self.params
        st = self.state
        rng = self.rng
        t = self.time + 1
        self.time = t
        st.clock = t
        events = []
        vacated: list[int] = []
        dying = t - p.n
        if dying >= 1:
            vacated = st.remove_node(dying)
            events.append(Death(t, dying))
            self.churn_count += 1
        if p.regenerate and p.regen_before_birth:
            events.extend(self._rewires(st.pending + vacated, t, dying))
            vacated = []
        events.append(apply_birth(st, t, t, rng))
        self.next_id = t + 1
        self.churn_count += 1
        if p.regenerate and (vacated or st.pending):
            events.extend(self._rewires(st.pending + vacated, t, dying))
        return events

    def _rewires(self, keys: list[int], t: float, dead: int) -> list[Rewire]:
        if not keys:
            return []
        return regenerate(self.state, keys, t, self.rng, dead=dead)

    def draw(self):
        """Sample the next Poisson jump without applying it."""
        return poisson_next_event(len(self.state.alive), self.churn, self.rng)

    def apply_jump(self, jump) -> list:
        st = self.state
        t = self.time + jump.dt
        self.time = t
        st.clock = t
        self.churn_count += 1
        regen = self.params.regenerate
        if jump.birth:
            node = self.next_id
            self.next_id += 1
            events = [apply_birth(st, node, t, self.rng)]
            if regen and st.pending:
                events.extend(regenerate(st, st.pending, t, self.rng))
            return events
        node = st.alive[jump.victim]
        vacated = st.remove_node(node)
        events = [Death(t, node)]
        if regen and (vacated or st.pending):
            events.extend(self._rewires(st.pending + vacated, t, node))
        return events

    def run_rounds(self, until: float, record: bool = True) -> list:
        """Advance streaming time (rounds) or Poisson time up to ``until``."""
        out = []
        if self.params.kind.streaming:
            while self.time < until:
                ev = self._round()
                if record:
                    out.extend(ev)
        else:
            while self.time <= until:
                ev = self.step()
                if record:
                    out.extend(ev)
        return out

    def run_events(self, count: int, record: bool = True) -> list:
        """Advance by ``count`` churn events (Poisson) or rounds (streaming)."""
        out = []
        for _ in range(count):
            ev = self.step()
            if record:
                out.extend(ev)
        return out

    def snapshot(self) -> Snapshot:
        return Snapshot.from_state(self.state)

    def live_trajectory(self, base: GraphState | None = None, initial: list | None = None) -> Trajectory:
        """Trajectory that starts at ``base`` and grows on demand.

        ``base`` defaults to a copy of the current state; ``initial`` holds
        events already applied since ``base`` was taken.
        """
        base = self.state.copy() if base is None else base
        events: list = list(initial or [])

        def extend(t: float) -> float:
            events.extend(self.run_rounds(t))
            return self.time

        return Trajectory(self.params, events, self.rng.seed, horizon=self.time, base=base, source=extend)


def run_model(kind: ModelKind | str, params: ModelParams | dict, d: int | None = None, horizon: int = 1,
              seed: int = 0) -> Trajectory:
    """Full event log of a run from the empty graph.

    ``horizon`` counts rounds for streaming models and churn events for
    Poisson models.
    """
    if isinstance(params, dict):
        params = ModelParams(kind=ModelKind(kind), d=d, **params)
    elif ModelKind(kind) != params.kind or (d is not None and d != params.d):
        raise ValueError("kind/d disagree with params")
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    sim = Simulator(params, RandomStream(seed))
    events = sim.run_events(horizon)
    return Trajectory(params, events, seed, horizon=sim.time)


def static_dout_graph(n: int, d: int, rng: RandomStream) -> Snapshot:
    """Each of n nodes picks d uniform out-neighbours among the other n - 1."""
    if n < 2 or d < 1:
        raise ValueError("need n >= 2 and d >= 1")
    edges = set()
    slots = []
    for u in range(1, n + 1):
        for k in range(d):
            j = int(rng.random() * (n - 1)) + 1
            v = j + 1 if j >= u else j
            slots.append((u, k, v))
            edges.add((min(u, v), max(u, v)))
    snap = Snapshot.from_edges(range(1, n + 1), sorted(edges))
    return Snapshot(snap.time, snap.nodes, snap.adjacency, tuple(OutSlot(u, k, v, 0) for u, k, v in slots))
