"""Node birth/death processes, independent of topology.

Streaming churn is deterministic: one birth per round and a lifetime of
exactly ``n`` rounds. Poisson churn is simulated through its jump chain:
with ``N`` nodes alive the next event happens after an Exp(N*mu + lam)
delay and is a birth with probability lam / (N*mu + lam), otherwise the
death of a uniformly chosen alive node. By memorylessness this has the
same law as giving every node its own Exp(mu) lifetime.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .rng import RandomStream


@dataclass(frozen=True)
class StreamingChurnParams:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"lifetime n must be a positive integer, got {self.n!r}")


@dataclass(frozen=True)
class PoissonChurnParams:
    lam: float = 1.0
    mu: float = 1e-3

    def __post_init__(self):
        for name in ("lam", "mu"):
            v = getattr(self, name)
            if not math.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be positive and finite, got {v!r}")

    @classmethod
    def canonical(cls, n: float) -> PoissonChurnParams:
        """The lam = 1, mu = 1/n setting."""
        return cls(1.0, 1.0 / n)

    @property
    def n(self) -> float:
        return self.lam / self.mu


class ChurnEvent(NamedTuple):
    time: float
    birth: bool
    node: int


class Jump(NamedTuple):
    dt: float
    birth: bool
    victim: int | None  # index into the alive population for deaths


def streaming_events(params: StreamingChurnParams, horizon: int) -> list[ChurnEvent]:
    """Births at rounds 1..horizon; the node born at round t dies at round t + n."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1 round")
    n = params.n
    events = []
    for t in range(1, horizon + 1):
        if t > n:
            events.append(ChurnEvent(t, False, t - n))
        events.append(ChurnEvent(t, True, t))
    return events


def poisson_next_event(alive_count: int, params: PoissonChurnParams, rng: RandomStream) -> Jump:
    if alive_count < 0:
        raise ValueError("alive_count must be non-negative")
    lam, mu = params.lam, params.mu
    if not (math.isfinite(lam) and math.isfinite(mu)):
        raise ValueError("non-finite churn parameters")
    rate = alive_count * mu + lam
    dt = rng.exponential(rate)
    u = rng.random()
    if u * rate < lam:
        return Jump(dt, True, None)
    return Jump(dt, False, rng.below(alive_count))


def poisson_events(params: PoissonChurnParams, horizon_events: int, rng: RandomStream) -> list[ChurnEvent]:
    """The first ``horizon_events`` events of the jump chain started from the empty network."""
    if horizon_events < 1:
        raise ValueError("horizon_events must be at least 1")
    alive: list[int] = []
    pos: dict[int, int] = {}
    t = 0.0
    next_id = 1
    events = []
    for _ in range(horizon_events):
        jump = poisson_next_event(len(alive), params, rng)
        t += jump.dt
        if jump.birth:
            node = next_id
            next_id += 1
            pos[node] = len(alive)
            alive.append(node)
            events.append(ChurnEvent(t, True, node))
        else:
            node = alive[jump.victim]
            last = alive.pop()
            if last != node:
                alive[jump.victim] = last
                pos[last] = jump.victim
            del pos[node]
            events.append(ChurnEvent(t, False, node))
    return events


def population_path(events: list[ChurnEvent]) -> list[int]:
    """Alive count after each event (the chain N at event indices 1, 2, ...)."""
    out = []
    count = 0
    for e in events:
        count += 1 if e.birth else -1
        out.append(count)
    return out


def lifetimes(events: list[ChurnEvent], born_before: float) -> list[float]:
    """Completed lifetimes of nodes born before ``born_before``."""
    births = {}
    out = []
    for e in events:
        if e.birth:
            if e.time < born_before:
                births[e.node] = e.time
        elif e.node in births:
            out.append(e.time - births.pop(e.node))
    return out


def population_after(params: PoissonChurnParams, count: int, rng: RandomStream, start: int = 0) -> int:
    """Alive count after ``count`` jump-chain steps, ignoring node identities."""
    lam, mu = params.lam, params.mu
    alive = start
    for u in rng.take(count):
        alive += 1 if u * (alive * mu + lam) < lam else -1
    return alive


def pinned_jumps(alive_count: int, params: PoissonChurnParams, count: int,
                 rng: RandomStream) -> tuple[int, list[float]]:
    """Births and inter-event times of ``count`` jumps drawn with N held fixed."""
    births = 0
    dts = []
    for _ in range(count):
        jump = poisson_next_event(alive_count, params, rng)
        births += jump.birth
        dts.append(jump.dt)
    return births, dts
