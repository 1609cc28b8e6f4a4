"""Layered young/old sub-flooding on a streaming snapshot.

Nodes alive at ``t0`` are split by their life ``l`` into young
(2 <= l < n/2), old (n/2 <= l <= n - ceil(ln n)) and very old (the rest
with l > n - ceil(ln n)). Starting from the source, phase 0 collects the
old targets of the source's requests; phase k then adds the uninformed
young nodes with a request in the upper half of their slots landing in
the old layer, followed by the uninformed old nodes hit by a lower-half
request of those new young nodes. Only recorded slots are used.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .model import Replayer, Snapshot, Trajectory

YOUNG, OLD, VERY_OLD = "young", "old", "very_old"


def classify_life(life: int, n: int) -> str | None:
    """Class of a node with life ``life``; ``None`` below the young range."""
    cut = n - math.ceil(math.log(n))
    if life > cut:
        return VERY_OLD
    if life >= n / 2:
        return OLD
    if life >= 2:
        return YOUNG
    return None


def life_of(birth: int, t0: int, n: int, reading: str = "age") -> int:
    age = t0 - birth + 1
    if reading == "age":
        return age
    if reading == "remaining":
        return n - age + 1
    raise ValueError(f"unknown life reading {reading!r}")


def classify_ages(snapshot: Snapshot, n: int, reading: str = "age") -> dict[int, str | None]:
    t0 = snapshot.time
    if int(t0) != t0 or any(int(r.birth) != r.birth for r in snapshot.nodes):
        raise ValueError("classify_ages needs a streaming snapshot")
    if t0 < n:
        raise ValueError(f"snapshot time {t0} precedes n = {n}")
    return {r.id: classify_life(life_of(int(r.birth), int(t0), n, reading), n) for r in snapshot.nodes}


@dataclass
class OnionLayers:
    young_layers: list[frozenset]
    old_layers: list[frozenset]
    classes: dict[int, str | None]
    source: int
    t0: int

    @property
    def phases(self) -> int:
        return len(self.young_layers)

    def informed(self, k: int) -> frozenset:
        return self.young_layers[k] | self.old_layers[k]

    def sizes(self) -> list[tuple[int, int, int]]:
        return [(k, len(y), len(o)) for k, (y, o) in enumerate(zip(self.young_layers, self.old_layers))]


def onion_skin_run(traj: Trajectory, t0: int, source: int, d: int | None = None,
                   reading: str = "age") -> OnionLayers:
    params = traj.params
    if not params.kind.streaming:
        raise ValueError("the onion-skin process runs on streaming trajectories")
    d = params.d if d is None else d
    if d != params.d:
        raise ValueError(f"d={d} does not match the trajectory's d={params.d}")
    if d % 2:
        raise ValueError("the onion-skin process needs an even d")
    rep = Replayer(traj)
    st = rep.advance_to(t0)
    if source not in st.pos:
        raise ValueError(f"source {source} is not alive at {t0}")
    n = params.n
    classes = {v: classify_life(life_of(int(st.born[v]), t0, n, reading), n) for v in st.alive}
    if classes[source] == VERY_OLD:
        raise ValueError(f"source {source} is very old at {t0}")
    slots = {v: list(st.slots[v]) for v in st.alive}
    half = d // 2
    young = [v for v in st.alive if classes[v] == YOUNG and v != source]

    y = {source}
    o = {v for v in slots[source] if v is not None and classes.get(v) == OLD}
    young_layers = [frozenset(y)]
    old_layers = [frozenset(o)]
    while True:
        new_y = {
            v for v in young
            if v not in y and any(w in o for w in slots[v][half:] if w is not None)
        }
        new_o = {
            w for v in new_y for w in slots[v][:half]
            if w is not None and classes.get(w) == OLD and w not in o
        }
        if not new_y and not new_o:
            break
        y |= new_y
        o |= new_o
        young_layers.append(frozenset(y))
        old_layers.append(frozenset(o))
    return OnionLayers(young_layers, old_layers, classes, source, t0)
