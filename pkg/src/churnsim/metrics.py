"""Measured quantities on snapshots and trajectories."""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import NamedTuple

import numpy as np
from scipy.sparse.csgraph import breadth_first_order

from .engine import Simulator
from .model import ModelKind, ModelParams, Replayer, Snapshot, Trajectory
from .rng import RandomStream

EXACT_LIMIT = 24


@dataclass
class ExpansionReport:
    method: str
    h_out: float
    witness: tuple[int, ...]
    size_range: tuple[int, int]
    samples: int | None = None
    exhaustive: bool = False

    def to_json(self) -> dict:
        return {
            "schema": "v1",
            "method": self.method,
            "h_out": self.h_out,
            "witness": list(self.witness),
            "size_range": list(self.size_range),
            "samples": self.samples,
            "exhaustive": self.exhaustive,
        }


class DegreeStats(NamedTuple):
    mean: float
    max: int
    histogram: dict[int, int]

    def to_json(self) -> dict:
        return {"mean": self.mean, "max": self.max, "histogram": {str(k): v for k, v in self.histogram.items()}}


def isolated_count(snapshot: Snapshot) -> int:
    return sum(1 for vs in snapshot.adjacency.values() if not vs)


def isolated_count_from_slots(snapshot: Snapshot) -> int:
    """Same count computed from the raw out-slots."""
    touched = set()
    for s in snapshot.out_slots:
        touched.add(s.owner)
        touched.add(s.target)
    return len(snapshot.nodes) - len(touched & set(snapshot.adjacency))


def degree_stats(snapshot: Snapshot) -> DegreeStats:
    degs = [len(vs) for vs in snapshot.adjacency.values()]
    if not degs:
        return DegreeStats(0.0, 0, {})
    hist: dict[int, int] = {}
    for k in degs:
        hist[k] = hist.get(k, 0) + 1
    return DegreeStats(sum(degs) / len(degs), max(degs), dict(sorted(hist.items())))


class HorizonTooShort(ValueError):
    pass


def isolated_forever(traj: Trajectory, t: float) -> set[int]:
    """Nodes isolated at ``t`` that never gain an incident edge before dying."""
    rep = Replayer(traj)
    st = rep.advance_to(t)
    candidates = {v for v in st.alive if not st.neighbors(v)}
    rep.reset_log()
    pending = set(candidates)
    if traj.params.kind.streaming:
        traj.ensure(t + traj.params.n)
    while pending:
        if rep.i >= len(traj.events):
            if traj.live:
                traj.ensure(traj.horizon + 1)
                if rep.i < len(traj.events):
                    continue
            raise HorizonTooShort(f"{len(pending)} candidate nodes still alive at the end of the trajectory")
        e = traj.events[rep.i]
        rep.apply(e)
        rep.i += 1
        if e.kind == "death":
            pending.discard(e.id)
        else:
            for a, b in rep.added:
                if a in pending or b in pending:
                    candidates.discard(a)
                    candidates.discard(b)
                    pending.discard(a)
                    pending.discard(b)
            rep.added.clear()
    return candidates


# -- vertex expansion ------------------------------------------------------

def _check_range(m: int, min_size: int, max_size: int | None) -> tuple[int, int]:
    hi = m // 2 if max_size is None else max_size
    if min_size < 1 or hi < min_size:
        raise ValueError(f"empty size range [{min_size}, {hi}]")
    if hi > m // 2:
        raise ValueError(f"max_size {hi} exceeds floor(|N|/2) = {m // 2}")
    return min_size, hi


def h_out_exact(snapshot: Snapshot, min_size: int = 1, max_size: int | None = None) -> ExpansionReport:
    """Minimum of |boundary(S)| / |S| over every S with min_size <= |S| <= max_size.

    Enumerates all 2**m subsets as bitmasks; the neighbourhood union of each
    mask is built from the mask with its top bit cleared.
    """
    ids = snapshot.ids
    m = len(ids)
    if m > EXACT_LIMIT:
        raise ValueError(f"exact expansion supports at most {EXACT_LIMIT} nodes, got {m}")
    lo, hi = _check_range(m, min_size, max_size)
    idx = snapshot.index
    nbr = np.zeros(m, dtype=np.uint32)
    for u, vs in snapshot.adjacency.items():
        for v in vs:
            nbr[idx[u]] |= np.uint32(1 << idx[v])
    union = np.zeros(1 << m, dtype=np.uint32)
    for i in range(m):
        half = 1 << i
        union[half:2 * half] = union[:half] | nbr[i]
    masks = np.arange(1 << m, dtype=np.uint32)
    size = np.bitwise_count(masks)
    boundary = np.bitwise_count(union & ~masks)
    ok = (size >= lo) & (size <= hi)
    cand = np.flatnonzero(ok)
    ratio = boundary[cand] / size[cand]
    best = int(cand[int(np.argmin(ratio))])
    witness = tuple(ids[i] for i in range(m) if best >> i & 1)
    return ExpansionReport("exact", float(ratio.min()), witness, (lo, hi))


def _subset_count(m: int, lo: int, hi: int) -> int:
    return sum(math.comb(m, s) for s in range(lo, hi + 1))


def h_out_sampled(snapshot: Snapshot, min_size: int, max_size: int | None, samples: int,
                  rng: RandomStream, batch: int = 512) -> ExpansionReport:
    """Upper bound on h_out over the size range from sampled subsets.

    Samples alternate between uniformly random subsets and BFS balls grown
    from a random root, each with a size drawn uniformly from the range. When
    ``samples`` is at least the number of subsets in the range (small graphs
    only) every subset is evaluated instead.
    """
    if samples < 1:
        raise ValueError("samples must be at least 1")
    ids = snapshot.ids
    m = len(ids)
    lo, hi = _check_range(m, min_size, max_size)
    if m <= EXACT_LIMIT and samples >= _subset_count(m, lo, hi):
        rep = h_out_exact(snapshot, lo, hi)
        return ExpansionReport("sampled", rep.h_out, rep.witness, (lo, hi), samples, exhaustive=True)
    gen = rng.generator
    adj = snapshot.csr
    best_ratio = math.inf
    best_set: np.ndarray | None = None
    done = 0
    while done < samples:
        b = min(batch, samples - done)
        sizes = gen.integers(lo, hi + 1, size=b)
        member = np.zeros((m, b), dtype=np.float32)
        n_random = (b + 1) // 2 if done % 2 == 0 else b // 2
        # uniform subsets: the `size` smallest of m random keys
        keys = gen.random((n_random, m))
        ranks = keys.argsort(axis=1).argsort(axis=1)
        member[:, :n_random] = (ranks < sizes[:n_random, None]).T
        for j in range(n_random, b):
            member[_bfs_ball(adj, int(sizes[j]), gen), j] = 1.0
        reach = adj @ member
        boundary = ((reach > 0) & (member == 0)).sum(axis=0)
        ratio = boundary / member.sum(axis=0)
        j = int(np.argmin(ratio))
        if ratio[j] < best_ratio:
            best_ratio = float(ratio[j])
            best_set = np.flatnonzero(member[:, j])
        done += b
    witness = tuple(ids[i] for i in best_set)
    return ExpansionReport("sampled", best_ratio, witness, (lo, hi), samples)


def _bfs_ball(adj, size: int, gen: np.random.Generator) -> np.ndarray:
    """First ``size`` nodes in BFS order from a random root, restarting in
    untouched components when a component runs out."""
    m = adj.shape[0]
    taken = np.zeros(m, dtype=bool)
    out = []
    need = size
    while need > 0:
        free = np.flatnonzero(~taken)
        root = int(free[gen.integers(len(free))])
        order = breadth_first_order(adj, root, directed=False, return_predecessors=False)
        order = order[~taken[order]][:need]
        taken[order] = True
        out.append(order)
        need -= len(order)
    return np.concatenate(out)


def boundary_ratio(snapshot: Snapshot, subset) -> float:
    """|boundary(S)| / |S| computed directly from the adjacency lists."""
    s = set(subset)
    outer = {v for u in s for v in snapshot.adjacency[u] if v not in s}
    return len(outer) / len(s)


def h_out_bruteforce(snapshot: Snapshot, min_size: int = 1, max_size: int | None = None) -> float:
    """Reference implementation with itertools; exponential and slow."""
    ids = snapshot.ids
    lo, hi = _check_range(len(ids), min_size, max_size)
    return min(boundary_ratio(snapshot, c) for s in range(lo, hi + 1) for c in combinations(ids, s))


# -- edge probabilities ----------------------------------------------------

def edge_prob_streaming_regen(n: int, k: int) -> float:
    """P(a fixed request of a node that has lived through k deaths targets a fixed older node)."""
    if n < 2 or k < 0 or k + 1 > n:
        raise ValueError(f"need n >= 2 and 0 <= k <= n - 1, got n={n}, k={k}")
    return (1.0 / (n - 1)) * (1.0 + 1.0 / (n - 1)) ** k


def younger_target_bound(n: int) -> float:
    """Upper bound for the same probability when the target is younger."""
    return 1.0 / (n - 1)


def edge_prob_poisson_regen_bound(n: float, i: int) -> float:
    """Upper bound on P(a request of the node born i events ago targets a fixed older node)."""
    if i < 0:
        raise ValueError("age i must be non-negative")
    return (1.0 / (0.8 * n)) * (1.0 + i / (1.7 * n))


class EdgeFrequency(NamedTuple):
    frequency: float
    std_error: float
    histories: int
    hits: int


def edge_prob_empirical(model: ModelKind | str, n: int, d: int, k: int, trials: int,
                        rng: RandomStream) -> EdgeFrequency:
    """Monte-Carlo frequency that a request points at a designated older node.

    Streaming models: at each round t, the requester u is the node that has
    lived through ``k`` deaths (born at t - k) and the designated target is
    the node born one round before u. Each of u's ``d`` slots is one request
    history. Poisson models: u is the node born ``k`` churn events ago, the
    designated target the youngest alive node older than u.
    """
    model = ModelKind(model)
    if trials < 10_000:
        raise ValueError("edge_prob_empirical needs at least 10**4 request histories")
    if model.streaming:
        return _edge_freq_streaming(model, n, d, k, trials, rng)
    return _edge_freq_poisson(model, n, d, k, trials, rng)


def _binomial(hits: int, total: int) -> EdgeFrequency:
    p = hits / total
    return EdgeFrequency(p, math.sqrt(p * (1 - p) / total), total, hits)


def _edge_freq_streaming(model, n, d, k, trials, rng) -> EdgeFrequency:
    if not 0 <= k <= n - 2:
        raise ValueError(f"no alive node is older than a requester with k={k} when n={n}")
    sim = Simulator(ModelParams(model, d=d, n=n), rng)
    # requesters must be born into a full population: birth round >= n + 1
    sim.run_events(n + 1 + k, record=False)
    slots = sim.state.slots
    hits = total = 0
    while total < trials:
        sim.step()
        t = sim.time
        u = t - k
        target = u - 1
        for v in slots[u]:
            if v == target:
                hits += 1
        total += d
    return _binomial(hits, total)


def _edge_freq_poisson(model, n, d, k, trials, rng) -> EdgeFrequency:
    import bisect

    params = ModelParams(model, d=d, n=n)
    sim = Simulator(params, rng)
    warm = math.ceil(7 * n * math.log(n))
    sim.run_events(warm, record=False)
    st = sim.state
    alive_sorted = sorted(st.alive)
    births: list[int | None] = []  # node born at each churn event index after warmup (None for deaths)
    hits = total = 0
    while total < trials:
        ev = sim.step()
        head = ev[0]
        if head.kind == "birth":
            alive_sorted.append(head.id)
            births.append(head.id)
        else:
            del alive_sorted[bisect.bisect_left(alive_sorted, head.id)]
            births.append(None)
        if len(births) <= k:
            continue
        u = births[-1 - k]
        if u is None or u not in st.pos:
            continue
        j = bisect.bisect_left(alive_sorted, u)
        if j == 0:
            continue
        target = alive_sorted[j - 1]
        for v in st.slots[u]:
            if v == target:
                hits += 1
        total += len(st.slots[u])
        if len(births) > 4 * (k + 1):
            del births[: len(births) - (k + 1)]
    return _binomial(hits, total)
