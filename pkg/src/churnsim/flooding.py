"""Flooding processes over a trajectory.

All three variants advance on the unit grid t0, t0 + 1, ... and read
neighbourhoods from the undirected snapshot at the previous grid point:

* ``sync``: I_t = (I_{t-1} + boundary_{t-1}(I_{t-1})) & N_t, complete
  once I_t covers N_{t-1} & N_t (the node born in the last round is exempt).
* ``async``: the same recursion, complete once I_t covers N_t.
* ``discretized``: an informed node only transmits over (t-1, t] if it is
  still alive at t and the edge lasted the whole interval; complete once
  I_t covers N_t.

The implementation is incremental: an informed node pushes its whole
neighbourhood once, when it becomes informed, and afterwards only over
edges created since the previous grid point. Edges between two alive
nodes are never removed in these models, so that covers every edge.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import IO, Iterable, NamedTuple

from .model import Replayer, Trajectory

VARIANTS = ("sync", "async", "discretized")

_M64 = (1 << 64) - 1


def _mix(x: int) -> int:
    # splitmix64 finalizer
    x = (x + 0x9E3779B97F4A7C15) & _M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _M64
    return x ^ (x >> 31)


def set_digest(nodes: Iterable[int]) -> int:
    """Order-independent 64-bit digest of a node set."""
    return sum(_mix(v) for v in nodes) & _M64


class FloodSample(NamedTuple):
    t: float
    alive: int
    informed: int
    digest: int


@dataclass
class FloodTrace:
    source: int
    t0: float
    variant: str
    samples: list[FloodSample] = field(default_factory=list)
    completed_at: float | None = None
    sets: list[frozenset] | None = None

    @property
    def completed(self) -> bool:
        return self.completed_at is not None

    @property
    def flooding_time(self) -> float | None:
        return None if self.completed_at is None else self.completed_at - self.t0

    def sample_at(self, t: float) -> FloodSample:
        m = round(t - self.t0)
        if m < 0 or m >= len(self.samples) or abs(self.samples[m].t - t) > 1e-9:
            raise KeyError(f"time {t} was not sampled")
        return self.samples[m]

    def informed_at(self, t: float) -> frozenset:
        if self.sets is None:
            raise ValueError("trace was recorded without informed sets")
        self.sample_at(t)
        return self.sets[round(t - self.t0)]

    def max_informed(self) -> int:
        return max(s.informed for s in self.samples)


class SourceError(ValueError):
    pass


def informed_fraction(trace: FloodTrace, t: float) -> float:
    s = trace.sample_at(t)
    return s.informed / s.alive if s.alive else 0.0


def _flood(
    traj: Trajectory,
    t0: float,
    source: int,
    variant: str,
    max_steps: int | None,
    keep_sets: bool,
    stop_above: int | None,
    stop_on_completion: bool,
) -> FloodTrace:
    if variant not in VARIANTS:
        raise ValueError(f"unknown flooding variant {variant!r}")
    rep = Replayer(traj)
    st = rep.advance_to(t0)
    if source not in st.pos:
        raise SourceError(f"source {source} is not alive at {t0}")
    rep.reset_log()
    pos = st.pos
    informed = {source}
    fresh = [source]
    trace = FloodTrace(source, t0, variant, sets=[] if keep_sets else None)

    def record(t):
        trace.samples.append(FloodSample(t, len(st.alive), len(informed), set_digest(informed)))
        if keep_sets:
            trace.sets.append(frozenset(informed))

    record(t0)
    discretized = variant == "discretized"
    step = 0
    t = t0
    while informed:
        if max_steps is not None and step >= max_steps:
            break
        if stop_above is not None and len(informed) > stop_above:
            break
        if not traj.live and t + 1 > traj.horizon:
            break
        # candidate transmissions over the snapshot at t
        cand = []
        for x in fresh:
            for y in st.neighbors(x):
                if y not in informed:
                    cand.append((x, y))
        for a, b in rep.added:
            if a in informed:
                if b not in informed and st.has_edge(a, b):
                    cand.append((a, b))
            elif b in informed and st.has_edge(a, b):
                cand.append((b, a))
        rep.reset_log()
        rep.advance_to(t + 1)
        t = t + 1
        step += 1
        new = set()
        for x, y in cand:
            if y in pos and (not discretized or x in pos):
                new.add(y)
        if rep.died:
            informed = {v for v in informed if v in pos}
        informed |= new
        fresh = list(new)
        record(t)
        if variant == "sync":
            required = len(st.alive) - sum(1 for v in rep.born if v in pos)
            covered = len(informed) - sum(1 for v in rep.born if v in informed)
            done = covered >= required
        else:
            done = len(informed) == len(st.alive)
        if done and trace.completed_at is None:
            trace.completed_at = t
            if stop_on_completion:
                break
    return trace


def flood_sync(traj: Trajectory, t0: int, source: int, *, max_steps: int | None = None,
               keep_sets: bool = False, stop_above: int | None = None, stop_on_completion: bool = True,
               require_newborn: bool = True) -> FloodTrace:
    """Round-based flooding over a streaming trajectory.

    By default the source must be the node that joined at round ``t0``.
    """
    if not traj.params.kind.streaming:
        raise ValueError("synchronous flooding needs a streaming trajectory")
    if require_newborn and source != t0:
        raise SourceError(f"source {source} did not join at round {t0}")
    return _flood(traj, t0, source, "sync", max_steps, keep_sets, stop_above, stop_on_completion)


def flood_async(traj: Trajectory, t0: float, source: int, *, max_steps: int | None = None,
                keep_sets: bool = False, stop_above: int | None = None,
                stop_on_completion: bool = True) -> FloodTrace:
    return _flood(traj, t0, source, "async", max_steps, keep_sets, stop_above, stop_on_completion)


def flood_discretized(traj: Trajectory, t0: float, source: int, *, max_steps: int | None = None,
                      keep_sets: bool = False, stop_above: int | None = None,
                      stop_on_completion: bool = True) -> FloodTrace:
    return _flood(traj, t0, source, "discretized", max_steps, keep_sets, stop_above, stop_on_completion)


def flood(traj: Trajectory, t0: float, source: int, variant: str, **kw) -> FloodTrace:
    fn = {"sync": flood_sync, "async": flood_async, "discretized": flood_discretized}[variant]
    return fn(traj, t0, source, **kw)


TRACE_COLUMNS = ("trial", "variant", "t_offset", "alive", "informed", "fraction", "completed")


def write_traces_csv(traces: Iterable[tuple[int, FloodTrace]], fp: IO[str]) -> None:
    w = csv.writer(fp, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for trial, tr in traces:
        for s in tr.samples:
            done = tr.completed_at is not None and s.t >= tr.completed_at
            frac = s.informed / s.alive if s.alive else 0.0
            w.writerow([trial, tr.variant, _fmt(s.t - tr.t0), s.alive, s.informed, f"{frac:.6f}", int(done)])


def _fmt(x: float) -> str:
    r = round(x)
    return str(r) if abs(x - r) < 1e-9 else repr(x)
