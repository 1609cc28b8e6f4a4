import io

import pytest
from hypothesis import given, settings, strategies as st

from churnsim.engine import Simulator
from churnsim.flooding import (
    TRACE_COLUMNS,
    SourceError,
    flood,
    flood_sync,
    informed_fraction,
    set_digest,
    write_traces_csv,
)
from churnsim.model import Birth, Death, ModelParams, Trajectory
from churnsim.rng import RandomStream

from helpers import naive_flood


def _live(kind, n, d, seed, warm):
    sim = Simulator(ModelParams(kind, d=d, n=n), RandomStream(seed))
    sim.run_events(warm, record=False)
    while True:
        if ModelParams(kind, d=d, n=n).kind.streaming:
            base = sim.state.copy()
            first = sim.step()
            break
        jump = sim.draw()
        if jump.birth:
            base = sim.state.copy()
            first = sim.apply_jump(jump)
            break
        sim.apply_jump(jump)
    births = [e for e in first if e.kind == "birth"]
    return sim.live_trajectory(base=base, initial=first), births[0].t, births[0].id


def test_sync_hand_example():
    # path 1 - 2 - 3 built in rounds 1..3, node 4 joins at round 4 linking to 3
    p = ModelParams("sdg", d=1, n=10)
    events = [Birth(1, 1, ()), Birth(2, 2, (1,)), Birth(3, 3, (2,)), Birth(4, 4, (3,)), Birth(5, 5, (4,))]
    traj = Trajectory(p, events, 0, horizon=8)
    tr = flood_sync(traj, 4, 4, keep_sets=True)
    assert tr.sets[0] == {4}
    # 5 links to 4 during round 5, so that edge is first used from t=5 on
    assert tr.sets[1] == {3, 4}
    assert tr.sets[2] == {2, 3, 4, 5}
    assert tr.sets[3] == {1, 2, 3, 4, 5}
    assert tr.flooding_time == 3
    assert informed_fraction(tr, 5) == pytest.approx(2 / 5)


def test_sync_exempts_last_newborn():
    p = ModelParams("sdg", d=1, n=10)
    # node 3 joins at round 3 and links to 2
    events = [Birth(1, 1, ()), Birth(2, 2, (1,)), Birth(3, 3, (2,))]
    traj = Trajectory(p, events, 0, horizon=3)
    tr = flood_sync(traj, 2, 2, require_newborn=True)
    # at t=3 the informed set is {1, 2}; node 3 is exempt for sync only
    assert tr.completed_at == 3
    tr2 = flood(traj, 2, 2, "async")
    assert tr2.completed_at is None and tr2.samples[-1].informed == 2


def test_discretized_needs_live_sender():
    p = ModelParams("sdg", d=1, n=2)
    events = [Birth(1, 1, ()), Birth(2, 2, (1,)), Death(3, 1), Birth(3, 3, (2,))]
    traj = Trajectory(p, events, 0, horizon=3)
    # source 1 informed at 2, dies at 3: only the plain variant transmits
    a = flood(traj, 2, 1, "async", keep_sets=True, stop_on_completion=False)
    b = flood(traj, 2, 1, "discretized", keep_sets=True, stop_on_completion=False)
    assert a.sets[1] == {2}
    assert b.sets[1] == frozenset()


def test_source_validation():
    sim = Simulator(ModelParams("sdg", d=2, n=10), RandomStream(0))
    sim.run_events(30, record=False)
    traj = sim.live_trajectory()
    with pytest.raises(SourceError):
        flood_sync(traj, 30, 29)
    with pytest.raises(SourceError):
        flood(traj, 30, 5, "async")
    with pytest.raises(ValueError):
        flood_sync(Trajectory(ModelParams("pdg", d=2, n=10), [], 0), 0, 1)
    traj.close()


@settings(max_examples=25, deadline=None)
@given(kind=st.sampled_from(["sdg", "sdgr", "pdg", "pdgr"]), n=st.integers(5, 25), d=st.integers(1, 4),
       seed=st.integers(0, 2**32), variant=st.sampled_from(["async", "discretized"]))
def test_incremental_flooding_matches_naive(kind, n, d, seed, variant):
    traj, t0, src = _live(kind, n, d, seed, warm=3 * n)
    steps = 12
    tr = flood(traj, t0, src, variant, max_steps=steps, keep_sets=True, stop_on_completion=False)
    ref = naive_flood(traj, t0, src, len(tr.sets) - 1, discretized=variant == "discretized")
    assert [set(s) for s in tr.sets] == ref
    traj.close()


@settings(max_examples=20, deadline=None)
@given(n=st.integers(5, 30), d=st.integers(1, 4), seed=st.integers(0, 2**32))
def test_sync_equals_async_on_streaming(n, d, seed):
    traj, t0, src = _live("sdgr", n, d, seed, warm=2 * n)
    a = flood(traj, t0, src, "sync", max_steps=10, keep_sets=True, stop_on_completion=False)
    b = flood(traj, t0, src, "async", max_steps=10, keep_sets=True, stop_on_completion=False)
    assert a.sets == b.sets
    assert [s.digest for s in a.samples] == [set_digest(s) for s in a.sets]


def test_stop_above_and_horizon():
    traj, t0, src = _live("sdgr", 200, 6, 1, warm=400)
    tr = flood(traj, t0, src, "sync", stop_above=7, stop_on_completion=False)
    assert tr.samples[-1].informed > 7 and all(s.informed <= 7 for s in tr.samples[:-1])
    traj.close()
    short = Trajectory(traj.params, traj.events, 0, horizon=t0 + 2, base=traj.base)
    assert len(flood(short, t0, src, "sync", stop_on_completion=False).samples) == 3


def test_trace_csv():
    traj, t0, src = _live("sdgr", 50, 4, 2, warm=100)
    tr = flood(traj, t0, src, "sync")
    buf = io.StringIO()
    write_traces_csv([(3, tr)], buf)
    rows = buf.getvalue().splitlines()
    assert rows[0] == ",".join(TRACE_COLUMNS)
    assert len(rows) == len(tr.samples) + 1
    assert rows[1].startswith("3,sync,0,")
    assert rows[-1].endswith(",1")


def test_set_digest_is_order_free():
    assert set_digest([1, 2, 3]) == set_digest([3, 1, 2])
    assert set_digest([1, 2]) != set_digest([1, 3])
    assert set_digest([]) == 0
