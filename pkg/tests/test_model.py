import io
import json

import pytest
from hypothesis import given, settings, strategies as st

from churnsim.engine import Simulator, run_model
from churnsim.model import (
    Birth,
    Death,
    GraphState,
    InvariantError,
    ModelKind,
    ModelParams,
    Replayer,
    Rewire,
    Snapshot,
    TimeOutOfRange,
    Trajectory,
    edge_present_throughout,
    load_trajectory,
    read_jsonl,
    save_trajectory,
    snapshot_at,
    write_jsonl,
)
from churnsim.rng import RandomStream

from helpers import naive_graph

KINDS = [k.value for k in ModelKind]


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams("sdg", d=0, n=10)
    with pytest.raises(ValueError):
        ModelParams("sdgr", d=2)
    with pytest.raises(ValueError):
        ModelParams("pdg", d=2, lam=1.0, mu=0.0)
    p = ModelParams("pdgr", d=3, n=200)
    assert p.lam == 1.0 and p.mu == pytest.approx(1 / 200)
    assert ModelParams("pdg", d=3, lam=2.0, mu=0.01).n == 200


def test_params_header_roundtrip():
    for p in (ModelParams("sdgr", d=4, n=30, regen_before_birth=True), ModelParams("pdg", d=2, lam=1.5, mu=0.01)):
        assert ModelParams.from_header(p.header(9)) == p


@pytest.mark.parametrize("kind", KINDS)
def test_jsonl_roundtrip(kind):
    traj = run_model(kind, {"n": 20}, d=3, horizon=300, seed=4)
    buf = io.StringIO()
    write_jsonl(traj, buf)
    back = read_jsonl(io.StringIO(buf.getvalue()))
    assert back.params == traj.params
    assert back.horizon == traj.horizon
    assert [tuple(e) for e in back.events] == [tuple(e) for e in traj.events]
    header = json.loads(buf.getvalue().splitlines()[0])
    assert header["schema"] == "v1"


def test_jsonl_file_and_errors(tmp_path):
    traj = run_model("sdgr", {"n": 10}, d=2, horizon=40, seed=1)
    path = tmp_path / "t.jsonl"
    save_trajectory(traj, path)
    assert snapshot_at(load_trajectory(path), 40) == snapshot_at(traj, 40)
    with pytest.raises(ValueError):
        read_jsonl(io.StringIO(""))
    bad = io.StringIO(json.dumps(traj.params.header(0)) + "\n" + json.dumps({"t": 1, "kind": "teleport"}) + "\n")
    with pytest.raises(ValueError):
        read_jsonl(bad)


@settings(max_examples=30, deadline=None)
@given(kind=st.sampled_from(KINDS), n=st.integers(2, 25), d=st.integers(1, 5),
       seed=st.integers(0, 2**32), horizon=st.integers(1, 150))
def test_replay_matches_naive_graph(kind, n, d, seed, horizon):
    traj = run_model(kind, {"n": n}, d=d, horizon=horizon, seed=seed)
    rep = Replayer(traj, check=True)
    times = sorted({e.t for e in traj.events})
    for t in times[:: max(1, len(times) // 8)]:
        st_ = rep.advance_to(t)
        snap = Snapshot.from_state(st_)
        g = naive_graph(traj, t)
        assert set(snap.ids) == set(g.nodes)
        assert {tuple(sorted(e)) for e in g.edges} == set(snap.edges())


@settings(max_examples=30, deadline=None)
@given(kind=st.sampled_from(KINDS), n=st.integers(2, 30), d=st.integers(1, 6), seed=st.integers(0, 2**32))
def test_engine_invariants_every_step(kind, n, d, seed):
    params = ModelParams(kind, d=d, n=n)
    sim = Simulator(params, RandomStream(seed))
    for _ in range(120):
        sim.step()
        sim.state.check(params)
        for u, targets in sim.state.slots.items():
            assert len(targets) in (0, d)
            if params.regenerate and len(sim.state.alive) > 1:
                assert sim.state.out_degree(u) == len(targets)


def test_snapshot_json_roundtrip_and_csr():
    traj = run_model("sdgr", {"n": 15}, d=3, horizon=60, seed=2)
    snap = snapshot_at(traj, 60)
    again = Snapshot.from_json(json.loads(json.dumps(snap.to_json())))
    assert again.adjacency == snap.adjacency
    assert again.ids == snap.ids
    a = snap.csr
    assert (a != a.T).nnz == 0
    assert a.sum() == 2 * len(snap.edges())


def test_snapshot_at_range_errors():
    traj = run_model("sdg", {"n": 5}, d=1, horizon=10, seed=0)
    with pytest.raises(TimeOutOfRange):
        snapshot_at(traj, 11)
    rep = Replayer(traj)
    rep.advance_to(6)
    with pytest.raises(TimeOutOfRange):
        rep.advance_to(3)


def test_replay_rejects_corrupt_logs():
    p = ModelParams("sdg", d=1, n=5)
    bad = Trajectory(p, [Birth(1, 1, ()), Birth(2, 2, (7,))], 0)
    with pytest.raises(InvariantError):
        Replayer(bad).advance_to(2)
    bad = Trajectory(p, [Birth(1, 1, ()), Death(2, 5)], 0)
    with pytest.raises(InvariantError):
        Replayer(bad).advance_to(2)
    bad = Trajectory(p, [Birth(1, 1, ()), Birth(2, 2, (1,)), Rewire(3, 2, 0, 1, 1)], 0)
    with pytest.raises(InvariantError):
        Replayer(bad).advance_to(3)


def test_edge_present_throughout_hand_example():
    p = ModelParams("sdg", d=1, n=3)
    # rounds: 1 joins; 2 -> 1; 3 -> 2; 4: 1 dies, 4 -> 3
    events = [Birth(1, 1, ()), Birth(2, 2, (1,)), Birth(3, 3, (2,)), Death(4, 1), Birth(4, 4, (3,))]
    traj = Trajectory(p, events, 0)
    assert edge_present_throughout(traj, 1, 2, 2, 3)
    assert not edge_present_throughout(traj, 1, 2, 2, 4)
    assert not edge_present_throughout(traj, 3, 4, 3, 4)
    assert edge_present_throughout(traj, 2, 3, 3, 4)
    with pytest.raises(KeyError):
        edge_present_throughout(traj, 1, 99, 1, 2)


def test_graph_state_bookkeeping():
    g = GraphState(2)
    g.add_node(1, 0, ())
    g.add_node(2, 1, (1, 1))
    g.add_node(3, 2, (1, 2))
    assert g.neighbors(1) == {2, 3}
    assert g.degree(2) == 2
    vacated = g.remove_node(1)
    assert vacated == [4, 5, 6]  # (2,0), (2,1), (3,0)
    assert g.slots[2] == [None, None] and g.slots[3] == [None, 2]
    g.check()
    with pytest.raises(InvariantError):
        g.add_node(2, 3, ())
