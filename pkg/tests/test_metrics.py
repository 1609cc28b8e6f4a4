import math

import networkx as nx
import pytest
from hypothesis import given, settings, strategies as st

from churnsim.engine import run_model
from churnsim.metrics import (
    HorizonTooShort,
    boundary_ratio,
    degree_stats,
    edge_prob_empirical,
    edge_prob_poisson_regen_bound,
    edge_prob_streaming_regen,
    h_out_bruteforce,
    h_out_exact,
    h_out_sampled,
    isolated_count,
    isolated_count_from_slots,
    isolated_forever,
    younger_target_bound,
)
from churnsim.model import Snapshot, snapshot_at
from churnsim.rng import RandomStream

from helpers import naive_graph


def _snap(g):
    return Snapshot.from_edges(g.nodes, g.edges)


@pytest.mark.parametrize("graph,expected", [
    (nx.path_graph(4), 0.5),
    (nx.cycle_graph(6), 2 / 3),
    (nx.star_graph(4), 0.5),
    (nx.complete_graph(6), 1.0),
    (nx.disjoint_union(nx.path_graph(2), nx.complete_graph(4)), 0.0),
])
def test_h_out_hand_computed(graph, expected):
    g = nx.relabel_nodes(graph, lambda v: v + 1)
    snap = _snap(g)
    rep = h_out_exact(snap)
    assert rep.h_out == pytest.approx(expected)
    assert boundary_ratio(snap, rep.witness) == pytest.approx(expected)
    assert rep.to_json()["schema"] == "v1"


@settings(max_examples=60, deadline=None)
@given(m=st.integers(2, 9), p=st.floats(0.05, 0.9), seed=st.integers(0, 2**31 - 1),
       lo=st.integers(1, 3))
def test_exact_matches_bruteforce(m, p, seed, lo):
    g = nx.relabel_nodes(nx.gnp_random_graph(m, p, seed=seed), lambda v: v + 1)
    snap = _snap(g)
    if lo > m // 2:
        with pytest.raises(ValueError):
            h_out_exact(snap, lo)
        return
    assert h_out_exact(snap, lo).h_out == pytest.approx(h_out_bruteforce(snap, lo))


@settings(max_examples=40, deadline=None)
@given(m=st.integers(4, 14), p=st.floats(0.05, 0.8), seed=st.integers(0, 2**31 - 1),
       samples=st.integers(1, 300))
def test_sampled_never_below_exact(m, p, seed, samples):
    g = nx.relabel_nodes(nx.gnp_random_graph(m, p, seed=seed), lambda v: v + 1)
    snap = _snap(g)
    exact = h_out_exact(snap).h_out
    rep = h_out_sampled(snap, 1, None, samples, RandomStream(seed))
    assert rep.h_out >= exact - 1e-12
    assert rep.h_out == pytest.approx(boundary_ratio(snap, rep.witness))
    assert 1 <= len(rep.witness) <= m // 2


def test_exact_size_limit_and_ranges():
    snap = _snap(nx.relabel_nodes(nx.path_graph(30), lambda v: v + 1))
    with pytest.raises(ValueError):
        h_out_exact(snap)
    with pytest.raises(ValueError):
        h_out_sampled(snap, 1, 16, 10, RandomStream(0))
    with pytest.raises(ValueError):
        h_out_sampled(snap, 1, None, 0, RandomStream(0))
    # a path's best sets are its ends
    assert h_out_sampled(snap, 1, None, 2000, RandomStream(1)).h_out <= 1 / 5


def test_isolated_counts_agree_and_degree_stats():
    for kind in ("sdg", "pdg"):
        traj = run_model(kind, {"n": 60}, d=1, horizon=400, seed=2)
        snap = snapshot_at(traj, traj.horizon)
        assert isolated_count(snap) == isolated_count_from_slots(snap)
        ds = degree_stats(snap)
        assert sum(ds.histogram.values()) == len(snap)
        assert ds.mean == pytest.approx(2 * len(snap.edges()) / len(snap))
        assert ds.histogram.get(0, 0) == isolated_count(snap)


def test_isolated_forever_against_naive_scan():
    checked = 0
    for seed in range(6):
        traj = run_model("sdg", {"n": 40}, d=1, horizon=200, seed=seed)
        t = 100
        got = isolated_forever(traj, t)
        g = naive_graph(traj, t)
        iso = {v for v in g.nodes if g.degree(v) == 0}
        expect = set()
        for v in iso:
            death = v + 40
            times = sorted({e.t for e in traj.events if t < e.t < death})
            if all(naive_graph(traj, s).degree(v) == 0 for s in times):
                expect.add(v)
        assert got == expect
        checked += len(iso)
    assert checked > 0


def test_isolated_forever_needs_horizon():
    traj = run_model("sdg", {"n": 40}, d=1, horizon=100, seed=0)
    if isolated_count(snapshot_at(traj, 100)):
        with pytest.raises(HorizonTooShort):
            isolated_forever(traj, 100)


def test_edge_probability_formulas():
    assert edge_prob_streaming_regen(50, 0) == pytest.approx(1 / 49)
    assert edge_prob_streaming_regen(50, 49) == pytest.approx((1 / 49) * (50 / 49) ** 49)
    assert younger_target_bound(50) == pytest.approx(1 / 49)
    assert edge_prob_poisson_regen_bound(1000, 0) == pytest.approx(1 / 800)
    with pytest.raises(ValueError):
        edge_prob_streaming_regen(50, 50)
    with pytest.raises(ValueError):
        edge_prob_poisson_regen_bound(1000, -1)


def test_edge_frequency_estimators():
    f = edge_prob_empirical("sdgr", 30, 3, 5, 60_000, RandomStream(1))
    expected = edge_prob_streaming_regen(30, 5)
    assert abs(f.frequency - expected) < 4 * math.sqrt(expected / f.histories)
    g = edge_prob_empirical("pdgr", 100, 3, 20, 20_000, RandomStream(2))
    assert g.frequency <= edge_prob_poisson_regen_bound(100, 20) + 4 * g.std_error
    with pytest.raises(ValueError):
        edge_prob_empirical("sdgr", 30, 3, 29, 10_000, RandomStream(0))
    with pytest.raises(ValueError):
        edge_prob_empirical("sdgr", 30, 3, 2, 100, RandomStream(0))
