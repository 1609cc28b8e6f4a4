"""Independent reference implementations used as test oracles."""
import networkx as nx


def naive_graph(traj, t):
    """Replay events with plain dicts: owner -> {slot: target}."""
    alive, slots = set(), {}
    if traj.base is not None:
        alive = set(traj.base.alive)
        slots = {u: {k: v for k, v in enumerate(ts) if v is not None} for u, ts in traj.base.slots.items()}
    for e in traj.events:
        if e.t > t:
            break
        if e.kind == "birth":
            alive.add(e.id)
            slots[e.id] = dict(enumerate(e.targets))
        elif e.kind == "death":
            alive.discard(e.id)
            slots.pop(e.id, None)
            for owned in slots.values():
                for k in [k for k, v in owned.items() if v == e.id]:
                    del owned[k]
        else:
            slots[e.owner][e.slot] = e.new_target
    g = nx.Graph()
    g.add_nodes_from(alive)
    for u, owned in slots.items():
        for v in owned.values():
            g.add_edge(u, v)
    return g


def naive_flood(traj, t0, source, steps, discretized=False):
    """Grid flooding computed from naive snapshots at every integer time."""
    informed = {source}
    out = [set(informed)]
    for s in range(steps):
        g = naive_graph(traj, t0 + s)
        nxt = naive_graph(traj, t0 + s + 1)
        alive_next = set(nxt.nodes)
        new = set()
        for x in informed:
            if discretized and x not in alive_next:
                continue
            for y in g.neighbors(x):
                # edges between alive nodes persist, so the edge lasts
                # through the interval exactly when both ends survive it
                if y in alive_next:
                    new.add(y)
        informed = (informed & alive_next) | new
        out.append(set(informed))
    return out
