"""Small graphs shared by the test modules."""

import numpy as np

from hagemu.attack_graph import ExploitEdge, Hag, Node, NodeKind, PhysicalActionSpec, ProbSpec
from hagemu.building import build_building_hag


def edge(i, j, p=1.0, r=1.0, c=0.1):
    return ExploitEdge(i, j, r, c, ProbSpec(const=p))


def fig1(p=1.0, actions=True):
    """Seven nodes, entry node 1, physical roots 6 and 7."""
    spec = (PhysicalActionSpec("hit", 1.0, cost=0.2, reward=2.0, prob=ProbSpec(const=0.8)),) if actions else ()
    nodes = [Node(1, NodeKind.CYBER, entry_point=True)] + [Node(i, NodeKind.CYBER) for i in (2, 3, 4, 5)]
    nodes += [Node(6, NodeKind.PHYSICAL, physical_actions=spec), Node(7, NodeKind.PHYSICAL, physical_actions=spec)]
    pairs = [(1, 2), (1, 3), (2, 3), (3, 5), (5, 4), (4, 6), (5, 7)]
    return Hag(nodes, [edge(i, j, p) for i, j in pairs])


def chain(n_cyber=2, probs=None, phys_reward=0.5, phys_cost=0.0, phys_prob=1.0):
    """Entry node 1 -> ... -> physical sink with one constant-reward action."""
    probs = probs or [1.0] * n_cyber
    nodes = [Node(1, NodeKind.CYBER, entry_point=True)] + [Node(i, NodeKind.CYBER) for i in range(2, n_cyber + 1)]
    sink = n_cyber + 1
    nodes.append(Node(sink, NodeKind.PHYSICAL, physical_actions=(
        PhysicalActionSpec("act", 1.0, cost=phys_cost, reward=phys_reward, prob=ProbSpec(const=phys_prob)),)))
    return Hag(nodes, [edge(i, i + 1, p) for i, p in zip(range(1, sink), probs)])


def building(delta=1.0, all_certain=False):
    hag = build_building_hag(delta)
    if not all_certain:
        return hag
    return Hag(hag.nodes, [ExploitEdge(e.src, e.dst, e.reward, e.cost, ProbSpec(const=1.0)) for e in hag.edges])


def random_dag(rng, max_nodes=12, max_entry_edges=8):
    """Random OR graph: node 1 is the entry, sinks become physical roots, rewards keep E[net] >= 0."""
    while True:
        n = int(rng.integers(4, max_nodes + 1))
        roots = int(rng.integers(1, 3))
        n_cyber = n - roots
        edges = {}
        k_entry = int(rng.integers(1, min(max_entry_edges, n - 1) + 1))
        targets = rng.choice(np.arange(2, n + 1), size=k_entry, replace=False)
        for j in targets:
            edges[(1, int(j))] = None
        for i in range(2, n_cyber + 1):
            for j in range(i + 1, n + 1):
                if rng.random() < 0.35:
                    edges[(i, j)] = None
        # every cyber node except the entry gets an in-edge so the graph is connected
        for j in range(2, n + 1):
            if not any(d == j for _, d in edges):
                edges[(int(rng.integers(1, min(j, n_cyber + 1))), j)] = None
        if sum(1 for s, _ in edges if s == 1) > max_entry_edges:
            continue
        out = []
        for i, j in sorted(edges):
            p = float(rng.uniform(0.1, 1.0))
            c = float(rng.uniform(0.0, 0.5))
            r = float(rng.uniform(c / p, c / p + 2.0))  # p*r - c >= 0
            out.append(ExploitEdge(i, j, r, c, ProbSpec(const=p)))
        nodes = [Node(1, NodeKind.CYBER, entry_point=True)] + [Node(i, NodeKind.CYBER) for i in range(2, n_cyber + 1)]
        nodes += [Node(i, NodeKind.PHYSICAL) for i in range(n_cyber + 1, n + 1)]
        return Hag(nodes, out)
