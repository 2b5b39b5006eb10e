"""Greedy modularity community detection on the undirected email skeleton.

Hand-rolled so determinism is under our control: nodes are visited in
ascending id order and ties break toward the lowest community id, which the
scoring layer relies on for reproducible runs.
"""

from __future__ import annotations

from collections import defaultdict

from .errors import DataError
from .ingest import ActivityGraph


def modularity(
    partition: dict[int, int], weights: dict[tuple[int, int], float], nodes: list[int]
) -> float:
    """Weighted modularity; self-loop weight counts once in m, twice in degree."""
    m = sum(weights.values())
    if m <= 0:
        return 0.0
    degree: dict[int, float] = defaultdict(float)
    intra: dict[int, float] = defaultdict(float)
    for (u, v), w in weights.items():
        if u == v:
            degree[u] += 2 * w
        else:
            degree[u] += w
            degree[v] += w
        if partition[u] == partition[v]:
            intra[partition[u]] += w
    comm_degree: dict[int, float] = defaultdict(float)
    for n in nodes:
        comm_degree[partition[n]] += degree.get(n, 0.0)
    q = 0.0
    for comm, k_c in comm_degree.items():
        q += intra.get(comm, 0.0) / m - (k_c / (2 * m)) ** 2
    return q


def _move_phase(
    nodes: list[int],
    adj: dict[int, dict[int, float]],
    degree: dict[int, float],
    m: float,
    community: dict[int, int],
) -> bool:
    comm_degree: dict[int, float] = defaultdict(float)
    for n in nodes:
        comm_degree[community[n]] += degree[n]

    improved = False
    moved = True
    sweeps = 0
    while moved and sweeps < 100:  # cap guards against tie-shuffle cycles
        moved = False
        sweeps += 1
        for n in nodes:
            own = community[n]
            comm_degree[own] -= degree[n]
            weight_to: dict[int, float] = defaultdict(float)
            for nbr, w in adj[n].items():
                if nbr != n:
                    weight_to[community[nbr]] += w
            candidates = sorted(set(weight_to) | {own})
            best_comm, best_gain = own, weight_to.get(own, 0.0) / m - (
                comm_degree[own] * degree[n]
            ) / (2 * m * m)
            for c in candidates:
                gain = weight_to.get(c, 0.0) / m - (comm_degree[c] * degree[n]) / (2 * m * m)
                if gain > best_gain + 1e-12 or (
                    abs(gain - best_gain) <= 1e-12 and c < best_comm
                ):
                    best_comm, best_gain = c, gain
            community[n] = best_comm
            comm_degree[best_comm] += degree[n]
            if best_comm != own:
                moved = True
                improved = True
    return improved


def detect_communities(graph: ActivityGraph, seed: int = 0) -> dict[int, int]:
    """Partition every node into exactly one community, labeled 0..k-1.

    ``seed`` is accepted for interface stability; the implementation is
    fully deterministic (ascending-id visit order) and does not consume it.
    """
    del seed
    nodes = graph.nodes
    if not nodes:
        raise DataError("cannot detect communities in an empty graph")
    weights = graph.undirected_weights()

    # map to dense indices for the coarsening loop
    level_nodes = list(range(len(nodes)))
    idx = {n: i for i, n in enumerate(nodes)}
    level_weights = {(idx[u], idx[v]): w for (u, v), w in weights.items()}
    membership = {i: i for i in level_nodes}  # original index -> current supernode

    while True:
        adj: dict[int, dict[int, float]] = {n: {} for n in level_nodes}
        degree: dict[int, float] = {n: 0.0 for n in level_nodes}
        m = 0.0
        for (u, v), w in level_weights.items():
            m += w
            if u == v:
                adj[u][u] = adj[u].get(u, 0.0) + w
                degree[u] += 2 * w
            else:
                adj[u][v] = adj[u].get(v, 0.0) + w
                adj[v][u] = adj[v].get(u, 0.0) + w
                degree[u] += w
                degree[v] += w
        community = {n: n for n in level_nodes}
        if m <= 0:
            break
        if not _move_phase(level_nodes, adj, degree, m, community):
            break

        # relabel communities 0..k-1 by their lowest member id, then coarsen
        groups: dict[int, list[int]] = defaultdict(list)
        for n in level_nodes:
            groups[community[n]].append(n)
        ordered = sorted(groups.values(), key=min)
        relabel = {}
        for new_id, members in enumerate(ordered):
            for n in members:
                relabel[n] = new_id
        membership = {orig: relabel[cur] for orig, cur in membership.items()}
        new_weights: dict[tuple[int, int], float] = defaultdict(float)
        for (u, v), w in level_weights.items():
            cu, cv = relabel[u], relabel[v]
            key = (cu, cv) if cu <= cv else (cv, cu)
            new_weights[key] += w
        if len(ordered) == len(level_nodes):
            break
        level_nodes = list(range(len(ordered)))
        level_weights = dict(new_weights)

    # final labels 0..k-1 ordered by lowest original node id
    groups2: dict[int, list[int]] = defaultdict(list)
    for orig_idx, comm in membership.items():
        groups2[comm].append(orig_idx)
    ordered = sorted(groups2.values(), key=min)
    partition = {}
    for new_id, members in enumerate(ordered):
        for orig_idx in members:
            partition[nodes[orig_idx]] = new_id
    return partition
