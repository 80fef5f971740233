"""Interaction graph construction and clique partitioning.

Interaction strength between two agents is measured by their closest future
distance under zero-action flow. Edges closer than a per-type-pair threshold
d0 get weight d0/d (so weights are >= 1); the weighted graph is then split
into size-capped cliques with Louvain community detection, and every pair
inside a clique is treated as connected regardless of the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import networkx as nx
import numpy as np

from . import dynamics
from .geometry import Circle, Footprint, Rectangle

# distance floor when converting to edge weights, keeps weights finite
DISTANCE_FLOOR = 0.01

DEFAULT_THRESHOLDS = {
    (dynamics.VEHICLE, dynamics.VEHICLE): 30.0,
    (dynamics.VEHICLE, dynamics.PEDESTRIAN): 15.0,
    (dynamics.PEDESTRIAN, dynamics.VEHICLE): 15.0,
    (dynamics.PEDESTRIAN, dynamics.PEDESTRIAN): 5.0,
}

DEFAULT_FOOTPRINTS = {
    dynamics.VEHICLE: Rectangle(4.0, 2.0),
    dynamics.PEDESTRIAN: Circle(0.3),
}


@dataclass
class Agent:
    """A typed agent with a state history and (during training) a future."""

    id: str
    type: str
    footprint: Footprint
    history: np.ndarray                      # (H+1, 4), uniform dt, last = current
    future: np.ndarray | None = None         # (T, 4)
    map_feature: np.ndarray | None = None

    def __post_init__(self):
        if self.type not in dynamics.AGENT_TYPES:
            raise ValueError(f"unknown agent type {self.type!r}")
        self.history = np.asarray(self.history, dtype=np.float64)
        if self.history.ndim != 2 or self.history.shape[1] != dynamics.STATE_DIM:
            raise ValueError(f"history must be (H+1, 4), got {self.history.shape}")
        if self.future is not None:
            self.future = np.asarray(self.future, dtype=np.float64)

    @property
    def current(self) -> np.ndarray:
        return self.history[-1]


@dataclass
class SceneGraph:
    agents: list[Agent]
    adjacency: np.ndarray  # symmetric, zero diagonal; entries in {0} U [1, inf)


@dataclass
class Clique:
    """A fully connected group of agents; members are ordered by id."""

    agents: list[Agent]

    def __post_init__(self):
        self.agents = sorted(self.agents, key=lambda a: a.id)

    def __len__(self):
        return len(self.agents)

    @property
    def ids(self) -> list[str]:
        return [a.id for a in self.agents]

    def agent(self, agent_id: str) -> Agent:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)


def closest_future_distance(agent_i: Agent, agent_j: Agent, horizon: int, dt: float) -> float:
    """Minimum center distance between the two agents' zero-action flows."""
    fi = dynamics.flow(agent_i.current, agent_i.type, horizon, dt)
    fj = dynamics.flow(agent_j.current, agent_j.type, horizon, dt)
    d = np.linalg.norm(fi[:, :2] - fj[:, :2], axis=1)
    return float(d.min())


def build_adjacency(agents: list[Agent], thresholds: dict | None = None,
                    horizon: int = 8, dt: float = 0.5) -> SceneGraph:
    """Weighted interaction graph from closest future distances.

    A[i, j] = 0 when the flow distance exceeds the type-pair threshold d0,
    else d0 / max(d, floor), which lands in [1, inf).
    """
    thresholds = dict(DEFAULT_THRESHOLDS if thresholds is None else thresholds)
    agents = sorted(agents, key=lambda a: a.id)
    n = len(agents)
    A = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d0 = thresholds[(agents[i].type, agents[j].type)]
            if d0 <= 0:
                raise ValueError("distance thresholds must be positive")
            d = closest_future_distance(agents[i], agents[j], horizon, dt)
            if d <= d0:
                A[i, j] = A[j, i] = d0 / max(d, DISTANCE_FLOOR)
    return SceneGraph(agents, A)


def _louvain(graph: nx.Graph, seed: int) -> list[set]:
    return nx.community.louvain_communities(graph, weight="weight", seed=seed)


def _min_weight_edge(graph: nx.Graph):
    """Lowest-weight edge; ties broken by sorted endpoint ids."""
    best = None
    for u, v, w in graph.edges(data="weight"):
        key = (w, *sorted((u, v)))
        if best is None or key < best:
            best = key
    return best[1], best[2]


def _split_oversized(graph: nx.Graph, members: list, max_size: int, seed: int) -> list[list]:
    if len(members) <= max_size:
        return [sorted(members)]
    sub = graph.subgraph(members).copy()
    while True:
        parts = _louvain(sub, seed)
        if len(parts) > 1:
            out = []
            for part in sorted(parts, key=min):
                out.extend(_split_oversized(graph, list(part), max_size, seed))
            return out
        if sub.number_of_edges() == 0:
            return [[m] for m in sorted(members)]
        u, v = _min_weight_edge(sub)
        sub.remove_edge(u, v)


def partition_cliques(graph: SceneGraph, max_size: int, seed: int = 0) -> list[Clique]:
    """Partition the scene graph into cliques of at most max_size agents.

    Louvain on the weighted adjacency; communities over the cap are split by
    removing their lowest-weight edge and re-running Louvain inside the
    community until every part fits. Deterministic: nodes are keyed by agent
    id and ties break lexicographically.
    """
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    agents = graph.agents
    by_id = {a.id: a for a in agents}
    g = nx.Graph()
    for a in agents:
        g.add_node(a.id)
    n = len(agents)
    for i in range(n):
        for j in range(i + 1, n):
            if graph.adjacency[i, j] > 0:
                g.add_edge(agents[i].id, agents[j].id, weight=float(graph.adjacency[i, j]))
    communities = _louvain(g, seed) if g.number_of_edges() else [{a.id} for a in agents]
    cliques = []
    for community in sorted(communities, key=min):
        for part in _split_oversized(g, list(community), max_size, seed):
            cliques.append(Clique([by_id[m] for m in part]))
    cliques.sort(key=lambda c: c.ids[0])
    return cliques
