"""Clique encoder: histories (and futures, when training) to factor tables.

Per-agent state histories and per-ordered-pair relative histories are
pre-encoded with shared fully connected layers and run through per-type
LSTMs. Feedforward factor nets then map the encodings to node tables (one
score per latent value) and edge tables (one score per latent value pair),
which define the prior and posterior joint latent distributions. Prior and
posterior use disjoint parameter sets; prior nets never see futures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import dynamics
from .autodiff import Value
from .data import feature_dim, state_features
from .geometry import Circle, Rectangle
from .latent import GibbsLatent
from .nn import MLP, Linear, LSTMCell, ParameterStore
from .scene_graph import Agent, Clique

EDGE_FEATURE_DIM = 8  # rel pos (2) + rel vel (2) + own size (2) + other size (2)

AGENT_TYPES = dynamics.AGENT_TYPES
EDGE_TYPES = tuple((a, b) for a in AGENT_TYPES for b in AGENT_TYPES)


def footprint_size(footprint) -> np.ndarray:
    if isinstance(footprint, Rectangle):
        return np.array([footprint.length, footprint.width])
    if isinstance(footprint, Circle):
        return np.array([2.0 * footprint.radius, 2.0 * footprint.radius])
    raise TypeError(f"unknown footprint {footprint!r}")


def edge_features(agent_i: Agent, agent_j: Agent, which: str = "history") -> np.ndarray:
    """Relative-state rows for the ordered pair (i, j): (K, 8)."""
    si = agent_i.history if which == "history" else agent_i.future
    sj = agent_j.history if which == "history" else agent_j.future
    rel_pos = sj[:, 0:2] - si[:, 0:2]
    rel_vel = (dynamics.velocity_vector(sj, agent_j.type)
               - dynamics.velocity_vector(si, agent_i.type))
    size_i = np.broadcast_to(footprint_size(agent_i.footprint), (len(si), 2))
    size_j = np.broadcast_to(footprint_size(agent_j.footprint), (len(si), 2))
    return np.concatenate([rel_pos, rel_vel, size_i, size_j], axis=1)


@dataclass
class CliqueEncodings:
    """Deterministic feature vectors for one clique, keyed by agent id."""

    node_history: dict[str, Value]
    edge_history: dict[tuple[str, str], Value]  # every ordered pair
    node_future: dict[str, Value] | None = None


@dataclass
class FactorTables:
    """Node and edge factor values (autodiff Values) defining a Gibbs latent."""

    agent_ids: list[str]
    cards: list[int]
    node: dict[str, Value]                     # (card,) per agent
    edge: dict[tuple[str, str], Value]         # (card_a, card_b), ids ordered a < b

    def to_gibbs(self, enumeration_cap: int) -> GibbsLatent:
        index = {a: i for i, a in enumerate(self.agent_ids)}
        return GibbsLatent(
            agent_ids=list(self.agent_ids),
            cards=list(self.cards),
            node_factors=[self.node[a].data.copy() for a in self.agent_ids],
            edge_factors={(index[a], index[b]): v.data.copy()
                          for (a, b), v in self.edge.items()},
            enumeration_cap=enumeration_cap,
        )


class CliqueEncoder:
    """Owns the encoder parameters; see module docstring for the data flow."""

    def __init__(self, store: ParameterStore, cfg, rng: np.random.Generator):
        self.cfg = cfg
        card = cfg.latent_card
        self.node_pre = {t: Linear(store, f"pre.node.{t}", feature_dim(t), cfg.pre_dim, rng)
                         for t in AGENT_TYPES}
        self.edge_pre = {et: Linear(store, f"pre.edge.{et[0]}-{et[1]}", EDGE_FEATURE_DIM,
                                    cfg.pre_dim, rng)
                         for et in EDGE_TYPES}
        self.hist_lstm = {t: LSTMCell(store, f"enc.hist.{t}", cfg.pre_dim, cfg.enc_hidden, rng)
                          for t in AGENT_TYPES}
        self.future_lstm = {t: LSTMCell(store, f"enc.future.{t}", cfg.pre_dim, cfg.enc_hidden, rng)
                            for t in AGENT_TYPES}
        self.edge_lstm = {et: LSTMCell(store, f"enc.edge.{et[0]}-{et[1]}", cfg.pre_dim,
                                       cfg.edge_hidden, rng)
                          for et in EDGE_TYPES}
        node_in = cfg.enc_hidden + cfg.map_dim
        edge_in = 2 * cfg.edge_hidden
        self.prior_node = {t: MLP(store, f"factor.prior.node.{t}",
                                  (node_in, cfg.factor_hidden, card), rng)
                           for t in AGENT_TYPES}
        self.post_node = {t: MLP(store, f"factor.post.node.{t}",
                                 (node_in + cfg.enc_hidden, cfg.factor_hidden, card), rng)
                          for t in AGENT_TYPES}
        self.prior_edge = {et: MLP(store, f"factor.prior.edge.{et[0]}-{et[1]}",
                                   (edge_in, cfg.factor_hidden, card * card), rng)
                           for et in EDGE_TYPES}
        self.post_edge = {et: MLP(store, f"factor.post.edge.{et[0]}-{et[1]}",
                                  (edge_in + 2 * cfg.enc_hidden, cfg.factor_hidden, card * card),
                                  rng)
                          for et in EDGE_TYPES}

    # ------------------------------------------------------------------
    def pre_encode_node(self, agent_type: str, features: Value) -> Value:
        """Shared state pre-encoding used by the encoder and the decoder."""
        return ad.tanh(self.node_pre[agent_type](features))

    def pre_encode_edge(self, edge_type, features: Value) -> Value:
        return ad.tanh(self.edge_pre[edge_type](features))

    def _run_batched_lstm(self, pre_layer, cell, stacked: np.ndarray) -> Value:
        """Pre-encode and unroll an LSTM over stacked rows (batch, steps, dim).

        Returns the final hidden state (batch, hidden). Batch rows are
        independent, so per-agent results do not depend on stacking order.
        """
        batch, steps, dim = stacked.shape
        flat = Value(stacked.reshape(batch * steps, dim))
        pre = ad.tanh(pre_layer(flat)).reshape(batch, steps, -1)
        h, c = cell.zero_state(batch)
        for t in range(steps):
            h, c = cell.step(pre[:, t, :], h, c)
        return h

    def _map_feature(self, agent: Agent) -> np.ndarray | None:
        if self.cfg.map_dim == 0:
            return None
        if agent.map_feature is None:
            return np.zeros(self.cfg.map_dim)
        mf = np.asarray(agent.map_feature, dtype=np.float64)
        if mf.shape != (self.cfg.map_dim,):
            raise ValueError(f"map feature of agent {agent.id} has shape {mf.shape}")
        return mf

    def encode_clique(self, clique: Clique, with_future: bool = False) -> CliqueEncodings:
        """History (and optionally future) encodings for every agent and pair.

        Agents and ordered pairs are processed in per-type batches; batching
        is a speed detail only (batch rows are independent).
        """
        node_hist: dict[str, Value] = {}
        node_future: dict[str, Value] | None = {} if with_future else None
        by_type: dict[str, list[Agent]] = {}
        for a in clique.agents:
            if a.type not in AGENT_TYPES:
                raise ValueError(f"unknown agent type {a.type!r}")
            by_type.setdefault(a.type, []).append(a)
        for t, group in by_type.items():
            hist = np.stack([state_features(a.history, a.type, a.current) for a in group])
            h = self._run_batched_lstm(self.node_pre[t], self.hist_lstm[t], hist)
            for i, a in enumerate(group):
                node_hist[a.id] = h[i:i + 1, :]
            if with_future:
                for a in group:
                    if a.future is None:
                        raise ValueError(f"agent {a.id} has no future but posterior was requested")
                fut = np.stack([state_features(a.future, a.type, a.current) for a in group])
                hf = self._run_batched_lstm(self.node_pre[t], self.future_lstm[t], fut)
                for i, a in enumerate(group):
                    node_future[a.id] = hf[i:i + 1, :]
        edge_hist: dict[tuple[str, str], Value] = {}
        pairs_by_type: dict[tuple, list[tuple[Agent, Agent]]] = {}
        for ai in clique.agents:
            for aj in clique.agents:
                if ai.id != aj.id:
                    pairs_by_type.setdefault((ai.type, aj.type), []).append((ai, aj))
        for et, pairs in pairs_by_type.items():
            rows = np.stack([edge_features(ai, aj, "history") for ai, aj in pairs])
            h = self._run_batched_lstm(self.edge_pre[et], self.edge_lstm[et], rows)
            for i, (ai, aj) in enumerate(pairs):
                edge_hist[(ai.id, aj.id)] = h[i:i + 1, :]
        return CliqueEncodings(node_history=node_hist, edge_history=edge_hist,
                               node_future=node_future)

    def factor_tables(self, clique: Clique, encodings: CliqueEncodings,
                      mode: str) -> FactorTables:
        """Node and edge factor tables for the prior or posterior distribution.

        Edge tables are evaluated once per unordered pair, with the pair in
        canonical (agent-id ascending) order.
        """
        if mode not in ("prior", "posterior"):
            raise ValueError(f"mode must be 'prior' or 'posterior', got {mode!r}")
        posterior = mode == "posterior"
        if posterior and encodings.node_future is None:
            raise ValueError("posterior tables require future encodings")
        card = self.cfg.latent_card
        agents = clique.agents
        node = {}
        for a in agents:
            parts = [encodings.node_history[a.id]]
            mf = self._map_feature(a)
            if mf is not None:
                parts.append(Value(mf.reshape(1, -1)))
            if posterior:
                parts.append(encodings.node_future[a.id])
            x = parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)
            net = (self.post_node if posterior else self.prior_node)[a.type]
            node[a.id] = net(x)[0]  # (card,)
        edge = {}
        for i in range(len(agents)):
            for j in range(i + 1, len(agents)):
                a, b = agents[i], agents[j]  # clique agents are already id-sorted
                parts = [encodings.edge_history[(a.id, b.id)],
                         encodings.edge_history[(b.id, a.id)]]
                if posterior:
                    parts.extend([encodings.node_future[a.id], encodings.node_future[b.id]])
                x = ad.concat(parts, axis=1)
                net = (self.post_edge if posterior else self.prior_edge)[(a.type, b.type)]
                edge[(a.id, b.id)] = net(x)[0].reshape(card, card)
        return FactorTables(agent_ids=[a.id for a in agents],
                            cards=[card] * len(agents), node=node, edge=edge)


def joint_log_tensor(tables: FactorTables) -> Value:
    """Sum of factor tables broadcast over the full product space."""
    cards = tables.cards
    n = len(cards)
    index = {a: i for i, a in enumerate(tables.agent_ids)}
    total = Value(np.zeros(tuple(cards)))
    for agent_id, f in tables.node.items():
        shape = [1] * n
        shape[index[agent_id]] = cards[index[agent_id]]
        total = total + f.reshape(tuple(shape))
    for (a, b), f in tables.edge.items():
        i, j = index[a], index[b]
        shape = [1] * n
        shape[i], shape[j] = cards[i], cards[j]
        total = total + f.reshape(tuple(shape))
    return total


def kl_divergence(tables_q: FactorTables, tables_p: FactorTables) -> Value:
    """Exact discrete KL(Q || P) by full enumeration (differentiable)."""
    if tables_q.agent_ids != tables_p.agent_ids or tables_q.cards != tables_p.cards:
        raise ValueError("factor tables describe different cliques")
    tq = joint_log_tensor(tables_q)
    tp = joint_log_tensor(tables_p)
    lq = tq - ad.logsumexp(tq)
    lp = tp - ad.logsumexp(tp)
    return (ad.exp(lq) * (lq - lp)).sum()
