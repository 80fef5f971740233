"""Policy decoder: autoregressive closed-loop rollout of a clique.

Each agent is treated as a small motion planner. A per-type GRU turns the
history encoding (plus map feature and the agent's latent value) into a
reference trajectory of local-frame waypoints. At every rollout step each
ordered pair of current states is pre-encoded and advanced through an edge
LSTM cell; a node pools its edge states into one observation encoding with
additive attention (query: the node's own current-state pre-encoding); an
action net maps observation, latent, tracking error, and next waypoint to a
raw control, which is smoothly clamped and integrated through the agent
dynamics. Conditioned agents are overwritten from their fixed trajectories
every step but remain visible to everyone else.

The whole rollout is differentiable end to end and consumes no randomness.
Rollouts are batched over prediction modes (leading dimension B); batch rows
never interact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import dynamics
from .autodiff import Value
from .data import feature_dim
from .encoder import AGENT_TYPES, EDGE_TYPES, CliqueEncoder, footprint_size
from .nn import MLP, AdditiveAttention, Linear, LSTMCell, GRUCell, ParameterStore
from .scene_graph import Clique


@dataclass
class PredictionMode:
    """One joint mode: a latent assignment decoded into trajectories.

    states[agent_id] is the (T, 4) future; controls[agent_id] the (T, 2)
    inputs that reproduce it through the dynamics (None for conditioned
    agents, whose fixed trajectories need not obey the dynamics).
    """

    assignment: dict[str, int]
    probability: float
    states: dict[str, np.ndarray]
    controls: dict[str, np.ndarray | None]


@dataclass
class PredictionSet:
    """K joint modes for one clique, probability descending (sums to 1)."""

    agent_ids: list[str]
    conditioned_ids: list[str]
    dt: float
    modes: list[PredictionMode]
    footprints: dict[str, object] = None


@dataclass
class RolloutRecord:
    """Batched rollout tape: per-agent per-step (B, .) Values."""

    agent_ids: list[str]
    states: dict[str, list[Value]]            # T entries of (B, 4)
    controls: dict[str, list[Value]]          # free agents only, (B, 2)

    def positions(self, agent_id: str, t: int) -> Value:
        return self.states[agent_id][t][:, 0:2]


def _onehot(values: np.ndarray, card: int) -> np.ndarray:
    out = np.zeros((len(values), card))
    out[np.arange(len(values)), values] = 1.0
    return out


def _state_features_value(state: Value, agent_type: str, origin_rows: np.ndarray) -> Value:
    """Local-frame feature rows of a batched state (R, 4) -> (R, feat).

    origin_rows is a broadcastable (R, 2) or (2,) array of frame origins.
    """
    rel = state[:, 0:2] - origin_rows
    if agent_type == dynamics.PEDESTRIAN:
        return ad.concat([rel, state[:, 2:4]], axis=1)
    psi = state[:, 3:4]
    return ad.concat([rel, state[:, 2:3], ad.cos(psi), ad.sin(psi)], axis=1)


class CliqueDecoder:
    """Owns the decoder parameters and runs reference generation + rollout."""

    def __init__(self, store: ParameterStore, cfg, encoder: CliqueEncoder,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.encoder = encoder  # shares the state/edge pre-encoding layers
        card = cfg.latent_card
        self.ref_init = {t: Linear(store, f"dec.ref_init.{t}",
                                   cfg.enc_hidden + cfg.map_dim + card, cfg.gru_hidden, rng)
                         for t in AGENT_TYPES}
        self.ref_gru = {t: GRUCell(store, f"dec.ref_gru.{t}", feature_dim(t), cfg.gru_hidden, rng)
                        for t in AGENT_TYPES}
        self.ref_out = {t: Linear(store, f"dec.ref_out.{t}", cfg.gru_hidden, feature_dim(t), rng)
                        for t in AGENT_TYPES}
        self.edge_cell = {et: LSTMCell(store, f"dec.edge.{et[0]}-{et[1]}", cfg.pre_dim,
                                       cfg.edge_hidden, rng)
                          for et in EDGE_TYPES}
        self.attention = {t: AdditiveAttention(store, f"dec.attn.{t}", cfg.pre_dim,
                                               cfg.edge_hidden, cfg.attn_dim, rng)
                          for t in AGENT_TYPES}
        self.action_net = {t: MLP(store, f"dec.action.{t}",
                                  (cfg.edge_hidden + card + 2 * feature_dim(t),
                                   cfg.action_hidden, dynamics.ACTION_DIM), rng)
                           for t in AGENT_TYPES}

    # ------------------------------------------------------------------
    def reference_trajectories(self, clique: Clique, encodings, z_batch: np.ndarray,
                               free_ids: list[str]) -> dict[str, list[Value]]:
        """Per-agent latent-conditioned waypoint sequences.

        z_batch is (B, n_free) with columns aligned to free_ids. Returns, for
        each free agent, a list of T (B, feat) local-frame waypoints. The
        unroll feeds each waypoint back as the next GRU input (zero start).
        """
        card = self.cfg.latent_card
        refs: dict[str, list[Value]] = {}
        batch = z_batch.shape[0]
        by_type: dict[str, list[int]] = {}
        for col, agent_id in enumerate(free_ids):
            by_type.setdefault(clique.agent(agent_id).type, []).append(col)
        for atype, cols in by_type.items():
            inputs = []
            for col in cols:
                agent = clique.agent(free_ids[col])
                enc = ad.broadcast_to(encodings.node_history[agent.id],
                                      (batch, self.cfg.enc_hidden))
                parts = [enc]
                mf = self.encoder._map_feature(agent)
                if mf is not None:
                    parts.append(Value(np.broadcast_to(mf, (batch, self.cfg.map_dim)).copy()))
                parts.append(Value(_onehot(z_batch[:, col], card)))
                inputs.append(ad.concat(parts, axis=1))
            stacked = inputs[0] if len(inputs) == 1 else ad.concat(inputs, axis=0)
            h = ad.tanh(self.ref_init[atype](stacked))
            x = Value(np.zeros((len(cols) * batch, feature_dim(atype))))
            waypoint_slices: list[list[Value]] = [[] for _ in cols]
            for _ in range(self.cfg.horizon):
                h = self.ref_gru[atype].step(x, h)
                x = self.ref_out[atype](h)
                for k in range(len(cols)):
                    waypoint_slices[k].append(x[k * batch:(k + 1) * batch])
            for k, col in enumerate(cols):
                refs[free_ids[col]] = waypoint_slices[k]
        return refs

    def reference_trajectory(self, agent_type: str, node_encoding: Value,
                             map_feature: np.ndarray | None, z_value: int) -> np.ndarray:
        """Single-agent, single-mode reference as a (T, feat) array."""
        card = self.cfg.latent_card
        parts = [node_encoding]
        if self.cfg.map_dim:
            mf = np.zeros(self.cfg.map_dim) if map_feature is None else np.asarray(map_feature)
            parts.append(Value(mf.reshape(1, -1)))
        parts.append(Value(_onehot(np.array([z_value]), card)))
        h = ad.tanh(self.ref_init[agent_type](ad.concat(parts, axis=1)))
        x = Value(np.zeros((1, feature_dim(agent_type))))
        out = []
        for _ in range(self.cfg.horizon):
            h = self.ref_gru[agent_type].step(x, h)
            x = self.ref_out[agent_type](h)
            out.append(x.data[0].copy())
        return np.array(out)

    # ------------------------------------------------------------------
    def rollout(self, clique: Clique, z_batch: np.ndarray,
                references: dict[str, list[Value]],
                conditioned: dict[str, np.ndarray] | None = None) -> RolloutRecord:
        """Closed-loop rollout of the whole clique, batched over modes.

        conditioned maps agent id to a fixed (>= T, 4) future; those agents'
        states are overwritten each step (and their controls not produced),
        but their states feed everyone's edge observations.

        Internally, same-type agents and same-type ordered pairs are stacked
        into single batched cell/net evaluations; rows stay independent, so
        the grouping is invisible in the results.
        """
        cfg = self.cfg
        conditioned = dict(conditioned or {})
        agents = clique.agents
        ids = [a.id for a in agents]
        free_ids = [a.id for a in agents if a.id not in conditioned]
        z_batch = np.asarray(z_batch, dtype=np.int64)
        if z_batch.ndim != 2 or z_batch.shape[1] != len(free_ids):
            raise ValueError("z_batch must be (modes, n_free) aligned to non-conditioned agents")
        batch = z_batch.shape[0]
        by_id = {a.id: a for a in agents}
        for agent_id, traj in conditioned.items():
            traj = np.asarray(traj, dtype=np.float64)
            if traj.shape[0] < cfg.horizon or traj.shape[1] != dynamics.STATE_DIM:
                raise ValueError(f"fixed trajectory for {agent_id} must be at least "
                                 f"({cfg.horizon}, {dynamics.STATE_DIM})")
            conditioned[agent_id] = traj
        z_onehots = {agent_id: Value(_onehot(z_batch[:, col], cfg.latent_card))
                     for col, agent_id in enumerate(free_ids)}
        origins = {a.id: a.current.copy() for a in agents}
        sizes = {a.id: footprint_size(a.footprint) for a in agents}

        type_groups: dict[str, list[str]] = {}
        for a in agents:
            type_groups.setdefault(a.type, []).append(a.id)
        pair_groups: dict[tuple, list[tuple[str, str]]] = {}
        for ai in agents:
            for aj in agents:
                if ai.id != aj.id:
                    pair_groups.setdefault((ai.type, aj.type), []).append((ai.id, aj.id))
        origin_rows = {t: np.concatenate([np.broadcast_to(origins[i][0:2], (batch, 2))
                                          for i in gids])
                       for t, gids in type_groups.items()}
        size_rows = {et: np.concatenate([np.broadcast_to(np.concatenate([sizes[i], sizes[j]]),
                                                         (batch, 4))
                                         for i, j in prs])
                     for et, prs in pair_groups.items()}

        def stack_group(values):
            return values[0] if len(values) == 1 else ad.concat(values, axis=0)

        state: dict[str, Value] = {
            a.id: Value(np.broadcast_to(a.current, (batch, dynamics.STATE_DIM)).copy())
            for a in agents}
        edge_state = {et: self.edge_cell[et].zero_state(len(prs) * batch)
                      for et, prs in pair_groups.items()}

        states_out: dict[str, list[Value]] = {i: [] for i in ids}
        controls_out: dict[str, list[Value]] = {i: [] for i in free_ids}
        for t in range(cfg.horizon):
            feats, queries, vels = {}, {}, {}
            for atype, gids in type_groups.items():
                stacked = stack_group([state[i] for i in gids])
                f = _state_features_value(stacked, atype, origin_rows[atype])
                q = self.encoder.pre_encode_node(atype, f)
                v = dynamics.velocity_vector(stacked, atype)
                for k, i in enumerate(gids):
                    sl = slice(k * batch, (k + 1) * batch)
                    feats[i], queries[i], vels[i] = f[sl], q[sl], v[sl]
            keys = {}
            for et, prs in pair_groups.items():
                rel = stack_group([ad.concat([state[j][:, 0:2] - state[i][:, 0:2],
                                              vels[j] - vels[i]], axis=1)
                                   for i, j in prs])
                pre = self.encoder.pre_encode_edge(et, ad.concat([rel, Value(size_rows[et])],
                                                                 axis=1))
                h, c = self.edge_cell[et].step(pre, *edge_state[et])
                edge_state[et] = (h, c)
                for k, (i, j) in enumerate(prs):
                    keys[(i, j)] = h[k * batch:(k + 1) * batch]
            next_state: dict[str, Value] = {}
            for atype, gids in type_groups.items():
                fgids = [i for i in gids if i not in conditioned]
                if not fgids:
                    continue
                inputs = []
                for i in fgids:
                    context = self.attention[atype].pool(
                        queries[i], [keys[(i, j)] for j in ids if j != i])
                    ref = references[i]
                    track_err = ref[t] - feats[i]
                    next_wp = ref[min(t + 1, cfg.horizon - 1)]
                    inputs.append(ad.concat([context, z_onehots[i], track_err, next_wp],
                                            axis=1))
                raw = self.action_net[atype](stack_group(inputs))
                action = dynamics.clamp_action(raw, atype)
                nxt = dynamics.step(stack_group([state[i] for i in fgids]), action,
                                    cfg.dt, atype)
                for k, i in enumerate(fgids):
                    sl = slice(k * batch, (k + 1) * batch)
                    next_state[i] = nxt[sl]
                    controls_out[i].append(action[sl])
            for i in conditioned:
                next_state[i] = Value(np.broadcast_to(conditioned[i][t],
                                                      (batch, dynamics.STATE_DIM)).copy())
            state = next_state
            for i in ids:
                states_out[i].append(state[i])
        return RolloutRecord(agent_ids=ids, states=states_out, controls=controls_out)

    # ------------------------------------------------------------------
    def modes_from_rollout(self, record: RolloutRecord, z_batch: np.ndarray,
                           free_ids: list[str], probabilities: np.ndarray,
                           conditioned: dict[str, np.ndarray] | None = None,
                           ) -> list[PredictionMode]:
        """Extract per-mode numpy trajectories from a batched rollout."""
        conditioned = conditioned or {}
        horizon = len(next(iter(record.states.values())))
        modes = []
        for b in range(z_batch.shape[0]):
            states = {}
            controls: dict[str, np.ndarray | None] = {}
            for agent_id in record.agent_ids:
                if agent_id in conditioned:
                    states[agent_id] = np.asarray(conditioned[agent_id])[:horizon].copy()
                    controls[agent_id] = None
                else:
                    states[agent_id] = np.stack(
                        [record.states[agent_id][t].data[b] for t in range(horizon)])
                    controls[agent_id] = np.stack(
                        [record.controls[agent_id][t].data[b] for t in range(horizon)])
            assignment = {agent_id: int(z_batch[b, col])
                          for col, agent_id in enumerate(free_ids)}
            modes.append(PredictionMode(assignment=assignment,
                                        probability=float(probabilities[b]),
                                        states=states, controls=controls))
        return modes
