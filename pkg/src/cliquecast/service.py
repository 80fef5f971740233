"""Prediction service core: request handling shared by the CLI and HTTP layer.

Maneuver macros live here (not in clients) so the dynamics integration has a
single source of truth: "brake" applies a constant negative acceleration
until a full stop, "accelerate" a constant positive one until a speed cap;
both then coast. Conditioned agents are force-included with their nearest
interaction partner before prediction, so a conditioning directive always
has an audience inside its clique.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynamics, scene_graph
from .data import Scene
from .model import CliqueModel
from .policy import PredictionMode, PredictionSet
from .scene_graph import Agent, Clique

DEFAULT_SPEED_CAP = 15.0


class UnknownAgentError(KeyError):
    """A directive references an agent id that is not in the scene."""


@dataclass(frozen=True)
class Directive:
    """Conditioning directive: a maneuver macro or an explicit trajectory."""

    agent_id: str
    maneuver: str | None = None          # "brake" | "accelerate"
    accel: float | None = None
    trajectory: np.ndarray | None = None  # (>= horizon, 4)

    @staticmethod
    def from_json(doc: dict) -> "Directive":
        agent_id = str(doc["agent_id"])
        if "trajectory" in doc and doc["trajectory"] is not None:
            return Directive(agent_id=agent_id,
                             trajectory=np.asarray(doc["trajectory"], dtype=np.float64))
        maneuver = doc.get("maneuver")
        if maneuver not in ("brake", "accelerate"):
            raise ValueError(f"directive needs a trajectory or a maneuver, got {maneuver!r}")
        accel = float(doc.get("accel", -4.0 if maneuver == "brake" else 4.0))
        return Directive(agent_id=agent_id, maneuver=maneuver, accel=accel)


def maneuver_trajectory(state: np.ndarray, agent_type: str, maneuver: str,
                        accel: float, horizon: int, dt: float,
                        speed_cap: float = DEFAULT_SPEED_CAP) -> np.ndarray:
    """Constant-acceleration rollout: brake to a stop or accelerate to a cap.

    Vehicles hold their heading; pedestrians accelerate along their current
    direction of motion. Returns (horizon, 4) future states (excluding the
    current one). The per-step input is trimmed so speed never crosses zero
    (brake) or the cap (accelerate), keeping the rollout within bounds.
    """
    if maneuver == "brake" and accel >= 0:
        raise ValueError("brake maneuver needs a negative acceleration")
    if maneuver == "accelerate" and accel <= 0:
        raise ValueError("accelerate maneuver needs a positive acceleration")
    bound = dynamics.ACTION_BOUNDS[agent_type][0]
    if abs(accel) > bound:
        raise ValueError(f"|accel| exceeds the {agent_type} bound {bound}")
    state = np.asarray(state, dtype=np.float64).copy()
    out = np.empty((horizon, dynamics.STATE_DIM))
    for t in range(horizon):
        if agent_type == dynamics.VEHICLE:
            v = state[2]
            a = accel
            if maneuver == "brake":
                a = max(accel, -v / dt) if v > 0 else 0.0
            else:
                a = min(accel, max((speed_cap - v) / dt, 0.0))
            action = np.array([a, 0.0])
        else:
            v = state[2:4]
            speed = float(np.linalg.norm(v))
            direction = v / speed if speed > 1e-9 else np.array([1.0, 0.0])
            if maneuver == "brake":
                a = max(accel, -speed / dt) if speed > 0 else 0.0
            else:
                a = min(accel, max((speed_cap - speed) / dt, 0.0))
            action = a * direction
        state = dynamics.step(state, action, dt, agent_type)
        out[t] = state
    return out


def directives_to_trajectories(directives: list[Directive], agents_by_id: dict[str, Agent],
                               horizon: int, dt: float) -> dict[str, np.ndarray]:
    fixed: dict[str, np.ndarray] = {}
    for d in directives:
        agent = agents_by_id.get(d.agent_id)
        if agent is None:
            raise UnknownAgentError(d.agent_id)
        if d.trajectory is not None:
            traj = np.asarray(d.trajectory, dtype=np.float64)
            if traj.ndim != 2 or traj.shape[1] != dynamics.STATE_DIM or traj.shape[0] < horizon:
                raise ValueError(f"fixed trajectory for {d.agent_id} must be "
                                 f"(>= {horizon}, {dynamics.STATE_DIM})")
            fixed[d.agent_id] = traj[:horizon]
        else:
            fixed[d.agent_id] = maneuver_trajectory(agent.current, agent.type, d.maneuver,
                                                    d.accel, horizon, dt)
    return fixed


def agents_from_scene(scene: Scene, history: int) -> list[Agent]:
    """Current-window agents from the last history+1 states of each track.

    Tracks shorter than the window are backfilled by zero-action flow run
    backwards from their first state, so a scene exported with only current
    states is still predictable.
    """
    agents = []
    now = scene.n_steps - 1
    for tr in scene.tracks:
        if tr.last_step != now:
            continue  # agent not present at the current step
        need = history + 1
        have = tr.slice(max(tr.first_step, now - history), now)
        if len(have) < need:
            first = have[0].copy()
            pad = []
            state = first
            for _ in range(need - len(have)):
                prev = state.copy()
                vel = dynamics.velocity_vector(state, tr.type)
                prev[0:2] -= vel * scene.dt
                pad.insert(0, prev)
                state = prev
            have = np.concatenate([np.array(pad), have], axis=0)
        agents.append(Agent(id=tr.id, type=tr.type, footprint=tr.footprint,
                            history=have.copy(), map_feature=tr.map_feature))
    return agents


def partition_with_conditioning(agents: list[Agent], conditioned_ids: set[str],
                                thresholds, horizon: int, dt: float,
                                max_clique_size: int) -> list[Clique]:
    """Partition the scene; force conditioned agents next to their nearest peer.

    A conditioned agent that lands in a clique with no free agent would have
    nobody to influence, so it is merged into the clique of its strongest
    interaction partner (highest adjacency, falling back to nearest by
    current distance). The merge may exceed the size cap; prediction warns
    and proceeds.
    """
    graph = scene_graph.build_adjacency(agents, thresholds, horizon=horizon, dt=dt)
    cliques = scene_graph.partition_cliques(graph, max_clique_size)
    if not conditioned_ids or len(agents) < 2:
        return cliques
    index = {a.id: i for i, a in enumerate(graph.agents)}
    clique_of = {a: k for k, c in enumerate(cliques) for a in c.ids}
    members: list[list[str]] = [list(c.ids) for c in cliques]
    for cid in sorted(conditioned_ids):
        home = members[clique_of[cid]]
        if any(a not in conditioned_ids for a in home):
            continue
        weights = graph.adjacency[index[cid]]
        best, best_key = None, None
        for other in graph.agents:
            if other.id == cid or clique_of[other.id] == clique_of[cid]:
                continue
            d = float(np.linalg.norm(other.current[:2]
                                     - graph.agents[index[cid]].current[:2]))
            key = (-weights[index[other.id]], d, other.id)
            if best_key is None or key < best_key:
                best, best_key = other.id, key
        if best is None:
            continue
        target = clique_of[best]
        source = clique_of[cid]
        for a in members[source]:
            clique_of[a] = target
        members[target].extend(members[source])
        members[source] = []
    by_id = {a.id: a for a in agents}
    return [Clique([by_id[a] for a in group]) for group in members if group]


@dataclass
class PredictRequest:
    scene: Scene
    k: int = 3
    beta: int = 1
    directives: list[Directive] = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        self.directives = list(self.directives or [])


def run_prediction(model: CliqueModel, request: PredictRequest,
                   warn=None) -> list[PredictionSet]:
    """Scene-level prediction honoring conditioning directives."""
    cfg = model.config
    agents = agents_from_scene(request.scene, cfg.history)
    if not agents:
        return []
    by_id = {a.id: a for a in agents}
    fixed = directives_to_trajectories(request.directives, by_id, cfg.horizon,
                                       request.scene.dt)
    cliques = partition_with_conditioning(agents, set(fixed), None, cfg.horizon,
                                          request.scene.dt, cfg.max_clique_size)
    out = []
    for clique in sorted(cliques, key=lambda c: c.ids[0]):
        conditioned_here = {a: fixed[a] for a in clique.ids if a in fixed}
        free = [a for a in clique.ids if a not in conditioned_here]
        if not free:
            # every member conditioned: emit the fixed trajectories as the
            # single certain mode
            mode = PredictionMode(
                assignment={}, probability=1.0,
                states={a: conditioned_here[a].copy() for a in clique.ids},
                controls={a: None for a in clique.ids})
            out.append(PredictionSet(agent_ids=list(clique.ids),
                                     conditioned_ids=sorted(conditioned_here),
                                     dt=request.scene.dt, modes=[mode],
                                     footprints={a.id: a.footprint
                                                 for a in clique.agents}))
            continue
        out.append(model.predict(clique, k=request.k, beta=request.beta,
                                 conditioned=conditioned_here, warn=warn))
    return out
