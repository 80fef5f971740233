"""Scene loading, windowing, local-frame transforms, and synthetic scenes.

Real pedestrian data arrives as whitespace-separated rows of
(frame_id, agent_id, x, y). Synthetic driving scenes are generated from
parameterized templates with scripted, bounded, collision-free controllers;
they stand in for large-scale driving logs at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import dynamics, scene_graph
from .geometry import Circle, Rectangle, col_pair
from .scene_graph import Agent, Clique

PEDESTRIAN_DT = 0.4   # ETH/UCY-style annotation period
VEHICLE_DT = 0.5      # synthetic driving scenes

DEFAULT_HISTORY = 8       # H past steps (window holds H+1 states)
DEFAULT_HORIZON_PED = 12  # T future steps for pedestrian data
DEFAULT_HORIZON_VEH = 8   # 4 s at 0.5 s steps


class SceneFormatError(ValueError):
    """Malformed trajectory file (message names the offending line)."""


@dataclass
class Track:
    """One agent's full trajectory on the scene's uniform time grid."""

    id: str
    type: str
    footprint: object
    first_step: int
    states: np.ndarray  # (L, 4)
    map_feature: np.ndarray | None = None

    @property
    def last_step(self) -> int:
        return self.first_step + len(self.states) - 1

    def covers(self, start: int, stop: int) -> bool:
        return self.first_step <= start and self.last_step >= stop

    def slice(self, start: int, stop: int) -> np.ndarray:
        a = start - self.first_step
        return self.states[a:a + (stop - start + 1)]


@dataclass
class Scene:
    scene_id: str
    dt: float
    tracks: list[Track]
    label: str | None = None  # latent maneuver label for synthetic templates

    @property
    def n_steps(self) -> int:
        return 0 if not self.tracks else max(t.last_step for t in self.tracks) + 1


@dataclass
class TrainingWindow:
    """A clique with aligned (history, future) slices and frame origins."""

    clique: Clique
    dt: float
    origins: dict[str, np.ndarray]
    scene_id: str = ""
    start: int = 0

    @property
    def agents(self) -> list[Agent]:
        return self.clique.agents


# ----------------------------------------------------------------------
# trajectory file ingestion
# ----------------------------------------------------------------------

def load_trajectory_file(path, seconds_per_frame: float = 0.04,
                         radius: float = 0.3) -> Scene:
    """Load a whitespace (frame_id, agent_id, x, y) pedestrian file.

    The annotation stride is inferred from the frame ids; dt = stride *
    seconds_per_frame (the common 25 Hz video annotated every 10th frame
    gives 0.4 s). Velocities come from forward finite differences. Agents
    with interrupted coverage are split into contiguous tracks.
    """
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 4:
                raise SceneFormatError(f"line {lineno}: expected 4 fields, got {len(parts)}")
            try:
                frame = float(parts[0])
                agent = parts[1]
                x, y = float(parts[2]), float(parts[3])
            except ValueError as err:
                raise SceneFormatError(f"line {lineno}: {err}") from None
            rows.append((frame, agent, x, y, lineno))
    if not rows:
        return Scene(scene_id=str(path), dt=seconds_per_frame, tracks=[])

    frames = sorted({r[0] for r in rows})
    stride = min((b - a) for a, b in zip(frames, frames[1:])) if len(frames) > 1 else 1.0
    dt = stride * seconds_per_frame
    base = frames[0]

    per_agent: dict[str, list] = {}
    for frame, agent, x, y, lineno in rows:
        step_f = (frame - base) / stride
        step = round(step_f)
        if abs(step_f - step) > 1e-6:
            raise SceneFormatError(f"line {lineno}: frame {frame} off the {stride} stride grid")
        per_agent.setdefault(agent, []).append((step, x, y, lineno))

    tracks = []
    for agent in sorted(per_agent):
        obs = per_agent[agent]
        steps = [o[0] for o in obs]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            bad = next(o for a, o in zip(steps, obs[1:]) if o[0] <= a)
            raise SceneFormatError(f"line {bad[3]}: non-monotone frames for agent {agent}")
        # split into contiguous runs
        run = [obs[0]]
        runs = []
        for prev, cur in zip(obs, obs[1:]):
            if cur[0] == prev[0] + 1:
                run.append(cur)
            else:
                runs.append(run)
                run = [cur]
        runs.append(run)
        for run in runs:
            pos = np.array([[o[1], o[2]] for o in run])
            vel = np.zeros_like(pos)
            if len(run) > 1:
                vel[:-1] = np.diff(pos, axis=0) / dt
                vel[-1] = vel[-2]
            states = np.concatenate([pos, vel], axis=1)
            tracks.append(Track(id=agent, type=dynamics.PEDESTRIAN,
                                footprint=Circle(radius),
                                first_step=run[0][0], states=states))
    return Scene(scene_id=str(path), dt=dt, tracks=tracks)


# ----------------------------------------------------------------------
# local frames
# ----------------------------------------------------------------------

def state_features(states: np.ndarray, agent_type: str, origin: np.ndarray) -> np.ndarray:
    """Per-step feature rows in the agent's local frame.

    Local frame = translation to the origin pose's position. Headings enter
    as (cos, sin) so a heading and the same heading shifted by 2*pi produce
    identical features. Pedestrian rows: (dx, dy, vx, vy); vehicle rows:
    (dx, dy, v, cos psi, sin psi).
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    rel = states[:, 0:2] - np.asarray(origin)[0:2]
    if agent_type == dynamics.PEDESTRIAN:
        return np.concatenate([rel, states[:, 2:4]], axis=1)
    psi = states[:, 3]
    return np.concatenate([rel, states[:, 2:3], np.cos(psi)[:, None], np.sin(psi)[:, None]], axis=1)


def feature_dim(agent_type: str) -> int:
    return 4 if agent_type == dynamics.PEDESTRIAN else 5


def to_local_frame(window: TrainingWindow) -> TrainingWindow:
    """Shift every agent's states into its own current-position frame.

    A pure translation per agent (an isometry of each trajectory), so
    pairwise distances within an agent's own trajectory are preserved and
    the transform round-trips exactly via to_global_frame.
    """
    agents = []
    origins = {}
    for a in window.agents:
        origin = a.current.copy()
        shift = np.zeros(dynamics.STATE_DIM)
        shift[0:2] = origin[0:2]
        agents.append(replace(a, history=a.history - shift,
                              future=None if a.future is None else a.future - shift))
        origins[a.id] = origin
    return TrainingWindow(clique=Clique(agents), dt=window.dt, origins=origins,
                          scene_id=window.scene_id, start=window.start)


def to_global_frame(window: TrainingWindow) -> TrainingWindow:
    agents = []
    for a in window.agents:
        shift = np.zeros(dynamics.STATE_DIM)
        shift[0:2] = window.origins[a.id][0:2]
        agents.append(replace(a, history=a.history + shift,
                              future=None if a.future is None else a.future + shift))
    origins = {a.id: a.history[-1].copy() for a in agents}
    return TrainingWindow(clique=Clique(agents), dt=window.dt, origins=origins,
                          scene_id=window.scene_id, start=window.start)


# ----------------------------------------------------------------------
# windowing
# ----------------------------------------------------------------------

def windows_from_scene(scene: Scene, history: int, horizon: int,
                       thresholds: dict | None = None, max_clique_size: int = 5,
                       stride: int = 1, require_future: bool = True,
                       seed: int = 0) -> list[TrainingWindow]:
    """Slice a scene into (clique, start-step) training windows.

    A window at step t covers [t - history, t + horizon]; only agents with
    full coverage participate. One TrainingWindow per clique of the
    interaction graph built at step t.
    """
    out = []
    if not scene.tracks:
        return out
    last = scene.n_steps - 1
    for t in range(history, last - horizon + 1 if require_future else last + 1, stride):
        stop = t + horizon if require_future else t
        agents = []
        for tr in scene.tracks:
            if not tr.covers(t - history, stop):
                continue
            hist = tr.slice(t - history, t)
            fut = tr.slice(t + 1, t + horizon) if require_future else None
            agents.append(Agent(id=tr.id, type=tr.type, footprint=tr.footprint,
                                history=hist.copy(),
                                future=None if fut is None else fut.copy(),
                                map_feature=tr.map_feature))
        if not agents:
            continue
        graph = scene_graph.build_adjacency(agents, thresholds,
                                            horizon=horizon, dt=scene.dt)
        for clique in scene_graph.partition_cliques(graph, max_clique_size, seed=seed):
            origins = {a.id: a.current.copy() for a in clique.agents}
            out.append(TrainingWindow(clique=clique, dt=scene.dt, origins=origins,
                                      scene_id=scene.scene_id, start=t))
    return out


# ----------------------------------------------------------------------
# synthetic scene templates
# ----------------------------------------------------------------------

TEMPLATES = ("intersection_yield_or_go", "car_following", "lane_change",
             "crossing_pedestrians")

VEHICLE_FOOTPRINT = Rectangle(4.0, 2.0)
PED_FOOTPRINT = Circle(0.3)

# conservative interior bounds for scripted controllers (A.2 caps are 5 / 1)
_ACC_CAP = 4.8
_YAW_CAP = 0.9


@dataclass(frozen=True)
class SynthSpec:
    """Parameters for one batch of synthetic scenes."""

    template: str
    n_scenes: int
    length: int = 24          # steps per scene
    dt: float | None = None   # template default when None

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise ValueError(f"unknown template {self.template!r} (choose from {TEMPLATES})")
        if self.n_scenes < 1:
            raise ValueError("n_scenes must be >= 1")
        if self.length < 4:
            raise ValueError("scene length must be >= 4 steps")


def _vehicle_rollout(state0, accels, yaws, dt):
    """Integrate scripted vehicle controls; returns (L, 4) states."""
    L = len(accels) + 1
    out = np.empty((L, 4))
    out[0] = state0
    for t in range(L - 1):
        a = np.array([accels[t], yaws[t]])
        out[t + 1] = dynamics.step(out[t], a, dt, dynamics.VEHICLE)
    return out


def _margins_ok(tracks, min_margin=0.2):
    L = min(len(t.states) for t in tracks)
    for i in range(len(tracks)):
        for j in range(i + 1, len(tracks)):
            for t in range(L):
                m = col_pair(tracks[i].states[t], tracks[i].footprint,
                             tracks[j].states[t], tracks[j].footprint)
                if float(np.min(m)) < min_margin:
                    return False
    return True


def _gap_follower_accels(lead_states, v0, gap0, dt, L, *, desired_gap=6.0, time_gap=1.0):
    """Reactive gap-keeping accelerations for a same-lane follower."""
    x, v = 0.0, v0
    accels = []
    xs = [x]
    vs = [v]
    for t in range(L - 1):
        gap = lead_states[t, 0] - x
        a = 1.0 * (lead_states[t, 2] - v) + 0.45 * (gap - (desired_gap + time_gap * v))
        if gap < 5.2:
            a = -_ACC_CAP
        a = float(np.clip(a, -_ACC_CAP, 3.0))
        if v + a * dt < 0:
            a = -v / dt
        accels.append(a)
        v = v + a * dt
        x = x + vs[-1] * dt
        xs.append(x)
        vs.append(v)
    return accels


def _gen_car_following(rng, length, dt):
    v_lead = rng.uniform(5.0, 10.0)
    v_fol = float(np.clip(v_lead + rng.uniform(-1.0, 1.0), 1.0, 12.0))
    gap0 = rng.uniform(9.0, 16.0)
    brake = rng.random() < 0.5
    lead_acc = []
    v = v_lead
    if brake:
        t_start = int(rng.integers(2, max(4, length - 10)))
        decel = rng.uniform(2.5, 4.5)
        for t in range(length - 1):
            a = -decel if t >= t_start and v > 0 else 0.0
            if v + a * dt < 0:
                a = -v / dt
            lead_acc.append(a)
            v += a * dt
        label = "brake"
    else:
        for _ in range(length - 1):
            a = float(np.clip(rng.normal(0.0, 0.3), -0.8, 0.8))
            if v + a * dt < 0:
                a = -v / dt
            lead_acc.append(a)
            v += a * dt
        label = "cruise"
    lead = _vehicle_rollout(np.array([gap0, 0.0, v_lead, 0.0]), lead_acc,
                            np.zeros(length - 1), dt)
    fol_acc = _gap_follower_accels(lead, v_fol, gap0, dt, length)
    fol = _vehicle_rollout(np.array([0.0, 0.0, v_fol, 0.0]), fol_acc,
                           np.zeros(length - 1), dt)
    tracks = [
        Track("follower", dynamics.VEHICLE, VEHICLE_FOOTPRINT, 0, fol),
        Track("leader", dynamics.VEHICLE, VEHICLE_FOOTPRINT, 0, lead),
    ]
    return tracks, label


def _gen_intersection(rng, length, dt):
    """Two vehicles on perpendicular approaches; the second yields or goes.

    The yield/go decision fires several steps into the scene and the
    northbound approach distance is drawn from the same formula for both
    labels, so a window observed before the onset cannot tell the maneuvers
    apart from the history alone: the future is genuinely bimodal.
    """
    v_b = rng.uniform(6.0, 9.0)
    decel = rng.uniform(2.5, 4.0)
    stop_short = rng.uniform(4.0, 6.0)
    onset = int(rng.integers(9, 15))  # decision step; windows before it are bimodal
    # discrete (Euler) braking distance: the continuous v^2/2a underestimates
    # travel by up to v*dt/2, which would eat into the stop-short clearance
    brake_dist, v = 0.0, v_b
    while v > 0.05:
        brake_dist += v * dt
        v = max(v - decel * dt, 0.0)
    d_b = stop_short + brake_dist + v_b * dt * onset
    v_a = rng.uniform(6.0, 9.0)
    # the east vehicle's crossing time is drawn the same way for both labels
    # (offset from the hypothetical go-through time, conflict window excluded),
    # so neither agent's history gives the maneuver away
    t_b_go = d_b / v_b
    offset = 0.0
    while abs(offset) < 1.4:
        offset = rng.uniform(-4.0, 4.0)
    t_a_cross = max(t_b_go + offset, 1.0)
    go = rng.random() < 0.5
    if go:
        b_acc = np.zeros(length - 1)
        label = "go"
    else:
        b_acc = []
        v = v_b
        for t in range(length - 1):
            a = -decel if t >= onset and v > 0.05 else 0.0
            if v + a * dt < 0:
                a = -v / dt
            b_acc.append(a)
            v += a * dt
        label = "yield"
    d_a = v_a * t_a_cross
    a_states = _vehicle_rollout(np.array([-d_a, 0.0, v_a, 0.0]),
                                np.zeros(length - 1), np.zeros(length - 1), dt)
    b_states = _vehicle_rollout(np.array([0.0, -d_b, v_b, math.pi / 2]),
                                np.asarray(b_acc, dtype=np.float64), np.zeros(length - 1), dt)
    tracks = [
        Track("east", dynamics.VEHICLE, VEHICLE_FOOTPRINT, 0, a_states),
        Track("north", dynamics.VEHICLE, VEHICLE_FOOTPRINT, 0, b_states),
    ]
    return tracks, label


def _gen_lane_change(rng, length, dt):
    """Ego behind a slower lead: either changes lane or stays and follows."""
    v_ego = rng.uniform(6.0, 9.0)
    v_lead = float(np.clip(v_ego - rng.uniform(1.5, 3.0), 2.0, 8.0))
    gap0 = rng.uniform(14.0, 20.0)
    lead = _vehicle_rollout(np.array([gap0, 0.0, v_lead, 0.0]),
                            np.zeros(length - 1), np.zeros(length - 1), dt)
    change = rng.random() < 0.5
    if change:
        lane_y = 3.5
        state = np.array([0.0, 0.0, v_ego, 0.0])
        states = [state.copy()]
        t_go = int(rng.integers(0, 2))
        for t in range(length - 1):
            if t < t_go:
                yaw = 0.0
            else:
                psi_des = float(np.clip(0.6 * (lane_y - state[1]), -0.5, 0.5))
                yaw = float(np.clip(2.5 * (psi_des - state[3]), -_YAW_CAP, _YAW_CAP))
            acc = float(np.clip(0.4 * (v_ego - state[2]), -1.0, 1.0))
            state = dynamics.step(state, np.array([acc, yaw]), dt, dynamics.VEHICLE)
            states.append(state.copy())
        ego = np.array(states)
        label = "change"
    else:
        fol_acc = _gap_follower_accels(lead, v_ego, gap0, dt, length)
        ego = _vehicle_rollout(np.array([0.0, 0.0, v_ego, 0.0]), fol_acc,
                               np.zeros(length - 1), dt)
        label = "stay"
    tracks = [
        Track("ego", dynamics.VEHICLE, VEHICLE_FOOTPRINT, 0, ego),
        Track("lead", dynamics.VEHICLE, VEHICLE_FOOTPRINT, 0, lead),
    ]
    return tracks, label


def _gen_crossing_peds(rng, length, dt):
    n = int(rng.integers(2, 4))
    radius = rng.uniform(5.0, 7.0)
    angles = rng.uniform(0, 2 * math.pi, size=n)
    # spread the entry angles so paths cross near the center, not on top of each other
    angles = np.sort(angles)
    for i in range(1, n):
        if angles[i] - angles[i - 1] < 0.7:
            angles[i] = angles[i - 1] + 0.7
    states = []
    goals = []
    for i in range(n):
        start = radius * np.array([math.cos(angles[i]), math.sin(angles[i])])
        goal = -start + rng.uniform(-1.5, 1.5, size=2)
        speed = rng.uniform(0.9, 1.4)
        direction = (goal - start) / np.linalg.norm(goal - start)
        states.append(np.concatenate([start, speed * direction]))
        goals.append((goal, speed))
    trajs = [[s.copy()] for s in states]
    cur = [s.copy() for s in states]
    for _ in range(length - 1):
        nxt = []
        for i in range(n):
            goal, speed = goals[i]
            to_goal = goal - cur[i][:2]
            dist = np.linalg.norm(to_goal)
            v_des = speed * to_goal / max(dist, 0.5)
            acc = 1.5 * (v_des - cur[i][2:])
            for j in range(n):
                if j == i:
                    continue
                d = cur[i][:2] - cur[j][:2]
                dn = np.linalg.norm(d)
                if dn < 1.8:
                    acc += 2.5 * d / max(dn, 0.2) * (1.8 - dn)
            norm = np.linalg.norm(acc)
            if norm > 2.0:
                acc = acc * (2.0 / norm)
            nxt.append(dynamics.step(cur[i], acc, dt, dynamics.PEDESTRIAN))
        cur = nxt
        for i in range(n):
            trajs[i].append(cur[i].copy())
    tracks = [Track(f"ped{i}", dynamics.PEDESTRIAN, PED_FOOTPRINT, 0, np.array(trajs[i]))
              for i in range(n)]
    return tracks, None


_GENERATORS = {
    "car_following": (_gen_car_following, VEHICLE_DT, 0.3),
    "intersection_yield_or_go": (_gen_intersection, VEHICLE_DT, 0.3),
    "lane_change": (_gen_lane_change, VEHICLE_DT, 0.3),
    "crossing_pedestrians": (_gen_crossing_peds, PEDESTRIAN_DT, 0.05),
}


def synth_scenarios(spec: SynthSpec, seed: int) -> list[Scene]:
    """Generate deterministic, feasible, collision-free synthetic scenes.

    Ground truth respects the action bounds by construction and is verified
    collision-free; candidate draws that violate the margin are discarded
    and regenerated from the same stream, so a fixed seed yields a
    byte-identical dataset.
    """
    gen, default_dt, min_margin = _GENERATORS[spec.template]
    dt = spec.dt if spec.dt is not None else default_dt
    rng = np.random.default_rng(seed)
    scenes = []
    attempts = 0
    while len(scenes) < spec.n_scenes:
        attempts += 1
        if attempts > 50 * spec.n_scenes:
            raise RuntimeError(f"template {spec.template}: too many infeasible draws")
        tracks, label = gen(rng, spec.length, dt)
        if not _margins_ok(tracks, min_margin):
            continue
        scenes.append(Scene(scene_id=f"{spec.template}-{len(scenes):04d}", dt=dt,
                            tracks=tracks, label=label))
    return scenes
