"""Branching contingency MPC over multimodal joint predictions.

Given M predicted joint modes with probabilities, the planner optimizes M
ego control sequences, one per mode, under the constraint that the first
control input is shared across all branches. The shared input is a single
decision variable, so the equality holds exactly rather than approximately.

The solver is a penalty method: collision and state-bound constraints enter
as squared hinges with a growing multiplier, and each round minimizes the
smooth objective with Adam over the control variables (dynamics are
eliminated by rollout substitution; control bounds by the smooth clamp, so
iterates are always dynamically feasible). Self-contained and testable
against an exhaustive grid-search oracle on tiny instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import dynamics
from .autodiff import Value
from .geometry import Footprint, Rectangle, col_pair
from .model import CliqueModel
from .scene_graph import Agent, build_adjacency, partition_cliques


@dataclass(frozen=True)
class CostWeights:
    tracking: float = 1.0
    speed: float = 0.2
    control: float = 0.05
    jerk: float = 0.05


@dataclass
class PredictedMode:
    """One joint prediction mode as the planner consumes it."""

    probability: float
    trajectories: dict[str, np.ndarray]       # agent id -> (T, 4)
    footprints: dict[str, Footprint]
    types: dict[str, str]


@dataclass
class PlanProblem:
    ego_state: np.ndarray                     # (4,) vehicle state
    reference: np.ndarray                     # (T, 4) desired states
    dt: float
    horizon: int
    modes: list[PredictedMode]                # probabilities sum to 1; M >= 1
    weights: CostWeights = field(default_factory=CostWeights)
    ego_footprint: Rectangle = field(default_factory=lambda: Rectangle(4.0, 2.0))
    clearance: float = 0.3
    speed_bounds: tuple[float, float] | None = None

    def __post_init__(self):
        self.ego_state = np.asarray(self.ego_state, dtype=np.float64)
        self.reference = np.asarray(self.reference, dtype=np.float64)
        if not self.modes:
            raise ValueError("at least one prediction mode is required")
        total = sum(m.probability for m in self.modes)
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"mode probabilities must sum to 1 (got {total})")
        if self.reference.shape[0] < self.horizon:
            raise ValueError("reference must cover the horizon")


@dataclass(frozen=True)
class PlanOptions:
    rounds: int = 5
    iterations: int = 400
    learning_rate: float = 0.15
    penalty_init: float = 20.0
    penalty_growth: float = 8.0
    violation_tol: float = 1e-3
    grad_tol: float = 1e-7


@dataclass
class ContingencyPlan:
    controls: np.ndarray        # (M, T, 2), already clamped into bounds
    states: np.ndarray          # (M, T+1, 4), replayed through the dynamics
    shared_first: np.ndarray    # (2,), equal to controls[m, 0] for every m
    cost: float                 # probability-weighted objective, penalties excluded
    max_violation: float        # worst constraint shortfall (margin units)
    iterations: int
    feasible: bool


def _obstacle_arrays(problem: PlanProblem):
    """Per mode: list of (trajectory (T, 4), footprint) of predicted agents."""
    out = []
    for mode in problem.modes:
        entries = []
        for agent_id in sorted(mode.trajectories):
            traj = np.asarray(mode.trajectories[agent_id], dtype=np.float64)
            if traj.shape[0] < problem.horizon:
                raise ValueError(f"prediction for {agent_id} shorter than the horizon")
            entries.append((traj[:problem.horizon], mode.footprints[agent_id]))
        out.append(entries)
    return out


def evaluate(problem: PlanProblem, raw_u0, raw_rest, penalty_weight: float = 0.0):
    """Objective of a raw control plan; works on numpy arrays or Values.

    raw_u0: (1, 2) shared first input; raw_rest: (M, horizon-1, 2). Raw
    controls pass through the smooth clamp, so anything finite is a
    dynamically feasible plan. Returns (total, cost, violations) where cost
    is the probability-weighted objective without penalties and violations
    is the list of per-constraint shortfalls (numpy view).
    """
    T = problem.horizon
    M = len(problem.modes)
    w = problem.weights
    obstacles = _obstacle_arrays(problem)
    probs = np.array([m.probability for m in problem.modes])
    is_value = isinstance(raw_u0, Value)

    state = (Value(np.broadcast_to(problem.ego_state, (M, 4)).copy()) if is_value
             else np.broadcast_to(problem.ego_state, (M, 4)).copy())
    states = [state]
    actions = []
    for t in range(T):
        if t == 0:
            raw = raw_u0  # (1, 2) shared across branches by construction
        else:
            raw = raw_rest[:, t - 1, :]
        a = dynamics.clamp_action(raw, dynamics.VEHICLE)
        if t == 0 and not is_value:
            a = np.broadcast_to(a, (M, 2))
        actions.append(a)
        state = dynamics.step(state, a, problem.dt, dynamics.VEHICLE)
        states.append(state)

    cost = None
    ref = problem.reference

    def acc(term):
        nonlocal cost
        cost = term if cost is None else cost + term

    pw = Value(probs.reshape(M, 1)) if is_value else probs.reshape(M, 1)
    for t in range(1, T + 1):
        d = states[t][:, 0:2] - ref[t - 1, 0:2]
        acc((pw * (d * d) * w.tracking).sum())
        dv = states[t][:, 2:3] - ref[t - 1, 2]
        acc((pw * (dv * dv) * w.speed).sum())
    for t in range(T):
        a = actions[t]
        acc((pw * (a * a) * w.control).sum())
    for t in range(1, T):
        da = actions[t] - actions[t - 1]
        acc((pw * (da * da) * w.jerk).sum())

    violations = []
    viol_term = None
    if any(obstacles):
        ego_stack = (ad.concat(states[1:], axis=0) if is_value
                     else np.concatenate(states[1:], axis=0))  # (T*M, 4)
        for idx in range(max(len(o) for o in obstacles)):
            obs_rows = []
            fp = None
            for m, entries in enumerate(obstacles):
                traj, fp_m = entries[idx] if idx < len(entries) else (None, None)
                if traj is None:
                    raise ValueError("modes must predict the same agents")
                fp = fp_m
                obs_rows.append(traj)
            # row order must match ego_stack: t-major, then mode
            obs = np.stack(obs_rows, axis=1).reshape(T * M, 4)
            margin = col_pair(ego_stack, problem.ego_footprint, obs, fp)
            short = ad.maximum(problem.clearance - margin, 0.0)
            violations.append(short)
            term = (short * short).sum()
            viol_term = term if viol_term is None else viol_term + term
    if problem.speed_bounds is not None:
        lo, hi = problem.speed_bounds
        v_stack = (ad.concat([s[:, 2:3] for s in states[1:]], axis=0) if is_value
                   else np.concatenate([s[:, 2:3] for s in states[1:]], axis=0))
        short = ad.maximum(lo - v_stack, 0.0) + ad.maximum(v_stack - hi, 0.0)
        violations.append(short)
        term = (short * short).sum()
        viol_term = term if viol_term is None else viol_term + term

    total = cost if viol_term is None else cost + penalty_weight * viol_term
    viol_arrays = [v.data if isinstance(v, Value) else np.asarray(v) for v in violations]
    max_violation = max((float(v.max()) for v in viol_arrays), default=0.0)
    return total, cost, max_violation


def plan(problem: PlanProblem, options: PlanOptions | None = None,
         warm_start: ContingencyPlan | None = None) -> ContingencyPlan:
    """Solve the branching plan; see module docstring for the method.

    A start state already violating the clearance against the first
    predicted step cannot be made feasible; the best-effort plan is returned
    with feasible=False.
    """
    options = options or PlanOptions()
    T, M = problem.horizon, len(problem.modes)
    u0 = Value(np.zeros((1, 2)))
    rest = Value(np.zeros((M, max(T - 1, 1), 2)))
    if warm_start is not None and warm_start.controls.shape == (M, T, 2):
        shifted = np.concatenate([warm_start.controls[:, 1:], warm_start.controls[:, -1:]],
                                 axis=1)
        u0 = Value(shifted.mean(axis=0)[0:1] if M > 1 else shifted[0, 0:1])
        if T > 1:
            rest = Value(shifted[:, 1:, :].copy())

    lam = options.penalty_init
    iterations = 0
    for _ in range(options.rounds):
        m_u0 = np.zeros_like(u0.data)
        v_u0 = np.zeros_like(u0.data)
        m_rest = np.zeros_like(rest.data)
        v_rest = np.zeros_like(rest.data)
        b1, b2, eps = 0.9, 0.999, 1e-8
        for it in range(1, options.iterations + 1):
            u0.zero_grad()
            rest.zero_grad()
            total, _, _ = evaluate(problem, u0, rest[:, :T - 1, :] if T > 1 else rest,
                                   penalty_weight=lam)
            ad.backward(total)
            g0 = u0.grad
            gr = rest.grad if rest.grad is not None else np.zeros_like(rest.data)
            iterations += 1
            m_u0 = b1 * m_u0 + (1 - b1) * g0
            v_u0 = b2 * v_u0 + (1 - b2) * g0 * g0
            m_rest = b1 * m_rest + (1 - b1) * gr
            v_rest = b2 * v_rest + (1 - b2) * gr * gr
            c1, c2 = 1 - b1 ** it, 1 - b2 ** it
            u0.data = u0.data - options.learning_rate * (m_u0 / c1) / (np.sqrt(v_u0 / c2) + eps)
            rest.data = rest.data - options.learning_rate * (m_rest / c1) / (np.sqrt(v_rest / c2) + eps)
            if max(np.abs(g0).max(), np.abs(gr).max()) < options.grad_tol:
                break
        _, _, max_viol = evaluate(problem, u0.data, rest.data[:, :T - 1, :] if T > 1 else rest.data,
                                  penalty_weight=0.0)
        if max_viol <= options.violation_tol:
            break
        lam *= options.penalty_growth

    # extract the clamped plan and replay it exactly through the dynamics
    shared = dynamics.clamp_action(u0.data, dynamics.VEHICLE)[0]
    controls = np.zeros((M, T, 2))
    states = np.zeros((M, T + 1, 4))
    for m in range(M):
        controls[m, 0] = shared
        for t in range(1, T):
            controls[m, t] = dynamics.clamp_action(rest.data[m, t - 1], dynamics.VEHICLE)
        states[m, 0] = problem.ego_state
        for t in range(T):
            states[m, t + 1] = dynamics.step(states[m, t], controls[m, t], problem.dt,
                                             dynamics.VEHICLE)
    _, cost, max_viol = evaluate(problem, u0.data, rest.data[:, :T - 1, :] if T > 1 else rest.data,
                                 penalty_weight=0.0)
    start_viol = _start_violation(problem)
    return ContingencyPlan(
        controls=controls, states=states, shared_first=shared.copy(),
        cost=float(cost), max_violation=float(max_viol), iterations=iterations,
        feasible=bool(max_viol <= options.violation_tol and start_viol <= options.violation_tol),
    )


def _start_violation(problem: PlanProblem) -> float:
    worst = 0.0
    for mode in problem.modes:
        for agent_id, traj in mode.trajectories.items():
            m = col_pair(problem.ego_state, problem.ego_footprint,
                         np.asarray(traj)[0], mode.footprints[agent_id])
            worst = max(worst, float(max(0.0, problem.clearance - float(np.min(m)))))
    return worst


# ----------------------------------------------------------------------
# closed-loop replanning
# ----------------------------------------------------------------------

@dataclass
class ReplanResult:
    ego_states: np.ndarray          # (steps+1, 4)
    controls: np.ndarray            # (steps, 2) applied shared first inputs
    min_margins: np.ndarray         # (steps,) executed clearance to scripted agents
    plans: list[ContingencyPlan]


def modes_from_prediction(pset, exclude: set[str]) -> list[PredictedMode]:
    """Convert a PredictionSet into planner obstacle modes."""
    modes = []
    for m in pset.modes:
        trajs = {a: m.states[a] for a in pset.agent_ids if a not in exclude}
        if not trajs:
            continue
        modes.append(PredictedMode(
            probability=m.probability,
            trajectories=trajs,
            footprints={a: pset.footprints[a] for a in trajs},
            types={a: "vehicle" if isinstance(pset.footprints[a], Rectangle)
                   else "pedestrian" for a in trajs}))
    total = sum(m.probability for m in modes)
    for m in modes:
        m.probability /= total
    return modes


def replan_loop(scene, ego_state: np.ndarray, reference: np.ndarray,
                model: CliqueModel | None, steps: int, *, ego_id: str = "ego",
                k: int = 3, beta: int = 1, start_step: int | None = None,
                thresholds=None, options: PlanOptions | None = None,
                ego_footprint: Rectangle | None = None,
                clearance: float = 0.3, weights: CostWeights | None = None):
    """Closed-loop simulation: predict, plan, apply the shared first input.

    Scripted agents follow their scene trajectories; the ego executes the
    planner. The ego joins the interaction graph like any other agent, so
    predictions react to it; its own predicted trajectory is discarded in
    favor of the planned one. Deterministic end to end.
    """
    if model is None and scene.tracks:
        raise ValueError("a model is required when the scene has other agents")
    cfg = model.config if model is not None else None
    horizon = cfg.horizon if cfg else reference.shape[0] - steps
    history = cfg.history if cfg else 4
    dt = cfg.dt if cfg else 0.5
    ego_footprint = ego_footprint or Rectangle(4.0, 2.0)
    if start_step is None:
        start_step = history
    if reference.shape[0] < steps + horizon:
        raise ValueError("reference must cover steps + horizon")

    ego_states = [np.asarray(ego_state, dtype=np.float64).copy()]
    # constant-velocity backfill so the ego has a full history at step 0
    back = [ego_states[0]]
    for _ in range(history):
        prev = back[0].copy()
        prev[0] -= prev[2] * np.cos(prev[3]) * dt
        prev[1] -= prev[2] * np.sin(prev[3]) * dt
        back.insert(0, prev)
    ego_history = back  # history+1 states ending at the current one

    applied = []
    margins = []
    plans: list[ContingencyPlan] = []
    prev_plan = None
    for s in range(steps):
        now = start_step + s
        agents = []
        for tr in scene.tracks:
            if tr.covers(now - history, now):
                agents.append(Agent(id=tr.id, type=tr.type, footprint=tr.footprint,
                                    history=tr.slice(now - history, now).copy()))
        ego_agent = Agent(id=ego_id, type=dynamics.VEHICLE, footprint=ego_footprint,
                          history=np.array(ego_history[-(history + 1):]))
        agents.append(ego_agent)

        modes: list[PredictedMode] = []
        if len(agents) > 1 and model is not None:
            graph = build_adjacency(agents, thresholds, horizon=horizon, dt=dt)
            cliques = partition_cliques(graph, max_size=cfg.max_clique_size)
            ego_clique = next(c for c in cliques if ego_id in c.ids)
            if len(ego_clique) > 1:
                pset = model.predict(ego_clique, k=k, beta=beta)
                modes = modes_from_prediction(pset, exclude={ego_id})
        if not modes:
            modes = [PredictedMode(probability=1.0, trajectories={}, footprints={},
                                   types={})]

        # reference row i is the desired state at time (i+1)*dt from the
        # scenario start; at executed step s the plan's step t lands on row s+t-1
        problem = PlanProblem(ego_state=ego_states[-1],
                              reference=reference[s:s + horizon],
                              dt=dt, horizon=horizon, modes=modes,
                              weights=weights or CostWeights(),
                              ego_footprint=ego_footprint, clearance=clearance)
        cplan = plan(problem, options, warm_start=prev_plan)
        prev_plan = cplan
        plans.append(cplan)
        applied.append(cplan.shared_first.copy())
        nxt = dynamics.step(ego_states[-1], cplan.shared_first, dt, dynamics.VEHICLE)
        ego_states.append(nxt)
        ego_history.append(nxt)

        # executed clearance against the scripted agents at the new step
        margin = np.inf
        for tr in scene.tracks:
            if tr.covers(now + 1, now + 1):
                other = tr.slice(now + 1, now + 1)[0]
                m = col_pair(nxt, ego_footprint, other, tr.footprint)
                margin = min(margin, float(np.min(m)))
        margins.append(margin)
    return ReplanResult(ego_states=np.array(ego_states), controls=np.array(applied),
                        min_margins=np.array(margins), plans=plans)
