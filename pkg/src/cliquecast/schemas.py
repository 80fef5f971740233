"""Documented JSON wire formats (scenes, predictions, plans, directives).

Every document carries a "schema" tag. Serialization is canonical: sorted
keys, fixed separators, '\n'-terminated, so identical inputs produce
byte-identical documents. parse(serialize(x)) round-trips exactly.

Schemas (field lists; all arrays are row-major lists of floats):

scene/1:
  scene_id: str, dt: float, label: str|null,
  agents: [{id, type: vehicle|pedestrian,
            footprint: {kind: rectangle, length, width} | {kind: circle, radius},
            first_step: int, states: [[4 floats]...], map_feature: [...]|null}]

prediction_set/1:
  agents: [ids], conditioned: [ids], dt, footprints: {id: footprint},
  modes: [{assignment: {id: int}, probability: float,
           states: {id: [[4]...]}, controls: {id: [[2]...]|null}}]

predict_request/1:
  scene: scene/1, k: int, beta: int,
  conditioning: [{agent_id, maneuver: brake|accelerate, accel: float}
                 | {agent_id, trajectory: [[4]...]}]

plan_request/1:
  ego_state: [4], reference: [[4]...], dt, horizon,
  modes: [{probability, trajectories: {id: [[4]...]}, footprints: {id: footprint}}],
  weights: {tracking, speed, control, jerk}|absent, clearance: float|absent

plan/1:
  controls: [[[2]...]...] (M x T x 2), states: (M x T+1 x 4),
  shared_first: [2], cost, max_violation, iterations, feasible
"""

from __future__ import annotations

import json

import numpy as np

from .data import Scene, Track
from .geometry import Circle, Rectangle
from .planner import ContingencyPlan, CostWeights, PlanProblem, PredictedMode
from .policy import PredictionMode, PredictionSet


class SchemaError(ValueError):
    """Malformed or wrong-version document."""


def dumps(payload: dict) -> str:
    """Canonical serialization: sorted keys, no float noise, trailing newline."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"


def loads(text: str | bytes) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise SchemaError(f"invalid JSON: {err}") from None
    if not isinstance(doc, dict):
        raise SchemaError("top-level JSON value must be an object")
    return doc


def _require(doc: dict, key: str, schema: str):
    if key not in doc:
        raise SchemaError(f"{schema}: missing field {key!r}")
    return doc[key]


def _floatlist(a: np.ndarray) -> list:
    return np.asarray(a, dtype=np.float64).tolist()


# -- footprints ---------------------------------------------------------

def footprint_to_json(fp) -> dict:
    if isinstance(fp, Rectangle):
        return {"kind": "rectangle", "length": fp.length, "width": fp.width}
    if isinstance(fp, Circle):
        return {"kind": "circle", "radius": fp.radius}
    raise SchemaError(f"unknown footprint {fp!r}")


def footprint_from_json(doc: dict):
    kind = _require(doc, "kind", "footprint")
    if kind == "rectangle":
        return Rectangle(float(doc["length"]), float(doc["width"]))
    if kind == "circle":
        return Circle(float(doc["radius"]))
    raise SchemaError(f"unknown footprint kind {kind!r}")


# -- scenes -------------------------------------------------------------

def scene_to_json(scene: Scene) -> dict:
    return {
        "schema": "cliquecast.scene/1",
        "scene_id": scene.scene_id,
        "dt": scene.dt,
        "label": scene.label,
        "agents": [
            {
                "id": tr.id,
                "type": tr.type,
                "footprint": footprint_to_json(tr.footprint),
                "first_step": tr.first_step,
                "states": _floatlist(tr.states),
                "map_feature": None if tr.map_feature is None else _floatlist(tr.map_feature),
            }
            for tr in scene.tracks
        ],
    }


def scene_from_json(doc: dict) -> Scene:
    if doc.get("schema") != "cliquecast.scene/1":
        raise SchemaError(f"expected cliquecast.scene/1, got {doc.get('schema')!r}")
    tracks = []
    for a in _require(doc, "agents", "scene"):
        states = np.asarray(_require(a, "states", "scene.agent"), dtype=np.float64)
        if states.ndim != 2 or states.shape[1] != 4:
            raise SchemaError(f"agent {a.get('id')}: states must be (steps, 4)")
        mf = a.get("map_feature")
        tracks.append(Track(
            id=str(_require(a, "id", "scene.agent")),
            type=str(_require(a, "type", "scene.agent")),
            footprint=footprint_from_json(_require(a, "footprint", "scene.agent")),
            first_step=int(a.get("first_step", 0)),
            states=states,
            map_feature=None if mf is None else np.asarray(mf, dtype=np.float64),
        ))
    return Scene(scene_id=str(_require(doc, "scene_id", "scene")),
                 dt=float(_require(doc, "dt", "scene")),
                 tracks=tracks, label=doc.get("label"))


# -- predictions --------------------------------------------------------

def prediction_set_to_json(pset: PredictionSet) -> dict:
    return {
        "schema": "cliquecast.prediction_set/1",
        "agents": list(pset.agent_ids),
        "conditioned": list(pset.conditioned_ids),
        "dt": pset.dt,
        "footprints": {a: footprint_to_json(fp) for a, fp in (pset.footprints or {}).items()},
        "modes": [
            {
                "assignment": dict(sorted(m.assignment.items())),
                "probability": m.probability,
                "states": {a: _floatlist(s) for a, s in sorted(m.states.items())},
                "controls": {a: (None if c is None else _floatlist(c))
                             for a, c in sorted(m.controls.items())},
            }
            for m in pset.modes
        ],
    }


def prediction_set_from_json(doc: dict) -> PredictionSet:
    if doc.get("schema") != "cliquecast.prediction_set/1":
        raise SchemaError(f"expected cliquecast.prediction_set/1, got {doc.get('schema')!r}")
    modes = [
        PredictionMode(
            assignment={k: int(v) for k, v in m["assignment"].items()},
            probability=float(m["probability"]),
            states={a: np.asarray(s, dtype=np.float64) for a, s in m["states"].items()},
            controls={a: (None if c is None else np.asarray(c, dtype=np.float64))
                      for a, c in m["controls"].items()},
        )
        for m in _require(doc, "modes", "prediction_set")
    ]
    return PredictionSet(
        agent_ids=list(doc["agents"]),
        conditioned_ids=list(doc.get("conditioned", [])),
        dt=float(doc["dt"]),
        modes=modes,
        footprints={a: footprint_from_json(f) for a, f in doc.get("footprints", {}).items()},
    )


# -- plans --------------------------------------------------------------

def plan_problem_from_json(doc: dict) -> PlanProblem:
    if doc.get("schema") != "cliquecast.plan_request/1":
        raise SchemaError(f"expected cliquecast.plan_request/1, got {doc.get('schema')!r}")
    modes = []
    for m in _require(doc, "modes", "plan_request"):
        foot = {a: footprint_from_json(f) for a, f in m.get("footprints", {}).items()}
        trajs = {a: np.asarray(t, dtype=np.float64) for a, t in m.get("trajectories", {}).items()}
        missing = set(trajs) - set(foot)
        if missing:
            raise SchemaError(f"plan_request: footprints missing for {sorted(missing)}")
        modes.append(PredictedMode(
            probability=float(_require(m, "probability", "plan_request.mode")),
            trajectories=trajs, footprints=foot,
            types={a: ("vehicle" if isinstance(foot[a], Rectangle) else "pedestrian")
                   for a in trajs}))
    weights = CostWeights(**doc["weights"]) if "weights" in doc else CostWeights()
    return PlanProblem(
        ego_state=np.asarray(_require(doc, "ego_state", "plan_request"), dtype=np.float64),
        reference=np.asarray(_require(doc, "reference", "plan_request"), dtype=np.float64),
        dt=float(_require(doc, "dt", "plan_request")),
        horizon=int(_require(doc, "horizon", "plan_request")),
        modes=modes, weights=weights,
        clearance=float(doc.get("clearance", 0.3)),
    )


def plan_problem_to_json(problem: PlanProblem) -> dict:
    return {
        "schema": "cliquecast.plan_request/1",
        "ego_state": _floatlist(problem.ego_state),
        "reference": _floatlist(problem.reference),
        "dt": problem.dt,
        "horizon": problem.horizon,
        "clearance": problem.clearance,
        "weights": {"tracking": problem.weights.tracking, "speed": problem.weights.speed,
                    "control": problem.weights.control, "jerk": problem.weights.jerk},
        "modes": [
            {
                "probability": m.probability,
                "trajectories": {a: _floatlist(t) for a, t in sorted(m.trajectories.items())},
                "footprints": {a: footprint_to_json(f) for a, f in sorted(m.footprints.items())},
            }
            for m in problem.modes
        ],
    }


def plan_to_json(cplan: ContingencyPlan) -> dict:
    return {
        "schema": "cliquecast.plan/1",
        "controls": _floatlist(cplan.controls),
        "states": _floatlist(cplan.states),
        "shared_first": _floatlist(cplan.shared_first),
        "cost": cplan.cost,
        "max_violation": cplan.max_violation,
        "iterations": cplan.iterations,
        "feasible": cplan.feasible,
    }


def plan_from_json(doc: dict) -> ContingencyPlan:
    if doc.get("schema") != "cliquecast.plan/1":
        raise SchemaError(f"expected cliquecast.plan/1, got {doc.get('schema')!r}")
    return ContingencyPlan(
        controls=np.asarray(doc["controls"], dtype=np.float64),
        states=np.asarray(doc["states"], dtype=np.float64),
        shared_first=np.asarray(doc["shared_first"], dtype=np.float64),
        cost=float(doc["cost"]),
        max_violation=float(doc["max_violation"]),
        iterations=int(doc["iterations"]),
        feasible=bool(doc["feasible"]),
    )
