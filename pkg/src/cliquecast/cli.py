"""Command-line entry points: train, evaluate, predict, plan, serve, gen-data.

Config files are JSON with optional "model", "training", and "data"
sections mirroring ModelConfig, TrainingConfig, and the windowing options.
The checkpoint path may come from --ckpt or the CLIQUECAST_CHECKPOINT
environment variable.
"""

from __future__ import annotations

import csv
import glob
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import schemas, service, svg
from .data import (SynthSpec, TEMPLATES, load_trajectory_file, synth_scenarios,
                   windows_from_scene)
from .metrics import (ade_fde, bon_curve, collision_rate, displacement_by_horizon,
                      modes_histogram, MetricsReport)
from .model import CliqueModel, ModelConfig
from .planner import plan as solve_plan
from .server import ServiceState, demo_scenes, serve_forever
from .training import TrainingConfig, train

CKPT_ENV = "CLIQUECAST_CHECKPOINT"


def _fail(message: str, code: int = 2):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        _fail(f"cannot read config {path}: {err}")


def _data_params(cfg: dict) -> dict:
    d = cfg.get("data", {})
    return {"history": int(d.get("history", 8)), "horizon": int(d.get("horizon", 12)),
            "max_clique_size": int(d.get("max_clique_size", 5)),
            "stride": int(d.get("stride", 1))}


def _load_scenes(data: str):
    """Scene JSONs (or raw trajectory .txt files) from a path or glob."""
    p = Path(data)
    if p.is_dir():
        paths = sorted(p.glob("*.json")) + sorted(p.glob("*.txt"))
    else:
        paths = [Path(x) for x in sorted(glob.glob(data))]
    paths = [x for x in paths if x.name != "manifest.json"]
    if not paths:
        _fail(f"no scene files under {data!r}")
    scenes = []
    for path in paths:
        if path.suffix == ".json":
            with open(path) as fh:
                scenes.append(schemas.scene_from_json(json.load(fh)))
        else:
            scenes.append(load_trajectory_file(path))
    return scenes


def _windows(scenes, params):
    wins = []
    for scene in scenes:
        wins.extend(windows_from_scene(scene, history=params["history"],
                                       horizon=params["horizon"],
                                       max_clique_size=params["max_clique_size"],
                                       stride=params["stride"]))
    if not wins:
        _fail("no usable training windows (scenes too short for the window size?)")
    return wins


def _require_ckpt(ckpt: str | None) -> CliqueModel:
    path = ckpt or os.environ.get(CKPT_ENV)
    if not path:
        _fail(f"no checkpoint: pass --ckpt or set {CKPT_ENV}")
    try:
        return CliqueModel.load(path)
    except (OSError, KeyError, ValueError) as err:
        _fail(f"cannot load checkpoint {path}: {err}")


@click.group()
def main():
    """Scene-consistent joint trajectory prediction and contingency planning."""


# ----------------------------------------------------------------------
@main.command("gen-data")
@click.option("--template", type=click.Choice(TEMPLATES), required=True)
@click.option("--n", "n_scenes", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--length", type=int, default=24, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def gen_data(template, n_scenes, seed, length, out_dir):
    """Generate synthetic scenes as scene JSON files."""
    try:
        scenes = synth_scenarios(SynthSpec(template, n_scenes, length=length), seed)
    except ValueError as err:
        _fail(str(err))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    for scene in scenes:
        name = f"{scene.scene_id}.json"
        with open(out / name, "w") as fh:
            fh.write(schemas.dumps(schemas.scene_to_json(scene)))
        manifest.append({"file": name, "label": scene.label})
    with open(out / "manifest.json", "w") as fh:
        fh.write(schemas.dumps({"template": template, "seed": seed, "scenes": manifest}))
    click.echo(f"wrote {len(scenes)} scenes to {out}")


# ----------------------------------------------------------------------
@main.command("train")
@click.option("--data", required=True, help="scene dir or glob")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--loss-csv", type=click.Path(), default=None)
def train_cmd(data, config_path, out_path, loss_csv):
    """Train a model and write a checkpoint (plus a per-epoch loss CSV)."""
    cfg = _load_config(config_path)
    params = _data_params(cfg)
    model_cfg = ModelConfig.from_dict({**ModelConfig().to_dict(), **cfg.get("model", {})})
    if model_cfg.horizon != params["horizon"] or model_cfg.history != params["history"]:
        _fail("model.horizon/history must match data.horizon/history")
    try:
        train_cfg = TrainingConfig.from_dict({**TrainingConfig().to_dict(),
                                              **cfg.get("training", {})})
    except (TypeError, ValueError) as err:
        _fail(f"bad training config: {err}")
    scenes = _load_scenes(data)
    wins = _windows(scenes, params)
    click.echo(f"training on {len(wins)} windows from {len(scenes)} scenes")
    model, history = train(wins, train_cfg, model_cfg, log=click.echo)
    model.save(out_path, extra_meta={"training": train_cfg.to_dict(),
                                     "windows": len(wins)})
    click.echo(f"checkpoint written to {out_path}")
    if loss_csv:
        with open(loss_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "alpha", "likelihood", "kl", "collision", "total"])
            for r in history:
                writer.writerow([r.epoch, f"{r.alpha:.6g}", f"{r.likelihood:.9g}",
                                 f"{r.kl:.9g}", f"{r.collision:.9g}", f"{r.total:.9g}"])
        click.echo(f"loss history written to {loss_csv}")


# ----------------------------------------------------------------------
@main.command("evaluate")
@click.option("--data", required=True)
@click.option("--ckpt", default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out-prefix", default="metrics", show_default=True)
@click.option("--n-list", default="1,3,5", show_default=True)
@click.option("--horizons", default="1,2,3,4", show_default=True,
              help="collision-rate horizons in seconds")
@click.option("--k", type=int, default=5, show_default=True)
@click.option("--svg", "emit_svg", is_flag=True, help="also render SVG plots")
def evaluate_cmd(data, ckpt, config_path, out_prefix, n_list, horizons, k, emit_svg):
    """ADE/FDE, Best-of-N, and collision rate on a scene set."""
    model = _require_ckpt(ckpt)
    cfg = _load_config(config_path)
    params = _data_params(cfg)
    params["horizon"] = model.config.horizon
    params["history"] = model.config.history
    params["max_clique_size"] = model.config.max_clique_size
    scenes = _load_scenes(data)
    wins = _windows(scenes, params)
    ns = [int(x) for x in n_list.split(",") if x]
    hs = [float(x) for x in horizons.split(",") if x]

    psets, ades, fdes, bons = [], [], [], {n: [] for n in ns}
    horizon_vals = {h: [] for h in hs}
    for w in wins:
        pset = model.predict(w.clique, k=max(k, max(ns)), beta=0)
        psets.append(pset)
        gt = {a.id: a.future[:, 0:2] for a in w.clique.agents}
        a1, f1 = ade_fde(pset.modes, gt, 1)
        ades.append(a1)
        fdes.append(f1)
        for n in ns:
            bons[n].append(ade_fde(pset.modes, gt, n))
        for h, pair in displacement_by_horizon(pset.modes, gt, w.dt, hs).items():
            horizon_vals[h].append(pair)
    report = MetricsReport(
        ade=float(np.mean(ades)), fde=float(np.mean(fdes)),
        bon={n: (float(np.mean([x[0] for x in v])), float(np.mean([x[1] for x in v])))
             for n, v in bons.items()},
        by_horizon={h: (float(np.mean([x[0] for x in v])),
                        float(np.mean([x[1] for x in v])))
                    for h, v in horizon_vals.items()},
        collision_rate=collision_rate(psets, hs),
        modes_used=modes_histogram(psets),
    )
    with open(f"{out_prefix}.json", "w") as fh:
        fh.write(report.to_json() + "\n")
    with open(f"{out_prefix}.csv", "w") as fh:
        fh.write(report.to_csv())
    click.echo(f"ADE={report.ade:.4f} FDE={report.fde:.4f}")
    for n in ns:
        click.echo(f"BoN n={n}: ADE={report.bon[n][0]:.4f} FDE={report.bon[n][1]:.4f}")
    for h, r in sorted(report.collision_rate.items()):
        click.echo(f"collision@{h:g}s: {r:.4f}")
    if emit_svg:
        curve = bon_curve(wins, lambda c, kk, b: model.predict(c, k=kk, beta=b), max(ns))
        with open(f"{out_prefix}_bon.svg", "w") as fh:
            fh.write(svg.line_chart({"FDE": [(float(n), f) for n, f in curve]},
                                    "Best-of-N FDE", "N", "FDE (m)"))
        with open(f"{out_prefix}_collision.svg", "w") as fh:
            fh.write(svg.line_chart(
                {"collision rate": sorted(report.collision_rate.items())},
                "Collision rate by horizon", "horizon (s)", "rate"))
        click.echo(f"plots written to {out_prefix}_bon.svg, {out_prefix}_collision.svg")


# ----------------------------------------------------------------------
def _parse_condition(spec: str) -> dict:
    # id:brake:-4  /  id:accelerate:4
    parts = spec.split(":")
    if len(parts) not in (2, 3):
        raise ValueError(f"conditioning spec must be id:maneuver[:accel], got {spec!r}")
    doc = {"agent_id": parts[0], "maneuver": parts[1]}
    if len(parts) == 3:
        doc["accel"] = float(parts[2])
    return doc


@main.command("predict")
@click.option("--scene", "scene_path", type=click.Path(exists=True), required=True)
@click.option("--ckpt", default=None)
@click.option("--k", type=int, default=3, show_default=True)
@click.option("--beta", type=int, default=1, show_default=True)
@click.option("--condition", multiple=True,
              help="maneuver macro as id:brake:-4 or id:accelerate:4 (repeatable)")
@click.option("--condition-file", type=click.Path(exists=True), default=None,
              help="JSON list of conditioning directives")
@click.option("--out", "out_path", type=click.Path(), default=None)
def predict_cmd(scene_path, ckpt, k, beta, condition, condition_file, out_path):
    """Predict joint modes for a scene JSON; writes a predict response JSON."""
    model = _require_ckpt(ckpt)
    with open(scene_path) as fh:
        try:
            scene = schemas.scene_from_json(json.load(fh))
        except (json.JSONDecodeError, schemas.SchemaError) as err:
            _fail(f"bad scene file: {err}")
    directives = []
    try:
        for spec in condition:
            directives.append(service.Directive.from_json(_parse_condition(spec)))
        if condition_file:
            with open(condition_file) as fh:
                directives.extend(service.Directive.from_json(d) for d in json.load(fh))
        request = service.PredictRequest(scene=scene, k=k, beta=beta,
                                         directives=directives)
        psets = service.run_prediction(model, request,
                                       warn=lambda m: click.echo(f"warning: {m}", err=True))
    except service.UnknownAgentError as err:
        _fail(f"unknown agent id: {err.args[0]}", code=3)
    except (ValueError, json.JSONDecodeError) as err:
        _fail(str(err))
    payload = schemas.dumps({
        "schema": "cliquecast.predict_response/1",
        "model_hash": model.weights_hash(),
        "cliques": [schemas.prediction_set_to_json(p) for p in psets],
    })
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(payload)
        click.echo(f"wrote {out_path}")
    else:
        click.echo(payload, nl=False)


# ----------------------------------------------------------------------
@main.command("plan")
@click.option("--problem", "problem_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--svg", "svg_path", type=click.Path(), default=None)
def plan_cmd(problem_path, out_path, svg_path):
    """Solve a branching contingency plan from a plan_request JSON."""
    with open(problem_path) as fh:
        try:
            problem = schemas.plan_problem_from_json(json.load(fh))
        except (json.JSONDecodeError, schemas.SchemaError, ValueError) as err:
            _fail(f"bad plan request: {err}")
    result = solve_plan(problem)
    payload = schemas.dumps({"schema": "cliquecast.plan_response/1",
                             "plan": schemas.plan_to_json(result)})
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(payload)
        click.echo(f"wrote {out_path}")
    else:
        click.echo(payload, nl=False)
    if svg_path:
        with open(svg_path, "w") as fh:
            fh.write(svg.plan_svg(problem, result))
        click.echo(f"wrote {svg_path}")
    if not result.feasible:
        click.echo("warning: plan flagged infeasible "
                   f"(max violation {result.max_violation:.3g})", err=True)


# ----------------------------------------------------------------------
@main.command("serve")
@click.option("--ckpt", default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8791, show_default=True)
@click.option("--scenes", "scenes_dir", type=click.Path(exists=True), default=None,
              help="directory of scene JSONs for GET /scenes (default: bundled demos)")
def serve_cmd(ckpt, host, port, scenes_dir):
    """Serve /predict, /plan, /scenes, /health over HTTP."""
    model = _require_ckpt(ckpt)
    if scenes_dir:
        scenes = _load_scenes(scenes_dir)
    else:
        scenes = demo_scenes()
    state = ServiceState(model=model, scenes=scenes)
    click.echo(f"serving on http://{host}:{port} (model {state.model_hash()})")
    serve_forever(host, port, state)


if __name__ == "__main__":
    main()
