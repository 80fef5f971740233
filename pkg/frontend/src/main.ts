/** DOM shell: wires the pure modules to a canvas and a small control panel. */

import { ApiClient, ApiError } from "./api.js";
import { DrawCmd, render, scenePoints } from "./render.js";
import * as state from "./state.js";
import { DirectiveJson, SceneJson, currentState } from "./types.js";
import { Viewport, fitView, screenToWorld, worldToScreen } from "./view.js";

const SERVICE_BASE =
  new URLSearchParams(window.location.search).get("api") ?? "http://127.0.0.1:8791";

const api = new ApiClient(SERVICE_BASE);
let view: state.ViewState = state.initialState();
let scenes: SceneJson[] = [];
let viewport: Viewport | null = null;
let dragFrom: string | null = null;
let dragPreview: [number, number] | null = null;

const canvas = document.getElementById("world") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const sceneSelect = document.getElementById("scene-select") as HTMLSelectElement;
const agentList = document.getElementById("agent-list") as HTMLDivElement;
const modeList = document.getElementById("mode-list") as HTMLDivElement;
const directiveList = document.getElementById("directive-list") as HTMLDivElement;
const statusLine = document.getElementById("status") as HTMLDivElement;
const kInput = document.getElementById("k-input") as HTMLInputElement;
const betaInput = document.getElementById("beta-input") as HTMLInputElement;
const scrub = document.getElementById("scrub") as HTMLInputElement;
const scrubLabel = document.getElementById("scrub-label") as HTMLSpanElement;

function paint(cmds: DrawCmd[]) {
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.fillStyle = "#ffffff";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  for (const cmd of cmds) {
    switch (cmd.kind) {
      case "polyline": {
        if (cmd.points.length < 2) break;
        ctx.beginPath();
        ctx.strokeStyle = cmd.color;
        ctx.lineWidth = cmd.width;
        ctx.setLineDash(cmd.dash);
        ctx.moveTo(cmd.points[0][0], cmd.points[0][1]);
        for (const p of cmd.points.slice(1)) ctx.lineTo(p[0], p[1]);
        ctx.stroke();
        ctx.setLineDash([]);
        break;
      }
      case "circle": {
        ctx.beginPath();
        ctx.arc(cmd.center[0], cmd.center[1], cmd.radius, 0, Math.PI * 2);
        if (cmd.fill) {
          ctx.fillStyle = cmd.color;
          ctx.fill();
        } else {
          ctx.strokeStyle = cmd.color;
          ctx.lineWidth = 1.5;
          ctx.stroke();
        }
        break;
      }
      case "rect": {
        ctx.save();
        ctx.translate(cmd.center[0], cmd.center[1]);
        ctx.rotate(cmd.angle);
        ctx.strokeStyle = cmd.color;
        ctx.lineWidth = 1.5;
        ctx.strokeRect(-cmd.w / 2, -cmd.h / 2, cmd.w, cmd.h);
        ctx.restore();
        break;
      }
      case "label": {
        ctx.fillStyle = cmd.color;
        ctx.font = "11px sans-serif";
        ctx.fillText(cmd.text, cmd.at[0], cmd.at[1]);
        break;
      }
    }
  }
  if (dragPreview && dragFrom && viewport && view.scene) {
    const agent = view.scene.agents.find((a) => a.id === dragFrom);
    if (agent) {
      const cur = currentState(agent);
      const a = worldToScreen(viewport, [cur[0], cur[1]]);
      ctx.beginPath();
      ctx.strokeStyle = "#f39c12";
      ctx.setLineDash([3, 3]);
      ctx.moveTo(a[0], a[1]);
      ctx.lineTo(dragPreview[0], dragPreview[1]);
      ctx.stroke();
      ctx.setLineDash([]);
    }
  }
}

function redraw() {
  viewport = fitView(scenePoints(view), canvas.width, canvas.height);
  paint(render(view, viewport));
  statusLine.textContent = view.status;
  renderAgentPanel();
  renderModePanel();
  renderDirectivePanel();
  const horizon = state.horizonSeconds(view);
  scrub.max = horizon.toFixed(2);
  scrub.step = "0.05";
  scrubLabel.textContent = `t = ${view.scrubT.toFixed(2)} s`;
}

function renderAgentPanel() {
  agentList.replaceChildren();
  if (!view.scene) return;
  for (const agent of view.scene.agents) {
    const row = document.createElement("div");
    const btn = document.createElement("button");
    btn.textContent = (view.selected.includes(agent.id) ? "[x] " : "[ ] ") + agent.id;
    btn.onclick = () => {
      view = state.toggleSelect(view, agent.id);
      redraw();
    };
    row.appendChild(btn);
    agentList.appendChild(row);
  }
}

function renderModePanel() {
  modeList.replaceChildren();
  const clique = view.prediction?.cliques[0];
  if (!view.prediction) return;
  const count = Math.max(...view.prediction.cliques.map((c) => c.modes.length), 0);
  for (let m = 0; m < count; m++) {
    const btn = document.createElement("button");
    const probs = view.prediction.cliques
      .map((c) => c.modes[m]?.probability)
      .filter((p): p is number => p !== undefined);
    const tag = probs.length ? ` p=${probs[0].toFixed(3)}` : "";
    btn.textContent = `${view.hiddenModes.includes(m) ? "hidden" : "shown"} mode ${m}${tag}`;
    btn.onclick = () => {
      view = state.toggleMode(view, m);
      redraw();
    };
    modeList.appendChild(btn);
  }
  void clique;
}

function renderDirectivePanel() {
  directiveList.replaceChildren();
  for (const d of view.directives) {
    const row = document.createElement("div");
    const text = "maneuver" in d
      ? `${d.agent_id}: ${d.maneuver} ${d.accel} m/s²`
      : `${d.agent_id}: waypoint trajectory (${d.trajectory.length} steps)`;
    const span = document.createElement("span");
    span.textContent = text + " ";
    const drop = document.createElement("button");
    drop.textContent = "remove";
    drop.onclick = () => {
      view = state.removeDirective(view, d.agent_id);
      redraw();
    };
    row.append(span, drop);
    directiveList.appendChild(row);
  }
}

async function applyPrediction() {
  const scene = view.scene;
  if (!scene) return;
  view = state.setStatus(view, "predicting ...");
  redraw();
  try {
    const resp = await api.predict(scene, view.k, view.beta, view.directives);
    view = state.setPrediction(view, resp);
  } catch (err) {
    if ((err as Error).name === "AbortError") return; // superseded request
    const msg = err instanceof ApiError ? `${err.status}: ${err.message}`
                                        : String(err);
    view = state.setStatus(view, `request failed — ${msg}`);
  }
  redraw();
}

function nearestAgent(world: [number, number]): string | null {
  if (!view.scene) return null;
  let best: string | null = null;
  let bestD = 3.0; // meters
  for (const agent of view.scene.agents) {
    const cur = currentState(agent);
    const d = Math.hypot(cur[0] - world[0], cur[1] - world[1]);
    if (d < bestD) {
      best = agent.id;
      bestD = d;
    }
  }
  return best;
}

/** Straight constant-speed trajectory toward the drop point (client preview
 * only; the authoritative rollout happens on the server from this payload). */
function dragTrajectory(agentId: string, target: [number, number]): DirectiveJson | null {
  const agent = view.scene?.agents.find((a) => a.id === agentId);
  const clique = view.prediction?.cliques.find((c) => c.agents.includes(agentId));
  const steps = clique?.modes[0]?.states[agentId]?.length ?? 12;
  const dt = clique?.dt ?? view.scene?.dt ?? 0.5;
  if (!agent) return null;
  const cur = currentState(agent);
  const dx = target[0] - cur[0];
  const dy = target[1] - cur[1];
  const dist = Math.hypot(dx, dy);
  const heading = Math.atan2(dy, dx);
  const speed = dist / (steps * dt);
  const rows: number[][] = [];
  for (let t = 1; t <= steps; t++) {
    const frac = t / steps;
    const row = agent.type === "vehicle"
      ? [cur[0] + dx * frac, cur[1] + dy * frac, speed, heading]
      : [cur[0] + dx * frac, cur[1] + dy * frac,
         (speed * dx) / Math.max(dist, 1e-9), (speed * dy) / Math.max(dist, 1e-9)];
    rows.push(row);
  }
  return { agent_id: agentId, trajectory: rows };
}

function wire() {
  canvas.addEventListener("mousedown", (ev) => {
    if (!viewport) return;
    const world = screenToWorld(viewport, [ev.offsetX, ev.offsetY]);
    dragFrom = nearestAgent(world);
  });
  canvas.addEventListener("mousemove", (ev) => {
    if (!dragFrom) return;
    dragPreview = [ev.offsetX, ev.offsetY];
    redraw();
  });
  canvas.addEventListener("mouseup", (ev) => {
    if (!viewport) return;
    const world = screenToWorld(viewport, [ev.offsetX, ev.offsetY]);
    if (dragFrom && dragPreview) {
      const directive = dragTrajectory(dragFrom, world);
      if (directive) view = state.setDirective(view, directive);
    } else if (dragFrom) {
      view = state.toggleSelect(view, dragFrom);
    }
    dragFrom = null;
    dragPreview = null;
    redraw();
  });

  (document.getElementById("btn-brake") as HTMLButtonElement).onclick = () => {
    for (const id of view.selected) {
      view = state.setDirective(view, { agent_id: id, maneuver: "brake", accel: -4.0 });
    }
    redraw();
  };
  (document.getElementById("btn-accel") as HTMLButtonElement).onclick = () => {
    for (const id of view.selected) {
      view = state.setDirective(view, { agent_id: id, maneuver: "accelerate", accel: 4.0 });
    }
    redraw();
  };
  (document.getElementById("btn-clear") as HTMLButtonElement).onclick = () => {
    view = state.clearDirectives(view);
    redraw();
  };
  (document.getElementById("btn-apply") as HTMLButtonElement).onclick = () => {
    view = state.setSampling(view, Number(kInput.value), Number(betaInput.value));
    void applyPrediction();
  };
  scrub.oninput = () => {
    view = state.setScrub(view, Number(scrub.value));
    redraw();
  };
  sceneSelect.onchange = () => {
    const scene = scenes[Number(sceneSelect.value)];
    if (scene) {
      view = state.loadScene(view, scene);
      void applyPrediction();
    }
  };
}

async function boot() {
  wire();
  try {
    const health = await api.health();
    statusLine.textContent = `service ok (model ${health.model_hash})`;
    scenes = await api.scenes();
    sceneSelect.replaceChildren(
      ...scenes.map((s, i) => {
        const opt = document.createElement("option");
        opt.value = String(i);
        opt.textContent = s.scene_id;
        return opt;
      }),
    );
    if (scenes.length > 0) {
      view = state.loadScene(view, scenes[0]);
      await applyPrediction();
    }
  } catch (err) {
    statusLine.textContent = `service unreachable at ${SERVICE_BASE}: ${String(err)}`;
  }
  redraw();
}

void boot();
