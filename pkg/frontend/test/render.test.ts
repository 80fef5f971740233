import assert from "node:assert/strict";
import { test } from "node:test";

import { layerOf, modeDash, render, scenePoints, serializeCmds } from "../src/render.js";
import * as state from "../src/state.js";
import { fitView, screenToWorld, worldToScreen } from "../src/view.js";
import { scene, unconditioned } from "./fixtures.js";

function predictedState(): state.ViewState {
  return state.setPrediction(state.loadScene(state.initialState(), scene), unconditioned);
}

test("view transform round-trips", () => {
  const v = fitView([[0, 0], [30, 12]], 800, 600);
  for (const p of [[0, 0], [30, 12], [11.5, -2.25]] as Array<[number, number]>) {
    const back = screenToWorld(v, worldToScreen(v, p));
    assert.ok(Math.hypot(back[0] - p[0], back[1] - p[1]) < 1e-9);
  }
});

test("trajectory polylines use exactly the payload vertices", () => {
  const s = predictedState();
  const v = fitView(scenePoints(s), 800, 600);
  const cmds = layerOf(render(s, v), "trajectories");
  const polys = cmds.filter((c) => c.kind === "polyline");
  // two modes x two agents
  assert.equal(polys.length, 4);
  const payload = unconditioned.cliques[0].modes[0].states["follower"];
  const drawn = polys[0];
  assert.ok(drawn.kind === "polyline");
  assert.equal(drawn.points.length, payload.length);
  drawn.points.forEach((pt, i) => {
    const world = screenToWorld(v, pt);
    assert.ok(Math.hypot(world[0] - payload[i][0], world[1] - payload[i][1]) < 1e-9,
              `vertex ${i} drifted`);
  });
});

test("modes draw with distinct stroke styles", () => {
  const s = predictedState();
  const v = fitView(scenePoints(s), 800, 600);
  const polys = layerOf(render(s, v), "trajectories")
    .filter((c) => c.kind === "polyline");
  const dashes = new Set(polys.map((p) => JSON.stringify(p.kind === "polyline" ? p.dash : [])));
  assert.equal(dashes.size, 2); // one style per mode
  assert.notDeepEqual(modeDash(0), modeDash(1));
});

test("hidden modes are not rendered", () => {
  let s = predictedState();
  const v = fitView(scenePoints(s), 800, 600);
  const before = layerOf(render(s, v), "trajectories").length;
  s = state.toggleMode(s, 1);
  const after = layerOf(render(s, v), "trajectories").length;
  assert.equal(after, before / 2);
});

test("clique membership edges are drawn", () => {
  const s = predictedState();
  const v = fitView(scenePoints(s), 800, 600);
  const edges = layerOf(render(s, v), "cliques");
  assert.equal(edges.length, 1); // one pair in the clique
});

test("identical state renders identical command lists", () => {
  const s = predictedState();
  const v = fitView(scenePoints(s), 800, 600);
  assert.equal(serializeCmds(render(s, v)), serializeCmds(render(s, v)));
});

test("scrub glyphs appear only for t > 0 and never at t = 0", () => {
  let s = predictedState();
  const v = fitView(scenePoints(s), 800, 600);
  const at0 = layerOf(render(s, v), "overlay").filter((c) => c.kind === "circle");
  assert.equal(at0.length, 0);
  s = state.setScrub(s, 1.0);
  const at1 = layerOf(render(s, v), "overlay").filter((c) => c.kind === "circle");
  assert.equal(at1.length, 2); // one glyph per clique agent
});
