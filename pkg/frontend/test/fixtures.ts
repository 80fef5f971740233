/** Handcrafted wire-format fixtures shared by the frontend tests. */

import { PredictResponseJson, SceneJson } from "../src/types.js";

export const scene: SceneJson = {
  schema: "cliquecast.scene/1",
  scene_id: "fixture-0",
  dt: 0.5,
  label: null,
  agents: [
    {
      id: "follower",
      type: "vehicle",
      footprint: { kind: "rectangle", length: 4, width: 2 },
      first_step: 0,
      states: [
        [0, 0, 6, 0],
        [3, 0, 6, 0],
        [6, 0, 6, 0],
      ],
      map_feature: null,
    },
    {
      id: "leader",
      type: "vehicle",
      footprint: { kind: "rectangle", length: 4, width: 2 },
      first_step: 0,
      states: [
        [14, 0, 6, 0],
        [17, 0, 6, 0],
        [20, 0, 6, 0],
      ],
      map_feature: null,
    },
  ],
};

function straight(x0: number, v: number, steps: number, dt: number): number[][] {
  const rows: number[][] = [];
  for (let t = 1; t <= steps; t++) {
    rows.push([x0 + v * t * dt, 0, v, 0]);
  }
  return rows;
}

export const unconditioned: PredictResponseJson = {
  schema: "cliquecast.predict_response/1",
  model_hash: "fixturehash00000",
  cliques: [
    {
      schema: "cliquecast.prediction_set/1",
      agents: ["follower", "leader"],
      conditioned: [],
      dt: 0.5,
      footprints: {
        follower: { kind: "rectangle", length: 4, width: 2 },
        leader: { kind: "rectangle", length: 4, width: 2 },
      },
      modes: [
        {
          assignment: { follower: 0, leader: 1 },
          probability: 0.6,
          states: { follower: straight(6, 6, 4, 0.5), leader: straight(20, 6, 4, 0.5) },
          controls: { follower: [[0, 0], [0, 0], [0, 0], [0, 0]], leader: null },
        },
        {
          assignment: { follower: 2, leader: 1 },
          probability: 0.4,
          states: { follower: straight(6, 4, 4, 0.5), leader: straight(20, 6, 4, 0.5) },
          controls: { follower: [[0, 0], [0, 0], [0, 0], [0, 0]], leader: null },
        },
      ],
    },
  ],
};

export const conditioned: PredictResponseJson = {
  schema: "cliquecast.predict_response/1",
  model_hash: "fixturehash00000",
  cliques: [
    {
      schema: "cliquecast.prediction_set/1",
      agents: ["follower", "leader"],
      conditioned: ["leader"],
      dt: 0.5,
      footprints: {
        follower: { kind: "rectangle", length: 4, width: 2 },
        leader: { kind: "rectangle", length: 4, width: 2 },
      },
      modes: [
        {
          assignment: { follower: 0 },
          probability: 1.0,
          states: {
            follower: straight(6, 3, 4, 0.5),
            leader: [
              [22, 0, 4, 0],
              [23, 0, 2, 0],
              [23.5, 0, 0, 0],
              [23.5, 0, 0, 0],
            ],
          },
          controls: { follower: [[0, 0], [0, 0], [0, 0], [0, 0]], leader: null },
        },
      ],
    },
  ],
};
