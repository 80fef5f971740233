/** Wire types mirroring the service JSON schemas (scene/1, prediction_set/1). */

export interface FootprintJson {
  kind: "rectangle" | "circle";
  length?: number;
  width?: number;
  radius?: number;
}

export interface SceneAgentJson {
  id: string;
  type: "vehicle" | "pedestrian";
  footprint: FootprintJson;
  first_step: number;
  states: number[][]; // rows of [x, y, v, psi] or [x, y, vx, vy]
  map_feature: number[] | null;
}

export interface SceneJson {
  schema: string;
  scene_id: string;
  dt: number;
  label: string | null;
  agents: SceneAgentJson[];
}

export interface PredictionModeJson {
  assignment: Record<string, number>;
  probability: number;
  states: Record<string, number[][]>;
  controls: Record<string, number[][] | null>;
}

export interface PredictionSetJson {
  schema: string;
  agents: string[];
  conditioned: string[];
  dt: number;
  footprints: Record<string, FootprintJson>;
  modes: PredictionModeJson[];
}

export interface PredictResponseJson {
  schema: string;
  model_hash: string;
  cliques: PredictionSetJson[];
}

export type DirectiveJson =
  | { agent_id: string; maneuver: "brake" | "accelerate"; accel: number }
  | { agent_id: string; trajectory: number[][] };

export function directiveAgent(d: DirectiveJson): string {
  return d.agent_id;
}

export function currentState(agent: SceneAgentJson): number[] {
  return agent.states[agent.states.length - 1];
}
