/** Time scrubbing: purely client-side interpolation of predicted states. */

import { PredictionSetJson, SceneAgentJson, currentState } from "./types.js";

/**
 * Interpolated (x, y) of one agent at time t seconds into the future.
 *
 * trajectory rows are the future steps 1..T at spacing dt; t = 0 is the
 * agent's current position. Beyond the horizon the final position holds.
 */
export function positionAt(
  current: [number, number],
  trajectory: number[][],
  dt: number,
  t: number,
): [number, number] {
  if (trajectory.length === 0 || t <= 0) {
    return current;
  }
  const steps = trajectory.length;
  const k = t / dt; // fractional step index, step i covers time i*dt
  if (k >= steps) {
    return [trajectory[steps - 1][0], trajectory[steps - 1][1]];
  }
  const hi = Math.ceil(k);
  const lo = hi - 1;
  const frac = k - lo;
  const a = lo === 0 ? current : [trajectory[lo - 1][0], trajectory[lo - 1][1]];
  const b = trajectory[hi - 1];
  return [a[0] + (b[0] - a[0]) * frac, a[1] + (b[1] - a[1]) * frac];
}

export interface Glyph {
  agentId: string;
  position: [number, number];
  conditioned: boolean;
}

/** Glyph positions for one clique at scrub time t under a selected mode. */
export function snapshotAt(
  clique: PredictionSetJson,
  agents: Map<string, SceneAgentJson>,
  modeIndex: number,
  t: number,
): Glyph[] {
  const mode = clique.modes[Math.min(modeIndex, clique.modes.length - 1)];
  const out: Glyph[] = [];
  for (const agentId of clique.agents) {
    const sceneAgent = agents.get(agentId);
    if (!sceneAgent) {
      continue;
    }
    const cur = currentState(sceneAgent);
    const pos = positionAt(
      [cur[0], cur[1]],
      mode.states[agentId] ?? [],
      clique.dt,
      t,
    );
    out.push({
      agentId,
      position: pos,
      conditioned: clique.conditioned.includes(agentId),
    });
  }
  return out;
}
