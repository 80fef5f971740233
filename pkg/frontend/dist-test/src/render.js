/** Scene rendering as a serializable draw-command list.
 *
 * The renderer is pure: state in, commands out. The canvas painter in
 * main.ts executes commands; tests compare serialized command lists. Every
 * trajectory polyline's vertices are exactly the service payload vertices
 * mapped through the affine view (no smoothing, no resampling).
 */
import { snapshotAt } from "./scrub.js";
import { currentState } from "./types.js";
import { worldToScreen } from "./view.js";
// stroke styles per mode index: solid, dashed, dotted, dash-dot
export const MODE_DASHES = [[], [8, 5], [2, 4], [10, 3, 2, 3]];
export const AGENT_COLORS = ["#1768ac", "#c0392b", "#1e8449", "#8e44ad", "#b7950b",
    "#17829c", "#a04000", "#2e4053"];
export function agentColor(index) {
    return AGENT_COLORS[index % AGENT_COLORS.length];
}
export function modeDash(index) {
    return MODE_DASHES[index % MODE_DASHES.length];
}
export function scenePoints(state) {
    const pts = [];
    if (state.scene) {
        for (const agent of state.scene.agents) {
            for (const row of agent.states) {
                pts.push([row[0], row[1]]);
            }
        }
    }
    if (state.prediction) {
        for (const clique of state.prediction.cliques) {
            for (const mode of clique.modes) {
                for (const traj of Object.values(mode.states)) {
                    for (const row of traj) {
                        pts.push([row[0], row[1]]);
                    }
                }
            }
        }
    }
    return pts;
}
function footprintCmds(agent, view, color, selected) {
    const cur = currentState(agent);
    const at = worldToScreen(view, [cur[0], cur[1]]);
    const cmds = [];
    if (agent.footprint.kind === "circle") {
        cmds.push({ kind: "circle", layer: "scene", center: at,
            radius: (agent.footprint.radius ?? 0.3) * view.scale,
            color, fill: true });
    }
    else {
        cmds.push({ kind: "rect", layer: "scene", center: at,
            w: (agent.footprint.length ?? 4) * view.scale,
            h: (agent.footprint.width ?? 2) * view.scale,
            angle: -(cur[3] ?? 0), color });
    }
    if (selected) {
        cmds.push({ kind: "circle", layer: "overlay", center: at,
            radius: 3 + Math.max((agent.footprint.length ?? 1), (agent.footprint.radius ?? 0.3) * 2)
                * view.scale * 0.6,
            color: "#f39c12", fill: false });
    }
    cmds.push({ kind: "label", layer: "scene", at: [at[0] + 6, at[1] - 6],
        text: agent.id, color });
    return cmds;
}
export function render(state, view) {
    const cmds = [];
    if (!state.scene) {
        return cmds;
    }
    const agents = new Map(state.scene.agents.map((a) => [a.id, a]));
    state.scene.agents.forEach((agent, idx) => {
        // observed history as a faint track
        cmds.push({
            kind: "polyline", layer: "scene",
            points: agent.states.map((r) => worldToScreen(view, [r[0], r[1]])),
            color: "#cccccc", width: 1, dash: [],
        });
        cmds.push(...footprintCmds(agent, view, agentColor(idx), state.selected.includes(agent.id)));
    });
    if (!state.prediction) {
        return cmds;
    }
    const colorOf = new Map(state.scene.agents.map((a, i) => [a.id, agentColor(i)]));
    for (const clique of state.prediction.cliques) {
        // clique membership edges between current positions
        for (let i = 0; i < clique.agents.length; i++) {
            for (let j = i + 1; j < clique.agents.length; j++) {
                const a = agents.get(clique.agents[i]);
                const b = agents.get(clique.agents[j]);
                if (!a || !b) {
                    continue;
                }
                const ca = currentState(a);
                const cb = currentState(b);
                cmds.push({
                    kind: "polyline", layer: "cliques",
                    points: [worldToScreen(view, [ca[0], ca[1]]),
                        worldToScreen(view, [cb[0], cb[1]])],
                    color: "#e6c100", width: 1, dash: [4, 4],
                });
            }
        }
        clique.modes.forEach((mode, modeIdx) => {
            if (state.hiddenModes.includes(modeIdx)) {
                return;
            }
            for (const agentId of Object.keys(mode.states).sort()) {
                const traj = mode.states[agentId];
                cmds.push({
                    kind: "polyline", layer: "trajectories",
                    points: traj.map((r) => worldToScreen(view, [r[0], r[1]])),
                    color: colorOf.get(agentId) ?? "#555555",
                    width: clique.conditioned.includes(agentId) ? 2.5 : 1.6,
                    dash: modeDash(modeIdx),
                });
            }
        });
        // scrub glyphs follow the most likely visible mode
        const visible = clique.modes.findIndex((_, i) => !state.hiddenModes.includes(i));
        if (visible >= 0 && state.scrubT > 0) {
            for (const glyph of snapshotAt(clique, agents, visible, state.scrubT)) {
                cmds.push({
                    kind: "circle", layer: "overlay",
                    center: worldToScreen(view, glyph.position),
                    radius: glyph.conditioned ? 6 : 4,
                    color: colorOf.get(glyph.agentId) ?? "#555555",
                    fill: true,
                });
            }
        }
    }
    return cmds;
}
export function layerOf(cmds, layer) {
    return cmds.filter((c) => c.layer === layer);
}
/** Canonical serialization of a command list (for pixel-identity checks). */
export function serializeCmds(cmds) {
    return JSON.stringify(cmds);
}
