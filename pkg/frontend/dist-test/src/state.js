/** View state and its pure update functions.
 *
 * The UI holds no model semantics: everything rendered comes from the scene
 * document and the latest service response. Updates return new state objects
 * so they stay trivially testable.
 */
import { directiveAgent, } from "./types.js";
export function initialState() {
    return {
        scene: null,
        selected: [],
        directives: [],
        prediction: null,
        hiddenModes: [],
        k: 3,
        beta: 1,
        scrubT: 0,
        status: "no scene loaded",
    };
}
export function loadScene(state, scene) {
    return {
        ...initialState(),
        k: state.k,
        beta: state.beta,
        scene,
        status: `scene ${scene.scene_id} loaded`,
    };
}
export function toggleSelect(state, agentId) {
    if (!state.scene || !state.scene.agents.some((a) => a.id === agentId)) {
        return state;
    }
    const selected = state.selected.includes(agentId)
        ? state.selected.filter((x) => x !== agentId)
        : [...state.selected, agentId];
    return { ...state, selected };
}
/** Add or replace the directive for its agent; unknown agents are rejected. */
export function setDirective(state, directive) {
    const agent = directiveAgent(directive);
    if (!state.scene || !state.scene.agents.some((a) => a.id === agent)) {
        return { ...state, status: `unknown agent ${agent}` };
    }
    const directives = [
        ...state.directives.filter((d) => directiveAgent(d) !== agent),
        directive,
    ];
    return { ...state, directives };
}
export function removeDirective(state, agentId) {
    return {
        ...state,
        directives: state.directives.filter((d) => directiveAgent(d) !== agentId),
    };
}
export function clearDirectives(state) {
    return { ...state, directives: [] };
}
export function setPrediction(state, prediction) {
    return {
        ...state,
        prediction,
        hiddenModes: [],
        scrubT: 0,
        status: `${prediction.cliques.length} clique(s) predicted`,
    };
}
export function setStatus(state, status) {
    return { ...state, status };
}
export function toggleMode(state, modeIndex) {
    const hiddenModes = state.hiddenModes.includes(modeIndex)
        ? state.hiddenModes.filter((m) => m !== modeIndex)
        : [...state.hiddenModes, modeIndex];
    return { ...state, hiddenModes };
}
export function setScrub(state, t) {
    return { ...state, scrubT: Math.max(0, t) };
}
export function setSampling(state, k, beta) {
    return { ...state, k: Math.max(1, Math.round(k)), beta: Math.max(0, Math.round(beta)) };
}
/** Longest predicted horizon in seconds, for the scrubber range. */
export function horizonSeconds(state) {
    if (!state.prediction) {
        return 0;
    }
    let best = 0;
    for (const clique of state.prediction.cliques) {
        for (const mode of clique.modes) {
            for (const traj of Object.values(mode.states)) {
                best = Math.max(best, traj.length * clique.dt);
            }
        }
    }
    return best;
}
