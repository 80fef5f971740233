/** Wire types mirroring the service JSON schemas (scene/1, prediction_set/1). */
export function directiveAgent(d) {
    return d.agent_id;
}
export function currentState(agent) {
    return agent.states[agent.states.length - 1];
}
