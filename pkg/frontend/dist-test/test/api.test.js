import assert from "node:assert/strict";
import { test } from "node:test";
import { ApiClient } from "../src/api.js";
import { scene, unconditioned } from "./fixtures.js";
function okResponse(payload) {
    return new Response(JSON.stringify(payload), {
        status: 200,
        headers: { "Content-Type": "application/json" },
    });
}
test("predict resolves the parsed response", async () => {
    const api = new ApiClient("http://svc", async (url, init) => {
        assert.equal(url, "http://svc/predict");
        const body = JSON.parse(String(init?.body));
        assert.equal(body.k, 3);
        assert.equal(body.scene.scene_id, "fixture-0");
        return okResponse(unconditioned);
    });
    const resp = await api.predict(scene, 3, 1, []);
    assert.equal(resp.cliques.length, 1);
});
test("a newer predict aborts the one in flight (latest wins)", async () => {
    const seen = [];
    const api = new ApiClient("http://svc", (url, init) => {
        const signal = init?.signal;
        seen.push(signal);
        return new Promise((resolve, reject) => {
            const finish = () => resolve(okResponse(unconditioned));
            if (seen.length === 1) {
                // first request: hangs until aborted
                signal.addEventListener("abort", () => reject(new DOMException("aborted", "AbortError")));
            }
            else {
                setTimeout(finish, 1);
            }
        });
    });
    const first = api.predict(scene, 1, 0, []);
    const second = api.predict(scene, 2, 0, []);
    await assert.rejects(first, (err) => err.name === "AbortError");
    const resp = await second;
    assert.equal(resp.schema, "cliquecast.predict_response/1");
    assert.ok(seen[0].aborted);
    assert.ok(!seen[1].aborted);
});
test("service errors surface status and message", async () => {
    const api = new ApiClient("http://svc", async () => new Response(JSON.stringify({ error: "unknown agent id: ghost" }), { status: 422 }));
    await assert.rejects(api.predict(scene, 1, 0, []), (err) => {
        assert.equal(err.status, 422);
        assert.match(err.message, /ghost/);
        return true;
    });
});
