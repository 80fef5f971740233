/** JSON API client with latest-wins cancellation for /predict. */
export class ApiError extends Error {
    constructor(status, message) {
        super(message);
        this.status = status;
    }
}
export class ApiClient {
    constructor(base, fetchImpl = (...args) => fetch(...args)) {
        this.base = base;
        this.fetchImpl = fetchImpl;
        this.inflight = null;
    }
    async json(url, init) {
        const resp = await this.fetchImpl(this.base + url, init);
        const body = await resp.text();
        if (!resp.ok) {
            let message = body;
            try {
                message = JSON.parse(body).error ?? body;
            }
            catch {
                // plain-text error body
            }
            throw new ApiError(resp.status, message);
        }
        return JSON.parse(body);
    }
    async health() {
        return (await this.json("/health"));
    }
    async scenes() {
        const doc = (await this.json("/scenes"));
        return doc.scenes;
    }
    /**
     * Request a prediction; any still-running predict request is aborted so
     * the newest parameters always win.
     */
    async predict(scene, k, beta, conditioning) {
        if (this.inflight) {
            this.inflight.abort();
        }
        const controller = new AbortController();
        this.inflight = controller;
        try {
            const doc = await this.json("/predict", {
                method: "POST",
                headers: { "Content-Type": "application/json" },
                body: JSON.stringify({ scene, k, beta, conditioning }),
                signal: controller.signal,
            });
            return doc;
        }
        finally {
            if (this.inflight === controller) {
                this.inflight = null;
            }
        }
    }
}
