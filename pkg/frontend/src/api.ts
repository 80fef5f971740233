/** JSON API client with latest-wins cancellation for /predict. */

import {
  DirectiveJson,
  PredictResponseJson,
  SceneJson,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private inflight: AbortController | null = null;

  constructor(
    private base: string,
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async json(url: string, init?: RequestInit): Promise<unknown> {
    const resp = await this.fetchImpl(this.base + url, init);
    const body = await resp.text();
    if (!resp.ok) {
      let message = body;
      try {
        message = (JSON.parse(body) as { error?: string }).error ?? body;
      } catch {
        // plain-text error body
      }
      throw new ApiError(resp.status, message);
    }
    return JSON.parse(body);
  }

  async health(): Promise<{ status: string; model_hash: string }> {
    return (await this.json("/health")) as { status: string; model_hash: string };
  }

  async scenes(): Promise<SceneJson[]> {
    const doc = (await this.json("/scenes")) as { scenes: SceneJson[] };
    return doc.scenes;
  }

  /**
   * Request a prediction; any still-running predict request is aborted so
   * the newest parameters always win.
   */
  async predict(
    scene: SceneJson,
    k: number,
    beta: number,
    conditioning: DirectiveJson[],
  ): Promise<PredictResponseJson> {
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
      return doc as PredictResponseJson;
    } finally {
      if (this.inflight === controller) {
        this.inflight = null;
      }
    }
  }
}
