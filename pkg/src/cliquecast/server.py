"""JSON-over-HTTP service: /predict, /plan, /scenes, /health.

Stateless request handling over an immutable model snapshot; identical
request bodies produce byte-identical response bodies (wall-clock timing is
reported in the X-Timing-Ms response header so the body stays
deterministic). CORS is open so the explorer UI can be served from anywhere.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import schemas, service
from .data import Scene, SynthSpec, synth_scenarios
from .model import CliqueModel
from .planner import plan


@dataclass
class ServiceState:
    model: CliqueModel | None
    scenes: list[Scene] = field(default_factory=list)

    def model_hash(self) -> str:
        return self.model.weights_hash() if self.model is not None else ""


def demo_scenes(seed: int = 7) -> list[Scene]:
    """Small bundled scene set for the explorer UI."""
    out = []
    out.extend(synth_scenarios(SynthSpec("car_following", 2, length=12), seed=seed))
    out.extend(synth_scenarios(SynthSpec("intersection_yield_or_go", 2, length=12),
                               seed=seed + 1))
    out.extend(synth_scenarios(SynthSpec("crossing_pedestrians", 1, length=12),
                               seed=seed + 2))
    for i, scene in enumerate(out):
        scene.scene_id = f"demo-{i}-{scene.scene_id}"
    return out


class _Handler(BaseHTTPRequestHandler):
    server_version = "cliquecast/0.1"

    # -- plumbing --------------------------------------------------------
    @property
    def state(self) -> ServiceState:
        return self.server.state

    def log_message(self, fmt, *args):
        if getattr(self.server, "verbose", False):
            super().log_message(fmt, *args)

    def _send(self, code: int, payload: dict, started: float | None = None):
        body = schemas.dumps(payload).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        if started is not None:
            self.send_header("X-Timing-Ms", f"{(time.monotonic() - started) * 1e3:.1f}")
        self.end_headers()
        self.wfile.write(body)

    def _error(self, code: int, message: str):
        self._send(code, {"error": message})

    def _read_json(self) -> dict:
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length)
        return schemas.loads(raw)

    # -- routes ----------------------------------------------------------
    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()

    def do_GET(self):
        if self.path == "/health":
            if self.state.model is None:
                self._error(503, "no checkpoint loaded")
                return
            self._send(200, {"status": "ok", "model_hash": self.state.model_hash(),
                             "schemas": ["cliquecast.scene/1",
                                         "cliquecast.prediction_set/1",
                                         "cliquecast.plan/1"]})
        elif self.path == "/scenes":
            self._send(200, {"schema": "cliquecast.scene_list/1",
                             "scenes": [schemas.scene_to_json(s) for s in self.state.scenes]})
        else:
            self._error(404, f"unknown path {self.path}")

    def do_POST(self):
        started = time.monotonic()
        try:
            doc = self._read_json()
        except schemas.SchemaError as err:
            self._error(400, str(err))
            return
        if self.path == "/predict":
            self._predict(doc, started)
        elif self.path == "/plan":
            self._plan(doc, started)
        else:
            self._error(404, f"unknown path {self.path}")

    def _predict(self, doc: dict, started: float):
        if self.state.model is None:
            self._error(503, "no checkpoint loaded")
            return
        try:
            scene = schemas.scene_from_json(doc.get("scene", {}))
            directives = [service.Directive.from_json(d)
                          for d in doc.get("conditioning", [])]
            request = service.PredictRequest(scene=scene, k=int(doc.get("k", 3)),
                                             beta=int(doc.get("beta", 1)),
                                             directives=directives)
        except (schemas.SchemaError, ValueError, KeyError, TypeError) as err:
            self._error(400, f"malformed predict request: {err}")
            return
        try:
            psets = service.run_prediction(self.state.model, request)
        except service.UnknownAgentError as err:
            self._error(422, f"unknown agent id: {err.args[0]}")
            return
        except ValueError as err:
            self._error(400, str(err))
            return
        self._send(200, {
            "schema": "cliquecast.predict_response/1",
            "model_hash": self.state.model_hash(),
            "cliques": [schemas.prediction_set_to_json(p) for p in psets],
        }, started)

    def _plan(self, doc: dict, started: float):
        try:
            problem = schemas.plan_problem_from_json(doc)
        except (schemas.SchemaError, ValueError, KeyError, TypeError) as err:
            self._error(400, f"malformed plan request: {err}")
            return
        result = plan(problem)
        self._send(200, {"schema": "cliquecast.plan_response/1",
                         "plan": schemas.plan_to_json(result)}, started)


def make_server(host: str, port: int, state: ServiceState,
                verbose: bool = False) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), _Handler)
    server.state = state
    server.verbose = verbose
    return server


def serve_forever(host: str, port: int, state: ServiceState, verbose: bool = True):
    server = make_server(host, port, state, verbose)
    try:
        server.serve_forever()
    finally:
        server.server_close()
