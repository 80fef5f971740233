"""Evaluation metrics: ADE/FDE (most-likely and Best-of-N), collision rate
per horizon, and mode-usage statistics.

Best-of-N takes the N highest-probability modes (capped by how many modes
exist) and reports the minimum joint error; errors are averaged over the
clique's agents inside the minimum, because modes are joint. Collision rate
is cumulative by horizon: an agent counts as collided at horizon h if its
most-likely-mode trajectory has a negative pairwise margin at any step up to
and including h.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import col_pair
from .policy import PredictionMode, PredictionSet


@dataclass
class MetricsReport:
    ade: float
    fde: float
    bon: dict[int, tuple[float, float]] = field(default_factory=dict)  # N -> (ADE, FDE)
    by_horizon: dict[float, tuple[float, float]] = field(default_factory=dict)
    collision_rate: dict[float, float] = field(default_factory=dict)   # horizon s -> rate
    modes_used: dict[int, int] = field(default_factory=dict)           # #modes -> count

    def to_json(self) -> str:
        payload = {
            "ade": self.ade,
            "fde": self.fde,
            "best_of_n": {str(n): {"ade": a, "fde": f} for n, (a, f) in sorted(self.bon.items())},
            "by_horizon": {str(h): {"ade": a, "fde": f}
                           for h, (a, f) in sorted(self.by_horizon.items())},
            "collision_rate": {str(h): r for h, r in sorted(self.collision_rate.items())},
            "modes_used": {str(k): v for k, v in sorted(self.modes_used.items())},
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["metric", "key", "value"])
        writer.writerow(["ade", "", f"{self.ade:.9g}"])
        writer.writerow(["fde", "", f"{self.fde:.9g}"])
        for n, (a, f) in sorted(self.bon.items()):
            writer.writerow(["bon_ade", n, f"{a:.9g}"])
            writer.writerow(["bon_fde", n, f"{f:.9g}"])
        for h, (a, f) in sorted(self.by_horizon.items()):
            writer.writerow(["ade_at", h, f"{a:.9g}"])
            writer.writerow(["fde_at", h, f"{f:.9g}"])
        for h, r in sorted(self.collision_rate.items()):
            writer.writerow(["collision_rate", h, f"{r:.9g}"])
        for k, v in sorted(self.modes_used.items()):
            writer.writerow(["modes_used", k, v])
        return buf.getvalue()


def _mode_errors(mode: PredictionMode, ground_truth: dict[str, np.ndarray]):
    """(average, final) position error of one joint mode across its agents."""
    avg, fin = [], []
    for agent_id, gt in ground_truth.items():
        pred = mode.states[agent_id]
        gt = np.asarray(gt)
        if pred.shape[0] < gt.shape[0]:
            raise ValueError(f"prediction horizon {pred.shape[0]} shorter than "
                             f"ground truth {gt.shape[0]} for agent {agent_id}")
        steps = gt.shape[0]
        err = np.linalg.norm(pred[:steps, 0:2] - gt[:, 0:2], axis=1)
        avg.append(err.mean())
        fin.append(err[-1])
    return float(np.mean(avg)), float(np.mean(fin))


def ade_fde(modes: list[PredictionMode], ground_truth: dict[str, np.ndarray],
            n: int = 1) -> tuple[float, float]:
    """Best-of-N displacement errors over the first min(n, len(modes)) modes.

    modes must be probability-descending. Returns (ADE, FDE), each minimized
    over modes independently.
    """
    if not modes:
        raise ValueError("no prediction modes given")
    take = min(n, len(modes))
    pairs = [_mode_errors(m, ground_truth) for m in modes[:take]]
    return min(p[0] for p in pairs), min(p[1] for p in pairs)


def displacement_by_horizon(modes: list[PredictionMode],
                            ground_truth: dict[str, np.ndarray], dt: float,
                            horizons: list[float], n: int = 1
                            ) -> dict[float, tuple[float, float]]:
    """Most-likely-mode (ADE, FDE) truncated at each horizon in seconds."""
    out = {}
    for h in horizons:
        steps = max(1, min(int(round(h / dt)),
                           min(len(g) for g in ground_truth.values())))
        cut = {a: np.asarray(g)[:steps] for a, g in ground_truth.items()}
        out[h] = ade_fde(modes, cut, n)
    return out


def collision_rate(prediction_sets: list[PredictionSet], horizons: list[float],
                   buffer: float = 0.0, any_mode: bool = False) -> dict[float, float]:
    """Fraction of predicted agents in collision at or before each horizon.

    Uses the most-likely mode per set (or every mode with any_mode=True,
    flagging an agent if any sampled mode collides). Cumulative by horizon,
    so the rate is non-decreasing.
    """
    horizons = sorted(horizons)
    collided_at = {h: 0 for h in horizons}
    total_agents = 0
    for pset in prediction_sets:
        agents = pset.agent_ids
        total_agents += len(agents)
        modes = pset.modes if any_mode else pset.modes[:1]
        first_collision = {a: np.inf for a in agents}
        for mode in modes:
            steps = min(len(mode.states[a]) for a in agents)
            for i in range(len(agents)):
                for j in range(i + 1, len(agents)):
                    ai, aj = agents[i], agents[j]
                    fi, fj = pset.footprints[ai], pset.footprints[aj]
                    for t in range(steps):
                        m = col_pair(mode.states[ai][t], fi, mode.states[aj][t], fj)
                        if float(np.min(m)) < buffer:
                            when = (t + 1) * pset.dt
                            first_collision[ai] = min(first_collision[ai], when)
                            first_collision[aj] = min(first_collision[aj], when)
                            break
        for h in horizons:
            collided_at[h] += sum(1 for a in agents if first_collision[a] <= h + 1e-9)
    if total_agents == 0:
        return {h: 0.0 for h in horizons}
    return {h: collided_at[h] / total_agents for h in horizons}


def bon_curve(windows, predictor, n_max: int) -> list[tuple[int, float]]:
    """FDE as a function of the number of modes N = 1..n_max.

    predictor(clique, k, beta) must return a PredictionSet with modes
    probability-descending; beta=0 is used so the N modes are exactly the
    top-N. Emitted as a plottable (N, FDE) table, non-increasing in N.
    """
    per_window = []
    for window in windows:
        pset = predictor(window.clique, n_max, 0)
        gt = {a.id: a.future[:, 0:2] for a in window.clique.agents}
        per_window.append((pset.modes, gt))
    curve = []
    for n in range(1, n_max + 1):
        fdes = [ade_fde(modes, gt, n)[1] for modes, gt in per_window]
        curve.append((n, float(np.mean(fdes))))
    return curve


def modes_histogram(prediction_sets: list[PredictionSet]) -> dict[int, int]:
    hist: dict[int, int] = {}
    for pset in prediction_sets:
        k = len(pset.modes)
        hist[k] = hist.get(k, 0) + 1
    return hist
