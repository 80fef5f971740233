"""Tiny dependency-free SVG emitters for trajectory and metric plots."""

from __future__ import annotations

import numpy as np

MODE_DASHES = [None, "8 5", "2 4", "10 3 2 3"]  # solid, dashed, dotted, dash-dot
PALETTE = ["#1768ac", "#c0392b", "#1e8449", "#8e44ad", "#b7950b", "#17829c"]


def _fmt(x: float) -> str:
    return f"{x:.2f}"


class SvgCanvas:
    def __init__(self, width: int, height: int):
        self.width, self.height = width, height
        self.parts: list[str] = []

    def line(self, x1, y1, x2, y2, stroke="#888", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" '
                          f'y2="{_fmt(y2)}" stroke="{stroke}" stroke-width="{width}"{d}/>')

    def polyline(self, pts, stroke="#000", width=1.5, dash=None):
        if len(pts) < 2:
            return
        d = f' stroke-dasharray="{dash}"' if dash else ""
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in pts)
        self.parts.append(f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
                          f'stroke-width="{width}"{d}/>')

    def circle(self, cx, cy, r, fill="none", stroke="#000", width=1.0):
        self.parts.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(r)}" '
                          f'fill="{fill}" stroke="{stroke}" stroke-width="{width}"/>')

    def rect(self, x, y, w, h, angle_deg=0.0, fill="none", stroke="#000", width=1.0):
        rot = (f' transform="rotate({_fmt(angle_deg)} {_fmt(x + w / 2)} {_fmt(y + h / 2)})"'
               if angle_deg else "")
        self.parts.append(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" '
                          f'height="{_fmt(h)}" fill="{fill}" stroke="{stroke}" '
                          f'stroke-width="{width}"{rot}/>')

    def text(self, x, y, s, size=11, fill="#333", anchor="start"):
        self.parts.append(f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" '
                          f'fill="{fill}" text-anchor="{anchor}" '
                          f'font-family="sans-serif">{s}</text>')

    def render(self) -> str:
        body = "\n".join(self.parts)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
                f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">\n'
                f'<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n')


def line_chart(series: dict[str, list[tuple[float, float]]], title: str,
               x_label: str, y_label: str, width=640, height=420) -> str:
    """Multi-series line chart; series maps label -> [(x, y)] points."""
    cv = SvgCanvas(width, height)
    pad = 56
    xs = [p[0] for pts in series.values() for p in pts]
    ys = [p[1] for pts in series.values() for p in pts]
    if not xs:
        return cv.render()
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(min(ys), 0.0), max(ys)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1

    def tx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def ty(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    cv.line(pad, height - pad, width - pad, height - pad, "#333", 1.2)
    cv.line(pad, pad, pad, height - pad, "#333", 1.2)
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        yv = y0 + frac * (y1 - y0)
        cv.line(pad, ty(yv), width - pad, ty(yv), "#ddd", 0.6)
        cv.text(pad - 6, ty(yv) + 4, f"{yv:.3g}", 10, anchor="end")
        xv = x0 + frac * (x1 - x0)
        cv.text(tx(xv), height - pad + 16, f"{xv:.3g}", 10, anchor="middle")
    for k, (label, pts) in enumerate(sorted(series.items())):
        color = PALETTE[k % len(PALETTE)]
        cv.polyline([(tx(x), ty(y)) for x, y in pts], stroke=color, width=2.0)
        cv.text(width - pad, pad + 14 * (k + 1), label, 11, fill=color, anchor="end")
    cv.text(width / 2, pad / 2, title, 13, anchor="middle")
    cv.text(width / 2, height - 12, x_label, 11, anchor="middle")
    cv.text(14, height / 2, y_label, 11, anchor="middle")
    return cv.render()


def plan_svg(problem, cplan, width=640, height=480) -> str:
    """Top-down view of the planned branches and the predicted agents."""
    cv = SvgCanvas(width, height)
    pts = [cplan.states[:, :, 0:2].reshape(-1, 2), problem.reference[:, 0:2]]
    for mode in problem.modes:
        for traj in mode.trajectories.values():
            pts.append(np.asarray(traj)[:, 0:2])
    allp = np.concatenate(pts, axis=0)
    lo = allp.min(axis=0) - 4.0
    hi = allp.max(axis=0) + 4.0
    span = np.maximum(hi - lo, 1e-6)
    scale = min((width - 40) / span[0], (height - 40) / span[1])

    def txy(p):
        return (20 + (p[0] - lo[0]) * scale, height - 20 - (p[1] - lo[1]) * scale)

    cv.polyline([txy(p) for p in problem.reference[:, 0:2]], stroke="#bbb", width=1.0,
                dash="3 3")
    for k, mode in enumerate(problem.modes):
        dash = MODE_DASHES[k % len(MODE_DASHES)]
        for agent_id in sorted(mode.trajectories):
            cv.polyline([txy(p) for p in np.asarray(mode.trajectories[agent_id])[:, 0:2]],
                        stroke="#c0392b", width=1.5, dash=dash)
        cv.polyline([txy(p) for p in cplan.states[k, :, 0:2]], stroke="#1768ac",
                    width=2.2, dash=dash)
    s0 = txy(problem.ego_state[0:2])
    cv.circle(s0[0], s0[1], 4, fill="#1768ac")
    cv.text(20, 18, f"cost={cplan.cost:.3f} max_violation={cplan.max_violation:.2g} "
                    f"feasible={cplan.feasible}", 11)
    return cv.render()


def scene_svg(scene_doc: dict, psets: list[dict] | None = None,
              width=640, height=480) -> str:
    """Render a scene JSON document (and optional prediction sets)."""
    cv = SvgCanvas(width, height)
    pts = [np.asarray(a["states"])[:, 0:2] for a in scene_doc["agents"]]
    if psets:
        for ps in psets:
            for mode in ps["modes"]:
                pts.extend(np.asarray(tr)[:, 0:2] for tr in mode["states"].values())
    allp = np.concatenate(pts, axis=0)
    lo, hi = allp.min(axis=0) - 3.0, allp.max(axis=0) + 3.0
    span = np.maximum(hi - lo, 1e-6)
    scale = min((width - 40) / span[0], (height - 40) / span[1])

    def txy(p):
        return (20 + (p[0] - lo[0]) * scale, height - 20 - (p[1] - lo[1]) * scale)

    for k, agent in enumerate(scene_doc["agents"]):
        color = PALETTE[k % len(PALETTE)]
        states = np.asarray(agent["states"])
        cv.polyline([txy(p) for p in states[:, 0:2]], stroke=color, width=1.2)
        x, y = txy(states[-1, 0:2])
        cv.circle(x, y, 3.5, fill=color)
        cv.text(x + 5, y - 5, agent["id"], 10, fill=color)
    if psets:
        for ps in psets:
            for m, mode in enumerate(ps["modes"]):
                dash = MODE_DASHES[m % len(MODE_DASHES)]
                for agent_id, traj in sorted(mode["states"].items()):
                    cv.polyline([txy(p) for p in np.asarray(traj)[:, 0:2]],
                                stroke="#555", width=1.4, dash=dash)
    return cv.render()
