"""Differentiable collision margins and the collision penalty regularizer.

Pedestrians are circles, vehicles are rectangles. Margins are signed:
negative means the pair is declared in collision. Rectangle checks run in
the rectangle's local frame. All functions accept numpy inputs or autodiff
Values, so the penalty can sit inside a training loss.

Vehicle-vehicle note: the corner formulation as commonly printed (one max
over all eight corner terms) only goes negative under full containment; here
the margin is the min over probe points (corners plus center) of the
per-point max, evaluated both ways, so any corner or center of either
rectangle inside the other flags a collision. Exact polygon intersection for
pure edge-edge crossings is out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Value

_EPS = 1e-12  # keeps sqrt differentiable at zero separation


@dataclass(frozen=True)
class Circle:
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "radius", float(self.radius))
        if self.radius <= 0:
            raise ValueError("radius must be positive")


@dataclass(frozen=True)
class Rectangle:
    length: float
    width: float

    def __post_init__(self):
        object.__setattr__(self, "length", float(self.length))
        object.__setattr__(self, "width", float(self.width))
        if self.length <= 0 or self.width <= 0:
            raise ValueError("rectangle extents must be positive")


Footprint = Circle | Rectangle


def col_point_rect(dx, dy, length, width):
    """Signed margin of a point in a rectangle's local frame.

    max(|dx| - L/2, |dy| - W/2): negative iff the point is inside.
    """
    return ad.maximum(ad.absolute(dx) - 0.5 * length, ad.absolute(dy) - 0.5 * width)


def _pos(state):
    return state[..., 0:2]


def _heading_cs(state):
    psi = state[..., 3:4] if isinstance(state, Value) else np.asarray(state)[..., 3:4]
    return ad.cos(psi), ad.sin(psi)


def _to_local(state_rect, point):
    """Rotate/translate a global point into the rectangle state's frame."""
    d = point - _pos(state_rect)
    c, s = _heading_cs(state_rect)
    dx = c * d[..., 0:1] + s * d[..., 1:2]
    dy = -s * d[..., 0:1] + c * d[..., 1:2]
    return dx, dy


def _dist(a, b):
    d = a - b
    return ad.sqrt((d * d).sum(axis=-1, keepdims=True) + _EPS)


def _probe_points(state, rect: Rectangle):
    """Corner points plus the center of a rectangle footprint (global frame).

    The center probe makes full-overlap configurations (where corners sit
    exactly on the other boundary, e.g. coincident identical rectangles)
    report a strictly negative margin.
    """
    c, s = _heading_cs(state)
    half_l, half_w = 0.5 * rect.length, 0.5 * rect.width
    pts = [_pos(state)]
    for sx, sy in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        lx, ly = sx * half_l, sy * half_w
        gx = _pos(state)[..., 0:1] + c * lx - s * ly
        gy = _pos(state)[..., 1:2] + s * lx + c * ly
        pts.append(ad.concat([gx, gy], axis=-1) if isinstance(gx, Value)
                   else np.concatenate([gx, gy], axis=-1))
    return pts


def _rect_rect_margin(state_i, rect_i, state_j, rect_j):
    margin = None
    for state_a, rect_a, state_b, rect_b in ((state_i, rect_i, state_j, rect_j),
                                             (state_j, rect_j, state_i, rect_i)):
        for point in _probe_points(state_b, rect_b):
            dx, dy = _to_local(state_a, point)
            m = col_point_rect(dx, dy, rect_a.length, rect_a.width)
            margin = m if margin is None else ad.minimum(margin, m)
    return margin


def col_pair(state_i, footprint_i: Footprint, state_j, footprint_j: Footprint):
    """Signed collision margin between two agents; negative means collision.

    Circle-circle: center distance minus summed radii. Rectangle-circle: the
    point-in-rectangle margin of the circle center in the rectangle frame,
    inflated by the radius. Rectangle-rectangle: two-way corner containment.
    States are (..., 4) arrays or Values; returns shape (..., 1).
    """
    ci, cj = isinstance(footprint_i, Circle), isinstance(footprint_j, Circle)
    if ci and cj:
        return _dist(_pos(state_i), _pos(state_j)) - (footprint_i.radius + footprint_j.radius)
    if ci and not cj:
        return col_pair(state_j, footprint_j, state_i, footprint_i)
    if not ci and cj:
        dx, dy = _to_local(state_i, _pos(state_j))
        return col_point_rect(dx, dy, footprint_i.length, footprint_i.width) - footprint_j.radius
    return _rect_rect_margin(state_i, footprint_i, state_j, footprint_j)


def pair_step_penalty(state_i, footprint_i, state_j, footprint_j,
                      sharpness: float = 10.0, buffer: float = 0.0):
    """Smoothed hinge on the margin shortfall at one timestep.

    softplus(k * (buffer - margin)) / k: ~0 once the margin clears the
    buffer, grows linearly with penetration depth.
    """
    margin = col_pair(state_i, footprint_i, state_j, footprint_j)
    return ad.softplus(sharpness * (buffer - margin)) * (1.0 / sharpness)


def collision_penalty(trajectories, footprints, sharpness: float = 10.0,
                      buffer: float = 0.0):
    """Total smoothed collision penalty over agent pairs and timesteps.

    trajectories: per-agent sequences sharing timestamps. Each entry is
    either a (T, 4) array or a list of per-step states ((..., 4) arrays or
    Values). Returns a scalar (Value if any input is a Value), >= 0, zero to
    numerical precision when every pairwise margin clears the buffer.
    """
    seqs = [list(tr) if not isinstance(tr, np.ndarray) else [tr[t] for t in range(tr.shape[0])]
            for tr in trajectories]
    n = len(seqs)
    if n != len(footprints):
        raise ValueError("one footprint per trajectory required")
    steps = {len(s) for s in seqs}
    if len(steps) > 1:
        raise ValueError("trajectories must share timestamps")
    total = None
    for i in range(n):
        for j in range(i + 1, n):
            for t in range(len(seqs[i])):
                p = pair_step_penalty(seqs[i][t], footprints[i], seqs[j][t], footprints[j],
                                      sharpness, buffer)
                p = p.sum() if isinstance(p, Value) else np.sum(p)
                total = p if total is None else total + p
    if total is None:
        return Value(0.0) if any(isinstance(s, Value) for seq in seqs for s in seq) else 0.0
    return total


def penalty_per_mode(step_states, footprints, sharpness: float = 10.0,
                     buffer: float = 0.0):
    """Batched penalty for mode-parallel rollouts.

    step_states: per-agent list of per-step (B, 4) Values; returns a (B,)
    Value with one penalty per batch row (prediction mode). Timesteps are
    stacked before the margin evaluation, which changes nothing numerically
    (margins are per-row) but keeps the graph small.
    """
    n = len(step_states)
    if n < 2 or not step_states[0]:
        batch = step_states[0][0].data.shape[0] if n and step_states[0] else 1
        return Value(np.zeros(batch))
    steps = len(step_states[0])
    batch = step_states[0][0].data.shape[0]
    stacked = [ad.concat(seq, axis=0) if steps > 1 else seq[0] for seq in step_states]
    total = None
    for i in range(n):
        for j in range(i + 1, n):
            margin = col_pair(stacked[i], footprints[i], stacked[j], footprints[j])
            pen = ad.softplus(sharpness * (buffer - margin)) * (1.0 / sharpness)
            per_mode = pen.reshape(steps, batch).sum(axis=0)
            total = per_mode if total is None else total + per_mode
    return total
