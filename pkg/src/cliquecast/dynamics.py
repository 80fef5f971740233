"""Differentiable, input-bounded agent dynamics.

Vehicles follow a kinematic unicycle (Dubins-style) model with state
[X, Y, v, psi]; pedestrians a double integrator with state [X, Y, vx, vy].
Both use explicit Euler updates and both are plain compositions of
differentiable primitives, so the same formulas run on numpy arrays and on
autodiff Values.

Action bounds: vehicle accel in [-5, 5], yaw rate in [-1, 1]; pedestrian
accel components in [-5, 5]. (The source convention prints the accel bound
with velocity units; the numeric values are implemented as printed and the
unit reading here is m/s^2.) Vehicle speed may go negative (reversing is not
forbidden).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Value

VEHICLE = "vehicle"
PEDESTRIAN = "pedestrian"
AGENT_TYPES = (VEHICLE, PEDESTRIAN)

STATE_DIM = 4
ACTION_DIM = 2

# per-component action bounds
ACTION_BOUNDS = {
    VEHICLE: np.array([5.0, 1.0]),
    PEDESTRIAN: np.array([5.0, 5.0]),
}

# Sharpness of the smooth clamp, in units of the bound. 14 keeps the map
# within 1e-3 of identity at half the bound while reaching the bound to 1e-6
# at twice the bound; gradient at the bound itself is 0.5 (a hard clamp's is
# 0), decaying exponentially deeper into saturation.
_CLAMP_SHARPNESS = 14.0


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    speed: float
    heading: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.speed, self.heading])

    @staticmethod
    def from_array(a) -> "VehicleState":
        return VehicleState(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass(frozen=True)
class PedestrianState:
    x: float
    y: float
    vx: float
    vy: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy])

    @staticmethod
    def from_array(a) -> "PedestrianState":
        return PedestrianState(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass(frozen=True)
class ControlInput:
    """Two control components; meaning depends on agent type.

    vehicle: (accel, yaw_rate); pedestrian: (accel_x, accel_y).
    """
    first: float
    second: float

    def as_array(self) -> np.ndarray:
        return np.array([self.first, self.second])


def _smooth_clamp(x, bound: float):
    """Saturate x into [-bound, bound] while staying differentiable.

    Identity to ~1e-5 inside half the bound, approaches the bound for large
    inputs, and never exceeds it. Built from two softplus shoulders so the
    gradient stays usable right at saturation (a hard clamp would zero it).
    """
    k = _CLAMP_SHARPNESS / bound
    upper = ad.softplus(k * (x - bound)) * (1.0 / k)
    lower = ad.softplus(-k * (x + bound)) * (1.0 / k)
    out = x - upper + lower
    # exact guard: float cancellation at huge |x| can leak past the bound
    return ad.minimum(ad.maximum(out, -bound), bound)


def clamp_action(raw, agent_type: str):
    """Componentwise smooth clamp of a raw action to the type's bounds.

    Accepts (..., 2) numpy arrays or Values; the output always lies strictly
    inside the bounds for any finite input.
    """
    b = ACTION_BOUNDS[agent_type]
    if isinstance(raw, Value):
        a0 = _smooth_clamp(raw[..., 0:1], b[0])
        a1 = _smooth_clamp(raw[..., 1:2], b[1])
        return ad.concat([a0, a1], axis=-1)
    raw = np.asarray(raw, dtype=np.float64)
    out = np.empty_like(raw)
    out[..., 0] = _smooth_clamp(raw[..., 0], b[0])
    out[..., 1] = _smooth_clamp(raw[..., 1], b[1])
    return out


def step(state, action, dt: float, agent_type: str):
    """One Euler step of the agent dynamics.

    state (..., 4), action (..., 2); returns the next state with the same
    shape. Works on numpy arrays and autodiff Values; gradients flow through
    both state and action. Actions are assumed already clamped.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if isinstance(state, Value) or isinstance(action, Value):
        return _step_value(ad.as_value(state), ad.as_value(action), dt, agent_type)
    state = np.asarray(state, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    if not (np.all(np.isfinite(state)) and np.all(np.isfinite(action))):
        raise FloatingPointError("non-finite state or action")
    out = np.empty_like(state)
    if agent_type == VEHICLE:
        x, y, v, psi = state[..., 0], state[..., 1], state[..., 2], state[..., 3]
        out[..., 0] = x + v * np.cos(psi) * dt
        out[..., 1] = y + v * np.sin(psi) * dt
        out[..., 2] = v + action[..., 0] * dt
        out[..., 3] = psi + action[..., 1] * dt
    elif agent_type == PEDESTRIAN:
        out[..., 0] = state[..., 0] + state[..., 2] * dt
        out[..., 1] = state[..., 1] + state[..., 3] * dt
        out[..., 2] = state[..., 2] + action[..., 0] * dt
        out[..., 3] = state[..., 3] + action[..., 1] * dt
    else:
        raise ValueError(f"unknown agent type {agent_type!r}")
    return out


def _step_value(state: Value, action: Value, dt: float, agent_type: str) -> Value:
    if agent_type == VEHICLE:
        x = state[..., 0:1]
        y = state[..., 1:2]
        v = state[..., 2:3]
        psi = state[..., 3:4]
        nx = x + v * ad.cos(psi) * dt
        ny = y + v * ad.sin(psi) * dt
        nv = v + action[..., 0:1] * dt
        npsi = psi + action[..., 1:2] * dt
        return ad.concat([nx, ny, nv, npsi], axis=-1)
    if agent_type == PEDESTRIAN:
        pos = state[..., 0:2] + state[..., 2:4] * dt
        vel = state[..., 2:4] + action * dt
        return ad.concat([pos, vel], axis=-1)
    raise ValueError(f"unknown agent type {agent_type!r}")


def flow(state, agent_type: str, horizon: int, dt: float) -> np.ndarray:
    """Zero-action forward propagation: (horizon+1, 4) including the start.

    Vehicles coast at constant speed and heading; pedestrians at constant
    velocity. flow(s, T)[:k+1] == flow(s, k) by construction.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    state = np.asarray(state, dtype=np.float64)
    out = np.empty((horizon + 1, STATE_DIM))
    out[0] = state
    zero = np.zeros(ACTION_DIM)
    for t in range(horizon):
        out[t + 1] = step(out[t], zero, dt, agent_type)
    return out


def velocity_vector(state, agent_type: str):
    """Planar velocity (vx, vy) regardless of the state layout."""
    if isinstance(state, Value):
        if agent_type == VEHICLE:
            v = state[..., 2:3]
            psi = state[..., 3:4]
            return ad.concat([v * ad.cos(psi), v * ad.sin(psi)], axis=-1)
        return state[..., 2:4]
    state = np.asarray(state)
    if agent_type == VEHICLE:
        v, psi = state[..., 2], state[..., 3]
        return np.stack([v * np.cos(psi), v * np.sin(psi)], axis=-1)
    return state[..., 2:4]
