"""Flight-parameter rollout and the constant-velocity baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, add, as_tensor, concat, cumsum, div, mul, no_grad, reshape, sqrt, square
from .errors import ConfigurationError, InsufficientHistoryError
from .geometry import Trajectory

PAIR_EPS = 1e-12


@dataclass
class FlightParams:
    """Per-step speed (km/s) and raw (sin, cos) pairs for yaw and pitch.

    Arrays share a leading shape; the last axis has length T_f. The pairs need
    not be unit norm; :func:`rollout` normalises them.
    """

    speed: np.ndarray
    yaw_sin: np.ndarray
    yaw_cos: np.ndarray
    pitch_sin: np.ndarray
    pitch_cos: np.ndarray

    def __post_init__(self):
        for name in ("speed", "yaw_sin", "yaw_cos", "pitch_sin", "pitch_cos"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        shapes = {a.shape for a in (self.speed, self.yaw_sin, self.yaw_cos, self.pitch_sin, self.pitch_cos)}
        if len(shapes) != 1:
            raise ValueError(f"flight parameter arrays disagree in shape: {shapes}")

    @property
    def horizon(self) -> int:
        return self.speed.shape[-1]

    @property
    def yaw(self) -> np.ndarray:
        return np.arctan2(self.yaw_sin, self.yaw_cos)

    @property
    def pitch(self) -> np.ndarray:
        return np.arctan2(self.pitch_sin, self.pitch_cos)

    @classmethod
    def from_angles(cls, speed, yaw, pitch) -> "FlightParams":
        yaw = np.asarray(yaw, dtype=np.float64)
        pitch = np.asarray(pitch, dtype=np.float64)
        return cls(speed, np.sin(yaw), np.cos(yaw), np.sin(pitch), np.cos(pitch))


def unit_pair(s, c):
    """Normalise a (sin, cos) pair of tensors; the epsilon keeps zero pairs finite."""
    s, c = as_tensor(s), as_tensor(c)
    norm = sqrt(add(add(square(s), square(c)), PAIR_EPS * PAIR_EPS))
    return div(s, norm), div(c, norm)


def rollout_tensor(speed, yaw_sin, yaw_cos, pitch_sin, pitch_cos, dt: float, origin=None) -> Tensor:
    """Differentiable rollout: (..., T_f) parameters -> (..., T_f, 3) positions.

    p_t = p_{t-1} + speed_t * dt * (cos(pitch) sin(yaw), cos(pitch) cos(yaw), sin(pitch)),
    starting from ``origin`` (default: the local-frame origin).
    """
    if dt <= 0:
        raise ConfigurationError(f"rollout step dt must be positive, got {dt}")
    sg, cg = unit_pair(yaw_sin, yaw_cos)
    st, ct = unit_pair(pitch_sin, pitch_cos)
    step = mul(as_tensor(speed), float(dt))
    shape = step.shape + (1,)
    direction = concat(
        [reshape(mul(ct, sg), shape), reshape(mul(ct, cg), shape), reshape(st, shape)], axis=-1
    )
    positions = cumsum(mul(direction, reshape(step, shape)), axis=-2)
    if origin is not None:
        origin = as_tensor(origin)
        positions = add(positions, reshape(origin, origin.shape[:-1] + (1, 3)))
    return positions


def rollout(params: FlightParams, dt: float) -> np.ndarray:
    """Positions (..., T_f, 3) in the local frame for numpy flight parameters."""
    with no_grad():
        out = rollout_tensor(params.speed, params.yaw_sin, params.yaw_cos, params.pitch_sin, params.pitch_cos, dt)
    return out.data


def constant_velocity_forecast(history, horizon: int, dt_out: float, dt_hist: float = None) -> np.ndarray:
    """Linear extrapolation of the last history step.

    ``history`` is a :class:`Trajectory` or a (..., T_h, 3) array; for arrays
    ``dt_hist`` must be given. Returns (..., horizon, 3) global positions.
    """
    if isinstance(history, Trajectory):
        pts = history.points
        dt_hist = history.dt if dt_hist is None else dt_hist
    else:
        pts = np.asarray(history, dtype=np.float64)
    if pts.shape[-2] < 2:
        raise InsufficientHistoryError("constant velocity needs at least 2 history points")
    if dt_hist is None or not dt_hist > 0:
        raise ConfigurationError("history sampling interval must be positive")
    velocity = (pts[..., -1, :] - pts[..., -2, :]) / dt_hist
    steps = dt_out * np.arange(1, horizon + 1)
    return pts[..., -1:, :] + steps[:, None] * velocity[..., None, :]
