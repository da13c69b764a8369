"""Agent-centric coordinate frames for 3D flight paths.

Conventions: positions are kilometres in the scene frame with z up. Yaw is
measured from +y toward +x (yaw 0 = heading +y); pitch is the climb angle
(0 = level). Normalisation translates the latest position to the origin, then
rotates about z to cancel yaw and about x to cancel pitch, so the final
history step points along +y.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import InsufficientHistoryError, NumericError

MIN_STEP_KM = 1e-9


@dataclass(frozen=True)
class Trajectory:
    """Ordered 3D positions (km) with strictly increasing timestamps (s)."""

    points: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        ts = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        if len(pts) == 0:
            raise ValueError("trajectory needs at least one point")
        if len(ts) != len(pts):
            raise ValueError(f"{len(pts)} points but {len(ts)} timestamps")
        if np.any(np.diff(ts) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "timestamps", ts)

    @classmethod
    def uniform(cls, points, dt: float, t0: float = 0.0) -> "Trajectory":
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return cls(pts, t0 + dt * np.arange(len(pts)))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dt(self) -> float:
        return float(self.timestamps[1] - self.timestamps[0]) if len(self) > 1 else float("nan")

    def is_uniform(self, tol: float = 1e-6) -> bool:
        if len(self) < 3:
            return True
        steps = np.diff(self.timestamps)
        return bool(np.all(np.abs(steps - steps[0]) <= tol))

    def slice(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(self.points[start:stop], self.timestamps[start:stop])


@dataclass(frozen=True)
class PoseFrame:
    """Origin and heading of an agent-centric frame."""

    position: np.ndarray
    yaw: float
    pitch: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))
        object.__setattr__(self, "yaw", float(wrap_angle(self.yaw)))
        if not -np.pi / 2 <= self.pitch <= np.pi / 2:
            raise ValueError(f"pitch {self.pitch} outside [-pi/2, pi/2]")
        object.__setattr__(self, "pitch", float(self.pitch))

    @property
    def rotation(self) -> np.ndarray:
        return rotation_matrix(self.yaw, self.pitch)

    def to_local(self, points) -> np.ndarray:
        return to_local(points, self.position, self.yaw, self.pitch)

    def to_global(self, points) -> np.ndarray:
        return to_global(points, self.position, self.yaw, self.pitch)

    def features(self, pose_scale: float = 1.0) -> np.ndarray:
        return pose_features(self.position[None], np.array([self.yaw]), np.array([self.pitch]), pose_scale)[0]


def wrap_angle(a):
    """Wrap radians into (-pi, pi]; both +pi and -pi map to +pi."""
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise NumericError("cannot wrap a non-finite angle")
    r = np.pi - np.mod(np.pi - a, 2.0 * np.pi)
    r = np.where(r <= -np.pi, r + 2.0 * np.pi, r)
    return float(r) if r.ndim == 0 else r


def rotation_matrix(yaw, pitch) -> np.ndarray:
    """Global-to-local rotation R = Rx(pitch) @ Rz(yaw); broadcasts over leading dims."""
    yaw = np.asarray(yaw, dtype=np.float64)
    pitch = np.asarray(pitch, dtype=np.float64)
    sg, cg = np.sin(yaw), np.cos(yaw)
    st, ct = np.sin(pitch), np.cos(pitch)
    zero = np.zeros_like(sg * st)
    one = np.ones_like(zero)
    rz = np.stack(
        [np.stack([cg + zero, -sg + zero, zero], -1),
         np.stack([sg + zero, cg + zero, zero], -1),
         np.stack([zero, zero, one], -1)], -2)
    rx = np.stack(
        [np.stack([one, zero, zero], -1),
         np.stack([zero, ct + zero, st + zero], -1),
         np.stack([zero, -st + zero, ct + zero], -1)], -2)
    return rx @ rz


def heading_from_displacement(d) -> Tuple[np.ndarray, np.ndarray]:
    d = np.asarray(d, dtype=np.float64)
    yaw = np.arctan2(d[..., 0], d[..., 1])
    pitch = np.arctan2(d[..., 2], np.hypot(d[..., 0], d[..., 1]))
    return yaw, pitch


def estimate_heading_batch(points) -> Tuple[np.ndarray, np.ndarray]:
    """Yaw/pitch of the most recent non-degenerate step for each (T, 3) history in a batch."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[-2] < 2:
        raise InsufficientHistoryError(f"need at least 2 history points, got {pts.shape[-2]}")
    steps = np.diff(pts, axis=-2)
    moving = np.linalg.norm(steps, axis=-1) >= MIN_STEP_KM
    # last index with a non-degenerate step; -1 if the history never moves
    n = steps.shape[-2]
    last = n - 1 - np.argmax(moving[..., ::-1], axis=-1)
    any_moving = moving.any(axis=-1)
    d = np.take_along_axis(steps, last[..., None, None], axis=-2)[..., 0, :]
    yaw, pitch = heading_from_displacement(d)
    yaw = np.where(any_moving, yaw, 0.0)
    pitch = np.where(any_moving, pitch, 0.0)
    return yaw, pitch


def estimate_heading(history) -> Tuple[float, float]:
    """Heading of the last displacement; zero for fully stationary histories."""
    pts = history.points if isinstance(history, Trajectory) else np.asarray(history, dtype=np.float64)
    yaw, pitch = estimate_heading_batch(pts)
    return float(yaw), float(pitch)


def to_local(points, origin, yaw, pitch) -> np.ndarray:
    """Apply R (p - origin) to (..., T, 3) points; origin/yaw/pitch broadcast over the leading dims."""
    pts = np.asarray(points, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    r = rotation_matrix(yaw, pitch)
    return (pts - origin[..., None, :]) @ np.swapaxes(r, -1, -2)


def to_global(points, origin, yaw, pitch) -> np.ndarray:
    """Inverse of :func:`to_local`: R^T q + origin."""
    pts = np.asarray(points, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    r = rotation_matrix(yaw, pitch)
    return pts @ r + origin[..., None, :]


def normalize_batch(points, positional: bool = True, angular: bool = True):
    """Vectorised normalisation of (B, T, 3) histories.

    Returns ``(local, origin, yaw, pitch)`` where the heading is always the
    estimated one; ``positional``/``angular`` only control which part of the
    transform is applied (the ablation switches).
    """
    pts = np.asarray(points, dtype=np.float64)
    yaw, pitch = estimate_heading_batch(pts)
    last = pts[..., -1, :]
    origin = last if positional else np.zeros_like(last)
    ryaw = yaw if angular else np.zeros_like(yaw)
    rpitch = pitch if angular else np.zeros_like(pitch)
    return to_local(pts, origin, ryaw, rpitch), origin, ryaw, rpitch, yaw, pitch


def normalize_history(history: Trajectory) -> Tuple[Trajectory, PoseFrame]:
    """Translate the last point to the origin and rotate the last step onto +y."""
    if len(history) < 2:
        raise InsufficientHistoryError(f"need at least 2 history points, got {len(history)}")
    local, origin, yaw, pitch, _, _ = normalize_batch(history.points)
    frame = PoseFrame(origin, float(yaw), float(pitch))
    return Trajectory(local, history.timestamps), frame


def denormalize_trajectory(local, frame: PoseFrame) -> np.ndarray:
    pts = local.points if isinstance(local, Trajectory) else local
    return frame.to_global(pts)


def pose_features(position, yaw, pitch, pose_scale: float = 1.0) -> np.ndarray:
    """(x/s, y/s, z/s, sin yaw, cos yaw, sin pitch, cos pitch) per row."""
    position = np.asarray(position, dtype=np.float64)
    yaw = np.asarray(yaw, dtype=np.float64)
    pitch = np.asarray(pitch, dtype=np.float64)
    return np.concatenate(
        [position / pose_scale,
         np.stack([np.sin(yaw), np.cos(yaw), np.sin(pitch), np.cos(pitch)], -1)],
        axis=-1,
    )


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.linalg.norm(diff, axis=-1)


def yaw_rotation_z(points: np.ndarray, angle: float, center: Optional[np.ndarray] = None) -> np.ndarray:
    """Rotate points about the vertical axis by ``angle`` (positive = toward +x from +y)."""
    c = np.zeros(3) if center is None else np.asarray(center, dtype=np.float64)
    rz = rotation_matrix(-angle, 0.0)
    return (np.asarray(points) - c) @ rz.T + c
