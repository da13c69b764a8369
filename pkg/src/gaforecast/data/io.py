"""Scene-file ingestion, airspace filtering, windowing, splits and the binary dataset format."""

from __future__ import annotations

import logging
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigurationError, EmptyInputError, EmptySceneError, FormatError
from ..geometry import Trajectory
from .settings import ExperimentSetting

log = logging.getLogger(__name__)

FEET_TO_KM = 0.0003048
DEFAULT_CEILING_FT = 6000.0
DEFAULT_RADIUS_KM = 5.0

DATASET_MAGIC = b"ASCD"
DATASET_VERSION = 1

_SPLIT = re.compile(r"[,\s]+")


@dataclass
class Sample:
    """One (history, future) pair for a single agent.

    Timestamps are relative to the last history point (t = 0).
    """

    history: Trajectory
    future: Trajectory
    agent_id: int = 0
    scene_id: int = 0
    history_rate: float = 1.0
    future_rate: float = 0.1

    @property
    def T_h(self) -> int:
        return len(self.history)

    @property
    def T_f(self) -> int:
        return len(self.future)


def make_sample(history_pts, future_pts, history_rate: float, future_rate: float,
                agent_id: int = 0, scene_id: int = 0) -> Sample:
    hp = np.asarray(history_pts, dtype=np.float64).reshape(-1, 3)
    fp = np.asarray(future_pts, dtype=np.float64).reshape(-1, 3)
    th = (np.arange(len(hp)) - (len(hp) - 1)) / history_rate
    tf = np.arange(1, len(fp) + 1) / future_rate
    return Sample(Trajectory(hp, th), Trajectory(fp, tf), int(agent_id), int(scene_id),
                  float(history_rate), float(future_rate))


def stack_samples(samples: Sequence[Sample]) -> Tuple[np.ndarray, np.ndarray]:
    """(N, T_h, 3) histories and (N, T_f, 3) futures."""
    if not samples:
        raise EmptyInputError("no samples")
    return (np.stack([s.history.points for s in samples]),
            np.stack([s.future.points for s in samples]))


# ------------------------------------------------------------------ reading
@dataclass
class Scene:
    agent_ids: List[int]
    trajectories: List[Trajectory]
    skipped_rows: int = 0
    source: str = ""

    def __iter__(self):
        return iter(self.trajectories)

    def __len__(self) -> int:
        return len(self.trajectories)


@dataclass(frozen=True)
class ColumnMap:
    """Zero-based column positions; trailing columns (e.g. wind) are ignored."""

    frame: int = 0
    agent: int = 1
    x: int = 2
    y: int = 3
    z: int = 4

    @property
    def width(self) -> int:
        return max(self.frame, self.agent, self.x, self.y, self.z) + 1


def read_scene_file(path, columns: ColumnMap = ColumnMap(), frame_rate: float = 1.0) -> Scene:
    """Parse delimited numeric rows into one trajectory per agent.

    Malformed rows are skipped and counted; duplicate (frame, agent) rows keep
    the first occurrence.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read scene file {path}: {exc}") from exc

    rows: Dict[int, Dict[int, np.ndarray]] = {}
    skipped = 0
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        tokens = [t for t in _SPLIT.split(line) if t]
        try:
            if len(tokens) < columns.width:
                raise ValueError
            frame_f = float(tokens[columns.frame])
            agent_f = float(tokens[columns.agent])
            pos = np.array([float(tokens[columns.x]), float(tokens[columns.y]), float(tokens[columns.z])])
            if not (np.all(np.isfinite(pos)) and np.isfinite(frame_f) and np.isfinite(agent_f)):
                raise ValueError
            if frame_f < 0 or frame_f != int(frame_f) or agent_f != int(agent_f):
                raise ValueError
        except ValueError:
            skipped += 1
            continue
        per_agent = rows.setdefault(int(agent_f), {})
        per_agent.setdefault(int(frame_f), pos)

    if skipped:
        log.warning("%s: skipped %d malformed row(s)", path, skipped)
    if not rows:
        raise EmptySceneError(f"{path}: no valid rows")

    agent_ids, trajs = [], []
    for agent in sorted(rows):
        frames = sorted(rows[agent])
        pts = np.stack([rows[agent][f] for f in frames])
        trajs.append(Trajectory(pts, np.asarray(frames, dtype=np.float64) / frame_rate))
        agent_ids.append(agent)
    return Scene(agent_ids, trajs, skipped, str(path))


# ---------------------------------------------------------------- filtering
def distance_to_runway(points, runway_endpoints) -> np.ndarray:
    """Horizontal distance (km) from each point to the nearer runway endpoint."""
    pts = np.asarray(points, dtype=np.float64)
    ends = np.asarray(runway_endpoints, dtype=np.float64).reshape(2, -1)[:, :2]
    d = np.linalg.norm(pts[..., None, :2] - ends, axis=-1)
    return d.min(axis=-1)


def contiguous_runs(mask: np.ndarray) -> List[Tuple[int, int]]:
    """(start, stop) index pairs of consecutive True entries."""
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def filter_airspace(traj: Trajectory, runway_endpoints, ceiling_ft: float = DEFAULT_CEILING_FT,
                    radius_km: Optional[float] = DEFAULT_RADIUS_KM) -> List[Trajectory]:
    """Drop points above the ceiling or outside the runway radius; split what remains."""
    if ceiling_ft <= 0 or (radius_km is not None and radius_km <= 0):
        raise ConfigurationError("ceiling and radius must be positive")
    keep = traj.points[:, 2] <= ceiling_ft * FEET_TO_KM
    if radius_km is not None:
        keep &= distance_to_runway(traj.points, runway_endpoints) <= radius_km
    return [traj.slice(a, b) for a, b in contiguous_runs(keep)]


# ---------------------------------------------------------------- windowing
def _step_indices(traj: Trajectory, base_rate: float) -> np.ndarray:
    steps = traj.timestamps * base_rate
    idx = np.rint(steps)
    if np.any(np.abs(steps - idx) > 1e-6):
        raise ConfigurationError("trajectory timestamps are not on the base-rate grid")
    return idx.astype(np.int64)


def window_offsets(setting: ExperimentSetting) -> Tuple[np.ndarray, np.ndarray]:
    """Base-step offsets of history and future points relative to the window start."""
    hist = np.arange(setting.history_steps) * setting.history_stride
    anchor = hist[-1]
    fut = anchor + np.arange(1, setting.future_steps + 1) * setting.future_stride
    return hist, fut


def window_starts(traj: Trajectory, setting: ExperimentSetting, stride: int = 1) -> np.ndarray:
    """Positions (into the dense base-step grid) of complete, gap-free windows."""
    if stride < 1:
        raise ConfigurationError("window stride must be >= 1")
    idx = _step_indices(traj, setting.base_rate)
    first = idx[0]
    present = np.zeros(idx[-1] - first + 1, dtype=bool)
    present[idx - first] = True
    n_starts = len(present) - setting.span + 1
    if n_starts <= 0:
        return np.zeros(0, dtype=np.int64)
    hist, fut = window_offsets(setting)
    needed = np.concatenate([hist, fut])
    starts = np.arange(0, n_starts, stride)
    ok = present[starts[:, None] + needed[None, :]].all(axis=1)
    return starts[ok]


def window_samples(traj: Trajectory, setting: ExperimentSetting, stride: int = 1,
                   agent_id: int = 0, scene_id: int = 0) -> List[Sample]:
    """Slide a (history, future) window over a base-rate trajectory.

    Windows containing a gap are dropped; stride counts base steps between starts.
    """
    starts = window_starts(traj, setting, stride)
    if len(starts) == 0:
        return []
    idx = _step_indices(traj, setting.base_rate)
    dense = np.full((idx[-1] - idx[0] + 1, 3), np.nan)
    dense[idx - idx[0]] = traj.points
    hist, fut = window_offsets(setting)
    return [
        make_sample(dense[s + hist], dense[s + fut], setting.history_rate, setting.future_rate,
                    agent_id, scene_id)
        for s in starts
    ]


def scene_samples(scene: Scene, setting: ExperimentSetting, scene_id: int = 0, stride: int = 1,
                  runway_endpoints=None, ceiling_ft: Optional[float] = DEFAULT_CEILING_FT,
                  radius_km: Optional[float] = DEFAULT_RADIUS_KM) -> List[Sample]:
    """Filter (when a runway is given) and window every agent of a scene."""
    out: List[Sample] = []
    for agent, traj in zip(scene.agent_ids, scene.trajectories):
        segments = [traj]
        if runway_endpoints is not None:
            segments = filter_airspace(traj, runway_endpoints, ceiling_ft or DEFAULT_CEILING_FT, radius_km)
        for seg in segments:
            out.extend(window_samples(seg, setting, stride, agent, scene_id))
    return out


# ------------------------------------------------------------------- splits
def make_tartan_splits(files: Sequence) -> Tuple[list, list]:
    """First and last quarter of the (sorted) files form S1; the middle half is S2."""
    if not files:
        raise EmptyInputError("no files to split")
    ordered = sorted(files, key=lambda f: str(f))
    n = len(ordered)
    q = n // 4
    return ordered[:q] + ordered[n - q:], ordered[q:n - q]


# ----------------------------------------------------------- binary format
_HEADER = struct.Struct("<4sIQ")
_SAMPLE_HEAD = struct.Struct("<6d")


def write_canonical_dataset(samples: Sequence[Sample], path) -> None:
    """Little-endian container: magic, version, count, then per-sample records."""
    parts = [_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, len(samples))]
    for s in samples:
        parts.append(_SAMPLE_HEAD.pack(float(s.scene_id), float(s.agent_id), float(s.T_h), float(s.T_f),
                                       s.history_rate, s.future_rate))
        parts.append(np.ascontiguousarray(s.history.points, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(s.future.points, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_canonical_dataset(path) -> List[Sample]:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, count = _HEADER.unpack_from(buf, 0)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {DATASET_MAGIC!r}")
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    off = _HEADER.size
    samples = []
    try:
        for _ in range(count):
            scene_id, agent_id, th, tf, hr, fr = _SAMPLE_HEAD.unpack_from(buf, off)
            off += _SAMPLE_HEAD.size
            th, tf = int(th), int(tf)
            hist = np.frombuffer(buf, dtype="<f8", count=th * 3, offset=off).reshape(th, 3)
            off += th * 24
            fut = np.frombuffer(buf, dtype="<f8", count=tf * 3, offset=off).reshape(tf, 3)
            off += tf * 24
            samples.append(make_sample(hist.astype(np.float64), fut.astype(np.float64), hr, fr,
                                       int(agent_id), int(scene_id)))
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated or corrupt record ({exc})") from None
    if off != len(buf):
        raise FormatError(f"{path}: {len(buf) - off} trailing bytes")
    return samples
