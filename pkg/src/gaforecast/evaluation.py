"""Displacement metrics, baselines, dataset evaluation and the latency harness."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .data.io import DEFAULT_RADIUS_KM, Sample, distance_to_runway, stack_samples
from .data.settings import ExperimentSetting
from .errors import ConfigurationError, DimensionError, EmptyInputError
from .geometry import normalize_batch, to_global, to_local
from .kinematics import constant_velocity_forecast


# ------------------------------------------------------------------ metrics
def _displacements(pred, gt) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.ndim < 3 or pred.shape[-1] != 3 or pred.shape[-2:] != gt.shape[-2:]:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} are inconsistent")
    if gt.shape[-2] == 0:
        raise EmptyInputError("future has no timesteps")
    return np.linalg.norm(pred - gt[..., None, :, :], axis=-1)


def batch_min_ade(pred, gt) -> np.ndarray:
    """Per-sample minADE for (..., k, T_f, 3) predictions and (..., T_f, 3) targets."""
    return _displacements(pred, gt).mean(axis=-1).min(axis=-1)


def batch_min_fde(pred, gt) -> np.ndarray:
    return _displacements(pred, gt)[..., -1].min(axis=-1)


def min_ade(pred, gt) -> float:
    """Smallest over modes of the mean Euclidean distance to ``gt`` (km)."""
    return float(batch_min_ade(pred, gt))


def min_fde(pred, gt) -> float:
    return float(batch_min_fde(pred, gt))


def as_modes(pred: np.ndarray, k: int) -> np.ndarray:
    """Replicate a single-mode forecast (B, T_f, 3) to (B, k, T_f, 3)."""
    pred = np.asarray(pred, dtype=np.float64)
    if pred.ndim == 3:
        return np.repeat(pred[:, None], k, axis=1)
    return pred


# ---------------------------------------------------------------- baselines
class ConstantVelocity:
    """Extrapolates the last history displacement."""

    def __init__(self, setting: ExperimentSetting):
        self.horizon = setting.future_steps
        self.dt_out = setting.dt_future
        self.dt_hist = setting.dt_history

    def forecast(self, histories) -> np.ndarray:
        return constant_velocity_forecast(histories, self.horizon, self.dt_out, self.dt_hist)


class NearestNeighborBank:
    """Returns the future of the most similar training history.

    With ``normalized=True`` histories are compared in their own agent frames
    and the retrieved local future is mapped into the query's frame; otherwise
    raw coordinates are compared and the stored future is returned unchanged.
    """

    def __init__(self, samples: Sequence[Sample], normalized: bool = True, chunk: int = 256):
        if not samples:
            raise EmptyInputError("nearest-neighbour bank is empty")
        hist, fut = stack_samples(samples)
        self.normalized = normalized
        self.chunk = chunk
        if normalized:
            local, origin, ry, rp, _, _ = normalize_batch(hist)
            self.keys = local
            self.values = to_local(fut, origin, ry, rp)
        else:
            self.keys = hist
            self.values = fut

    def __len__(self) -> int:
        return len(self.keys)

    def nearest(self, histories) -> np.ndarray:
        """Bank index per query; ties resolve to the earliest entry."""
        q = np.asarray(histories, dtype=np.float64)
        if self.normalized:
            q = normalize_batch(q)[0]
        if q.shape[1:] != self.keys.shape[1:]:
            raise DimensionError(f"query histories {q.shape} do not match bank {self.keys.shape}")
        out = np.empty(len(q), dtype=np.int64)
        for i in range(0, len(q), self.chunk):
            d = np.linalg.norm(q[i:i + self.chunk, None] - self.keys[None], axis=-1).mean(axis=-1)
            out[i:i + self.chunk] = np.argmin(d, axis=1)
        return out

    def forecast(self, histories) -> np.ndarray:
        h = np.asarray(histories, dtype=np.float64)
        idx = self.nearest(h)
        fut = self.values[idx]
        if not self.normalized:
            return fut.copy()
        _, origin, ry, rp, _, _ = normalize_batch(h)
        return to_global(fut, origin, ry, rp)


# --------------------------------------------------------------- evaluation
@dataclass
class SampleResult:
    sample_id: int
    best_mode: int
    ade: float
    fde: float


@dataclass
class EvalReport:
    minade: float
    minfde: float
    n_samples: int
    setting: dict = field(default_factory=dict)
    per_sample: Optional[List[SampleResult]] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.per_sample is None:
            d.pop("per_sample")
        return d

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _run(forecaster, histories) -> np.ndarray:
    if hasattr(forecaster, "forecast"):
        return forecaster.forecast(histories)
    return forecaster(histories)


def evaluate(forecaster, samples: Sequence[Sample], setting: Optional[ExperimentSetting] = None,
             k: Optional[int] = None, batch_size: int = 256, per_sample: bool = False) -> EvalReport:
    """Average minADE/minFDE over ``samples``.

    ``forecaster`` is anything with ``forecast(histories)`` or a callable,
    returning (B, k, T_f, 3) or single-mode (B, T_f, 3) global positions.
    Single-mode output is replicated to ``k`` modes.
    """
    if not samples:
        raise EmptyInputError("cannot evaluate an empty dataset")
    if k is None:
        k = setting.k if setting is not None else 1
    hist, fut = stack_samples(samples)
    ade, fde, best = [], [], []
    for i in range(0, len(hist), batch_size):
        pred = as_modes(_run(forecaster, hist[i:i + batch_size]), k)
        d = _displacements(pred, fut[i:i + batch_size])
        mode_ade = d.mean(axis=-1)
        ade.append(mode_ade.min(axis=-1))
        fde.append(d[..., -1].min(axis=-1))
        best.append(np.argmin(mode_ade, axis=-1))
    ade, fde, best = np.concatenate(ade), np.concatenate(fde), np.concatenate(best)
    rows = None
    if per_sample:
        rows = [SampleResult(i, int(b), float(a), float(f)) for i, (b, a, f) in enumerate(zip(best, ade, fde))]
    return EvalReport(float(ade.mean()), float(fde.mean()), len(ade),
                      setting.to_dict() if setting is not None else {}, rows)


def within_radius(samples: Sequence[Sample], runway_endpoints, radius_km: float = DEFAULT_RADIUS_KM) -> List[Sample]:
    """Samples whose history and future stay within ``radius_km`` of a runway endpoint."""
    keep = []
    for s in samples:
        pts = np.concatenate([s.history.points, s.future.points])
        if distance_to_runway(pts, runway_endpoints).max() <= radius_km:
            keep.append(s)
    return keep


def cross_dataset_eval(forecaster, samples: Sequence[Sample], setting: Optional[ExperimentSetting] = None,
                       radius_km: Optional[float] = None, runway_endpoints=None, **kwargs) -> EvalReport:
    """Evaluate a model trained elsewhere, optionally dropping samples outside a recording radius."""
    if radius_km is not None:
        if runway_endpoints is None:
            raise ConfigurationError("radius filtering needs runway endpoints")
        samples = within_radius(samples, runway_endpoints, radius_km)
    return evaluate(forecaster, samples, setting, **kwargs)


# ------------------------------------------------------------------ latency
DEFAULT_BATCH_SIZES = (1, 4, 8, 16, 32)


@dataclass
class LatencyRow:
    batch_size: int
    median_ms: float
    p90_ms: float
    n_trials: int


def random_histories(batch: int, steps: int, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Plausible straight-ish flight histories for timing runs."""
    start = rng.uniform(-4.0, 4.0, size=(batch, 1, 3)) * np.array([1.0, 1.0, 0.1]) + np.array([0, 0, 0.5])
    heading = rng.uniform(-np.pi, np.pi, size=(batch, 1))
    v = 0.03 * dt * np.stack([np.sin(heading), np.cos(heading), np.zeros_like(heading)], axis=-1)
    return start + np.arange(steps)[None, :, None] * v + rng.normal(0, 0.002, size=(batch, steps, 3))


def latency_bench(model, batch_sizes=DEFAULT_BATCH_SIZES, n_warmup: int = 3, n_trials: int = 20,
                  seed: int = 0) -> List[LatencyRow]:
    """Median and 90th percentile wall-clock latency of a full inference pass per batch size."""
    cfg = model.config
    rng = np.random.default_rng(seed)
    dt = 1.0
    rows = []
    for B in batch_sizes:
        inputs = random_histories(int(B), cfg.T_h, dt, rng)
        for _ in range(n_warmup):
            model.predict_batch(inputs)
        times = []
        for _ in range(max(1, n_trials)):
            t0 = time.perf_counter()
            model.predict_batch(inputs)
            times.append((time.perf_counter() - t0) * 1e3)
        rows.append(LatencyRow(int(B), float(np.median(times)), float(np.percentile(times, 90)), len(times)))
    return rows


def write_latency_csv(rows: Sequence[LatencyRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["batch_size", "median_ms", "p90_ms"])
        for r in rows:
            w.writerow([r.batch_size, f"{r.median_ms:.4f}", f"{r.p90_ms:.4f}"])
