"""Synthetic terminal-airspace traffic built from standard traffic-pattern geometry.

Paths are assembled from straight legs and constant-rate turns, sampled at
1 Hz by arc length at constant 3D speed. Maneuvers that start the same way
(e.g. a straight-out departure and a crosswind departure) share an identical
noise-free prefix; the last shared sample is the branch point. Windows whose
history ends inside a shared prefix while alternative continuations separate
by more than ``AMBIGUITY_KM`` at the horizon are flagged ambiguous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data.io import Sample, distance_to_runway, window_offsets, window_samples, window_starts
from .data.settings import ExperimentSetting
from .errors import ConfigurationError
from .geometry import Trajectory

AMBIGUITY_KM = 0.5
_SAME_KM = 1e-9


class Maneuver(str, Enum):
    FULL_PATTERN = "full_pattern"
    DEPARTURE_STRAIGHT = "departure_straight"
    DEPARTURE_TURN = "departure_turn"
    GO_AROUND = "go_around"
    LANDING = "landing"


DEPARTURES = (Maneuver.FULL_PATTERN, Maneuver.DEPARTURE_STRAIGHT, Maneuver.DEPARTURE_TURN)
ARRIVALS = (Maneuver.LANDING, Maneuver.GO_AROUND)


def family(m: Maneuver) -> Tuple[Maneuver, ...]:
    return DEPARTURES if m in DEPARTURES else ARRIVALS


@dataclass(frozen=True)
class LegLengths:
    """Pattern leg lengths in km.

    The circuit is closed by construction, so ``base`` follows ``crosswind``
    and ``final`` follows ``downwind - upwind``; see :meth:`closed`.
    """

    upwind: float = 2.0
    crosswind: float = 1.5
    downwind: float = 4.5
    base: float = 1.5
    final: float = 2.5

    def closed(self) -> "LegLengths":
        return replace(self, base=self.crosswind, final=self.downwind - self.upwind)


@dataclass(frozen=True)
class PatternSpec:
    runway: Tuple[Tuple[float, float, float], Tuple[float, float, float]] = ((-0.75, 0.0, 0.38), (0.75, 0.0, 0.38))
    pattern_altitude: float = 0.3
    leg_lengths: LegLengths = field(default_factory=LegLengths)
    cruise_speed: float = 0.03
    turn_rate: float = math.radians(3.0)
    direction: str = "left"
    noise_sigma: float = 0.005
    seed: int = 0
    leg_jitter: float = 0.15
    departure_length: float = 5.0

    def __post_init__(self):
        legs = self.leg_lengths
        if min(legs.upwind, legs.crosswind, legs.downwind) <= 0:
            raise ConfigurationError("leg lengths must be positive")
        if legs.downwind * (1 - self.leg_jitter) <= legs.upwind * (1 + self.leg_jitter):
            raise ConfigurationError("downwind must exceed upwind so the final leg has positive length")
        if self.cruise_speed <= 0 or self.turn_rate <= 0:
            raise ConfigurationError("speed and turn rate must be positive")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be non-negative")
        if self.direction not in ("left", "right"):
            raise ConfigurationError("direction must be 'left' or 'right'")
        if not 0 <= self.leg_jitter < 1:
            raise ConfigurationError("leg_jitter must lie in [0, 1)")

    @property
    def turn_radius(self) -> float:
        return self.cruise_speed / self.turn_rate

    @property
    def turn_sign(self) -> float:
        # yaw grows clockwise seen from above, so a left turn decreases it
        return -1.0 if self.direction == "left" else 1.0


# ---------------------------------------------------------------- path model
@dataclass
class _Piece:
    length: float
    start: np.ndarray
    yaw0: float
    horizontal: float
    dz: float
    turn: float = 0.0

    def at(self, s: np.ndarray) -> np.ndarray:
        frac = s / self.length if self.length > 0 else np.zeros_like(s)
        z = self.start[2] + frac * self.dz
        if self.turn == 0.0:
            h = np.array([math.sin(self.yaw0), math.cos(self.yaw0)])
            xy = self.start[:2] + (frac * self.horizontal)[:, None] * h
        else:
            r = self.horizontal / abs(self.turn)
            phi = frac * self.turn
            yaw = self.yaw0 + phi
            # centre lies perpendicular to the heading, on the turn side
            sgn = math.copysign(1.0, self.turn)
            cx = self.start[0] + sgn * r * math.cos(self.yaw0)
            cy = self.start[1] - sgn * r * math.sin(self.yaw0)
            xy = np.stack([cx - sgn * r * np.cos(yaw), cy + sgn * r * np.sin(yaw)], axis=-1)
        return np.column_stack([xy, z])


class _Path:
    def __init__(self, start, yaw: float):
        self.pieces: List[_Piece] = []
        self.pos = np.asarray(start, dtype=np.float64)
        self.yaw = float(yaw)

    def _push(self, piece: _Piece) -> None:
        self.pieces.append(piece)
        self.pos = piece.at(np.array([piece.length]))[0]
        self.yaw += piece.turn

    def straight(self, horizontal: float, dz: float = 0.0) -> "_Path":
        self._push(_Piece(math.hypot(horizontal, dz), self.pos.copy(), self.yaw, horizontal, dz))
        return self

    def turn(self, angle: float, radius: float, dz: float = 0.0) -> "_Path":
        horizontal = abs(angle) * radius
        self._push(_Piece(math.hypot(horizontal, dz), self.pos.copy(), self.yaw, horizontal, dz, angle))
        return self

    @property
    def length(self) -> float:
        return sum(p.length for p in self.pieces)

    def sample(self, spacing: float) -> np.ndarray:
        total = self.length
        s = np.arange(0.0, total + 1e-9, spacing)
        bounds = np.cumsum([0.0] + [p.length for p in self.pieces])
        which = np.clip(np.searchsorted(bounds, s, side="right") - 1, 0, len(self.pieces) - 1)
        out = np.empty((len(s), 3))
        for i, piece in enumerate(self.pieces):
            m = which == i
            if m.any():
                out[m] = piece.at(s[m] - bounds[i])
        return out


def _geometry(spec: PatternSpec, rng: np.random.Generator) -> LegLengths:
    legs = spec.leg_lengths
    j = spec.leg_jitter
    up, cross, down = (v * rng.uniform(1 - j, 1 + j) for v in (legs.upwind, legs.crosswind, legs.downwind))
    return LegLengths(up, cross, down).closed()


def _build_path(spec: PatternSpec, maneuver: Maneuver, legs: LegLengths) -> _Path:
    a = np.asarray(spec.runway[0], dtype=np.float64)
    b = np.asarray(spec.runway[1], dtype=np.float64)
    runway_yaw = math.atan2(b[0] - a[0], b[1] - a[1])
    ground = a[2]
    r = spec.turn_radius
    quarter = spec.turn_sign * math.pi / 2
    alt = spec.pattern_altitude
    climb = alt / legs.upwind

    if maneuver in DEPARTURES:
        path = _Path(a, runway_yaw).straight(legs.upwind, alt)
        if maneuver is Maneuver.DEPARTURE_STRAIGHT:
            return path.straight(spec.departure_length, climb * spec.departure_length)
        if maneuver is Maneuver.DEPARTURE_TURN:
            arc = abs(quarter) * r
            return path.turn(quarter, r, climb * arc).straight(
                spec.departure_length, climb * spec.departure_length)
        path.turn(quarter, r).straight(legs.crosswind).turn(quarter, r).straight(legs.downwind)
        return _descend_to_threshold(path, spec, legs, ground, r, quarter)

    # arrivals begin at the start of the downwind leg of the same circuit
    side = np.array([math.cos(runway_yaw), -math.sin(runway_yaw)]) * spec.turn_sign
    fwd = np.array([math.sin(runway_yaw), math.cos(runway_yaw)])
    start_xy = a[:2] + fwd * legs.upwind + side * (2 * r + legs.crosswind)
    start = np.array([start_xy[0], start_xy[1], ground + alt])
    path = _Path(start, runway_yaw + math.pi)
    path.straight(legs.downwind)
    if maneuver is Maneuver.LANDING:
        return _descend_to_threshold(path, spec, legs, ground, r, quarter)
    # go-around: base and turn to final as for landing, then climb out along the runway
    glide = alt / (legs.base + legs.final + 2 * abs(quarter) * r)
    arc = abs(quarter) * r
    path.turn(quarter, r, -glide * arc).straight(legs.base, -glide * legs.base).turn(quarter, r, -glide * arc)
    length = legs.final + (b - a)[:2].dot(fwd) + spec.departure_length
    return path.straight(length, climb * length)


def _descend_to_threshold(path: _Path, spec: PatternSpec, legs: LegLengths, ground: float,
                          r: float, quarter: float) -> _Path:
    alt = spec.pattern_altitude
    arc = abs(quarter) * r
    glide = alt / (legs.base + legs.final + 2 * arc)
    path.turn(quarter, r, -glide * arc).straight(legs.base, -glide * legs.base)
    path.turn(quarter, r, -glide * arc).straight(legs.final, -glide * legs.final)
    rwy = np.asarray(spec.runway[1]) - np.asarray(spec.runway[0])
    return path.straight(float(np.hypot(rwy[0], rwy[1])))


# ----------------------------------------------------------------- scenarios
@dataclass
class Scenario:
    maneuver: Maneuver
    trajectory: Trajectory
    clean: np.ndarray
    branch_index: Dict[Maneuver, int]
    alternatives: Dict[Maneuver, np.ndarray]

    @property
    def branch_times(self) -> List[float]:
        """Timestamps of the last sample shared with each alternative maneuver."""
        return sorted({float(self.trajectory.timestamps[i]) for i in self.branch_index.values()
                       if 0 <= i < len(self.trajectory)})


def _last_shared(p: np.ndarray, q: np.ndarray) -> int:
    n = min(len(p), len(q))
    diff = np.linalg.norm(p[:n] - q[:n], axis=-1) > _SAME_KM
    return int(np.argmax(diff)) - 1 if diff.any() else n - 1


def generate_scenario(spec: PatternSpec, maneuver) -> Scenario:
    """1 Hz trajectory for ``maneuver`` under ``spec`` (a pure function of both)."""
    maneuver = Maneuver(maneuver)
    rng = np.random.default_rng(spec.seed)
    legs = _geometry(spec, rng)
    clean = {m: _build_path(spec, m, legs).sample(spec.cruise_speed) for m in family(maneuver)}
    own = clean[maneuver]
    noisy = own + rng.normal(0.0, spec.noise_sigma, size=own.shape) if spec.noise_sigma > 0 else own.copy()
    branches = {m: _last_shared(own, path) for m, path in clean.items() if m is not maneuver}
    alternatives = {m: path for m, path in clean.items() if m is not maneuver}
    return Scenario(maneuver, Trajectory.uniform(noisy, 1.0), own, branches, alternatives)


# ------------------------------------------------------------------ datasets
@dataclass
class SampleLabel:
    maneuver: str
    ambiguous: bool
    max_radius_km: float
    scenario: int
    start_index: int


@dataclass
class SyntheticDataset:
    samples: List[Sample]
    labels: List[SampleLabel]
    runway: np.ndarray
    maneuvers: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def subset(self, idx: Sequence[int]) -> "SyntheticDataset":
        return SyntheticDataset([self.samples[i] for i in idx], [self.labels[i] for i in idx], self.runway,
                                self.maneuvers)


def allocate_maneuvers(n: int, mix: Dict, rng: np.random.Generator) -> List[Maneuver]:
    """Exact-proportion allocation (largest remainder), then a seeded shuffle."""
    if n == 0:
        return []
    names = [Maneuver(m) for m in mix]
    weights = np.array([float(mix[m]) for m in mix])
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ConfigurationError("maneuver mix proportions must be non-negative and sum to 1")
    raw = weights * n
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    out = [m for m, c in zip(names, counts) for _ in range(c)]
    rng.shuffle(out)
    return out


def _label_windows(scn: Scenario, starts: np.ndarray, setting: ExperimentSetting, runway, idx: int):
    hist, fut = window_offsets(setting)
    labels = []
    for s in starts:
        anchor = s + hist[-1]
        horizon = s + fut[-1]
        ambiguous = False
        for m, branch in scn.branch_index.items():
            alt = scn.alternatives[m]
            if branch >= anchor and horizon < len(alt):
                if np.linalg.norm(alt[horizon] - scn.clean[horizon]) > AMBIGUITY_KM:
                    ambiguous = True
                    break
        pts = scn.trajectory.points[np.concatenate([s + hist, s + fut])]
        labels.append(SampleLabel(scn.maneuver.value, ambiguous,
                                  float(distance_to_runway(pts, runway).max()), idx, int(s)))
    return labels


def generate_dataset(spec: PatternSpec, n_scenarios: int, maneuver_mix: Dict,
                     setting: ExperimentSetting, stride: int = 1) -> SyntheticDataset:
    """Window ``n_scenarios`` generated flights; scenario i uses seed ``spec.seed + i``."""
    rng = np.random.default_rng(spec.seed)
    plan = allocate_maneuvers(n_scenarios, maneuver_mix, rng)
    runway = np.asarray(spec.runway, dtype=np.float64)
    samples: List[Sample] = []
    labels: List[SampleLabel] = []
    for i, maneuver in enumerate(plan):
        scn = generate_scenario(replace(spec, seed=spec.seed + i), maneuver)
        starts = window_starts(scn.trajectory, setting, stride)
        samples.extend(window_samples(scn.trajectory, setting, stride, agent_id=0, scene_id=i))
        labels.extend(_label_windows(scn, starts, setting, runway, i))
    return SyntheticDataset(samples, labels, runway, [m.value for m in Maneuver])


DEFAULT_MIX = {
    Maneuver.FULL_PATTERN.value: 0.3,
    Maneuver.DEPARTURE_STRAIGHT.value: 0.2,
    Maneuver.DEPARTURE_TURN.value: 0.2,
    Maneuver.LANDING.value: 0.15,
    Maneuver.GO_AROUND.value: 0.15,
}


def split_by_scenario(ds: SyntheticDataset, fraction: float, seed: Optional[int] = None):
    """Partition by scenario so windows of one flight never straddle the split."""
    scen = sorted({lab.scenario for lab in ds.labels})
    cut = int(round(len(scen) * fraction))
    first = set(scen[:cut])
    a = [i for i, lab in enumerate(ds.labels) if lab.scenario in first]
    b = [i for i, lab in enumerate(ds.labels) if lab.scenario not in first]
    return ds.subset(a), ds.subset(b)
