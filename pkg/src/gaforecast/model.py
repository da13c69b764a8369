"""Mode-query trajectory forecaster.

Pipeline per aircraft: normalise the history into its own frame, encode it
with self-attention blocks and max-pooling, add an MLP embedding of the global
pose, broadcast against k learnable mode queries, decode per-step flight
parameters (speed, yaw, pitch) plus a score per mode, roll the parameters out
into positions and map them back to the scene frame.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .autograd import Tensor, add, no_grad, reshape, scale, softplus
from .autograd import functional as F
from .autograd.nn import MLP, Linear, LayerNorm, Module, TransformerBlock, parameter
from .errors import ConfigurationError, DimensionError, FormatError
from .geometry import PoseFrame, Trajectory, normalize_batch, pose_features, to_global, to_local
from .kinematics import FlightParams, rollout_tensor

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"ASCW"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    D: int = 128
    n_blocks: int = 2
    n_heads: int = 8
    k: int = 5
    T_h: int = 11
    T_f: int = 12
    dt_out: float = 10.0
    pose_scale: float = 10.0
    # speed head output is multiplied by this (km/s) so its natural range is O(1)
    speed_scale: float = 0.05
    speed_activation: str = "softplus"
    coordinate_mode: str = "local"
    positional_normalization: bool = True
    angular_normalization: bool = True
    pose_embeddings: bool = True
    output_mode: str = "flight_params"
    xyz_scale: float = 1.0
    query_init_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.D % self.n_heads:
            raise ConfigurationError(f"D={self.D} is not divisible by n_heads={self.n_heads}")
        if self.k < 1 or self.T_h < 2 or self.T_f < 1 or self.n_blocks < 0:
            raise ConfigurationError("need k >= 1, T_h >= 2, T_f >= 1, n_blocks >= 0")
        if self.dt_out <= 0 or self.pose_scale <= 0 or self.speed_scale <= 0:
            raise ConfigurationError("dt_out, pose_scale and speed_scale must be positive")
        if self.speed_activation not in ("softplus", "linear"):
            raise ConfigurationError("speed_activation must be 'softplus' or 'linear'")
        if self.coordinate_mode not in ("local", "global"):
            raise ConfigurationError("coordinate_mode must be 'local' or 'global'")
        if self.output_mode not in ("flight_params", "direct_xyz"):
            raise ConfigurationError("output_mode must be 'flight_params' or 'direct_xyz'")

    def resolved(self) -> "ModelConfig":
        """Global coordinates ignore normalisation and pose-embedding switches."""
        if self.coordinate_mode == "global" and (
            self.positional_normalization or self.angular_normalization or self.pose_embeddings
        ):
            log.warning("global coordinates: normalisation and pose embeddings are disabled")
            return replace(self, positional_normalization=False, angular_normalization=False,
                           pose_embeddings=False)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def parameter_count(cfg: ModelConfig) -> int:
    """Closed-form number of scalar parameters.

    input 4D + time 2D + blocks n(8D^2 + 11D) + final norm 2D + pose (D^2 + 9D)
    + queries kD + heads, where a D -> 2D -> 2D -> out head has 6D^2 + 4D + out(2D + 1).
    """
    D = cfg.D
    total = 4 * D + 2 * D + cfg.n_blocks * (8 * D * D + 11 * D) + 2 * D + cfg.k * D
    if cfg.pose_embeddings:
        total += D * D + 9 * D

    def head(out):
        return 6 * D * D + 4 * D + out * (2 * D + 1)

    if cfg.output_mode == "flight_params":
        total += head(cfg.T_f) + 2 * head(2 * cfg.T_f)
    else:
        total += head(3 * cfg.T_f)
    return total + head(1)


@dataclass
class Prepared:
    """Network inputs for a batch, computed once from global histories."""

    local: np.ndarray
    origin: np.ndarray
    rot_yaw: np.ndarray
    rot_pitch: np.ndarray
    pose: np.ndarray

    def take(self, idx) -> "Prepared":
        return Prepared(self.local[idx], self.origin[idx], self.rot_yaw[idx], self.rot_pitch[idx], self.pose[idx])

    def to_local(self, points) -> np.ndarray:
        return to_local(points, self.origin, self.rot_yaw, self.rot_pitch)

    def to_global(self, points) -> np.ndarray:
        return to_global(points, self.origin, self.rot_yaw, self.rot_pitch)


@dataclass
class ForwardOutput:
    positions: Tensor
    logits: Tensor
    params: Dict[str, Tensor]


@dataclass
class ModePrediction:
    trajectories: np.ndarray
    scores: np.ndarray
    params: Optional[FlightParams]
    local_trajectories: np.ndarray
    frame: PoseFrame

    @property
    def k(self) -> int:
        return len(self.scores)


class ModeQueryForecaster(Module):
    def __init__(self, config: ModelConfig):
        cfg = config.resolved()
        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        D = cfg.D
        self.input_proj = Linear(3, D, rng)
        self.time_embed = Linear(1, D, rng)
        self.blocks = [TransformerBlock(D, cfg.n_heads, rng) for _ in range(cfg.n_blocks)]
        self.final_norm = LayerNorm(D)
        self.pose_mlp = MLP([7, D, D], rng) if cfg.pose_embeddings else None
        self.mode_queries = parameter(rng.normal(0.0, cfg.query_init_std, size=(cfg.k, D)))
        hidden = [D, 2 * D, 2 * D]
        if cfg.output_mode == "flight_params":
            self.speed_head = MLP(hidden + [cfg.T_f], rng)
            self.yaw_head = MLP(hidden + [2 * cfg.T_f], rng)
            self.pitch_head = MLP(hidden + [2 * cfg.T_f], rng)
            self.position_head = None
        else:
            self.speed_head = self.yaw_head = self.pitch_head = None
            self.position_head = MLP(hidden + [3 * cfg.T_f], rng)
        self.score_head = MLP(hidden + [1], rng)
        self._init_output_layers()
        self._time_index = (np.arange(cfg.T_h, dtype=np.float64) / cfg.T_h)[:, None]

    def _init_output_layers(self) -> None:
        # start near "straight ahead, level, nominal speed" with small output weights
        for head in (self.speed_head, self.yaw_head, self.pitch_head, self.position_head, self.score_head):
            if head is not None:
                head.layers[-1].weight.data *= 0.1
        if self.speed_head is not None:
            if self.config.speed_activation == "softplus":
                self.speed_head.layers[-1].bias.data[:] = math.log(math.e - 1.0)
            else:
                self.speed_head.layers[-1].bias.data[:] = 1.0
            self.yaw_head.layers[-1].bias.data[1::2] = 1.0
            self.pitch_head.layers[-1].bias.data[1::2] = 1.0

    # --------------------------------------------------------------- inputs
    def prepare(self, histories) -> Prepared:
        h = np.asarray(histories, dtype=np.float64)
        if h.ndim == 2:
            h = h[None]
        if h.ndim != 3 or h.shape[1:] != (self.config.T_h, 3):
            raise DimensionError(f"expected histories of shape (B, {self.config.T_h}, 3), got {h.shape}")
        cfg = self.config
        local, origin, ryaw, rpitch, yaw, pitch = normalize_batch(
            h, cfg.positional_normalization, cfg.angular_normalization)
        pose = pose_features(h[:, -1, :], yaw, pitch, cfg.pose_scale)
        return Prepared(local, origin, ryaw, rpitch, pose)

    # ---------------------------------------------------------- components
    def encode_motion(self, local) -> Tensor:
        """(B, T_h, 3) normalised history -> (B, D) motion feature."""
        x = add(self.input_proj(local), self.time_embed(self._time_index))
        for block in self.blocks:
            x = block(x)
        return F.max_pool_time(self.final_norm(x), axis=-2)

    def pose_embedding(self, pose) -> Tensor:
        return self.pose_mlp(pose)

    def decode(self, agent: Tensor):
        """(B, D) fused feature -> per-mode raw head outputs and (B, k) logits."""
        B = agent.shape[0]
        cfg = self.config
        q = add(reshape(agent, (B, 1, cfg.D)), self.mode_queries)
        logits = reshape(self.score_head(q), (B, cfg.k))
        if self.position_head is not None:
            xyz = scale(reshape(self.position_head(q), (B, cfg.k, cfg.T_f, 3)), cfg.xyz_scale)
            return {"xyz": xyz}, logits
        raw_speed = self.speed_head(q)
        speed = softplus(raw_speed) if cfg.speed_activation == "softplus" else raw_speed
        yaw = reshape(self.yaw_head(q), (B, cfg.k, cfg.T_f, 2))
        pitch = reshape(self.pitch_head(q), (B, cfg.k, cfg.T_f, 2))
        params = {
            "speed": scale(speed, cfg.speed_scale),
            "yaw_sin": yaw[..., 0], "yaw_cos": yaw[..., 1],
            "pitch_sin": pitch[..., 0], "pitch_cos": pitch[..., 1],
        }
        return params, logits

    def forward_prepared(self, prep: Prepared) -> ForwardOutput:
        cfg = self.config
        feat = self.encode_motion(prep.local)
        if self.pose_mlp is not None:
            feat = add(feat, self.pose_embedding(prep.pose))
        params, logits = self.decode(feat)
        start = prep.local[:, None, -1:, :]
        if "xyz" in params:
            positions = add(params["xyz"], start)
        else:
            positions = add(
                rollout_tensor(params["speed"], params["yaw_sin"], params["yaw_cos"],
                               params["pitch_sin"], params["pitch_cos"], cfg.dt_out),
                start,
            )
        return ForwardOutput(positions, logits, params)

    def forward(self, histories) -> ForwardOutput:
        return self.forward_prepared(self.prepare(histories))

    # ------------------------------------------------------------ inference
    def predict_batch(self, histories):
        """Global trajectories (B, k, T_f, 3) and scores (B, k) without building a graph."""
        prep = self.prepare(histories)
        with no_grad():
            out = self.forward_prepared(prep)
        B, k, T, _ = out.positions.shape
        glob = prep.to_global(out.positions.data.reshape(B, k * T, 3)).reshape(B, k, T, 3)
        return glob, softmax_np(out.logits.data)

    def forecast(self, histories) -> np.ndarray:
        return self.predict_batch(histories)[0]

    def predict(self, history) -> ModePrediction:
        pts = history.points if isinstance(history, Trajectory) else np.asarray(history, dtype=np.float64)
        prep = self.prepare(pts[None])
        with no_grad():
            out = self.forward_prepared(prep)
        local = out.positions.data[0]
        k, T, _ = local.shape
        glob = prep.to_global(local.reshape(1, k * T, 3)).reshape(k, T, 3)
        params = None
        if "speed" in out.params:
            params = FlightParams(*(out.params[n].data[0] for n in
                                    ("speed", "yaw_sin", "yaw_cos", "pitch_sin", "pitch_cos")))
        frame = PoseFrame(prep.origin[0], float(prep.rot_yaw[0]), float(prep.rot_pitch[0]))
        return ModePrediction(glob, softmax_np(out.logits.data[0]), params, local, frame)


def softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


# ---------------------------------------------------------------- checkpoints
def save_checkpoint(model: ModeQueryForecaster, path) -> None:
    """Write magic, version, config JSON, then named little-endian float64 blocks."""
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode()
    params = list(model.named_parameters())
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(cfg)), cfg,
             struct.pack("<I", len(params))]
    for name, p in params:
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw + struct.pack("<I", p.ndim))
        parts.append(struct.pack(f"<{p.ndim}Q", *p.shape))
        parts.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> ModeQueryForecaster:
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (magic {buf[:4]!r})")
    try:
        version, cfg_len = struct.unpack_from("<II", buf, 4)
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        off = 12
        cfg = ModelConfig.from_dict(json.loads(buf[off:off + cfg_len].decode()))
        off += cfg_len
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        state = {}
        for _ in range(n):
            (name_len,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off:off + name_len].decode()
            off += name_len
            (ndim,) = struct.unpack_from("<I", buf, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}Q", buf, off)
            off += 8 * ndim
            count = int(np.prod(shape)) if ndim else 1
            state[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
            off += 8 * count
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint ({exc})") from None
    model = ModeQueryForecaster(cfg)
    model.load_state_dict(state)
    return model
