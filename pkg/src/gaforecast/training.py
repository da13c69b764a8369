"""Winner-takes-all training: best-mode selection, loss, Adam and the epoch loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .autograd import Tensor, add, scale
from .autograd import functional as F
from .autograd.nn import clip_grad_norm
from .data.io import Sample, stack_samples
from .errors import ConfigurationError, EmptyInputError, NumericError
from .evaluation import batch_min_ade, batch_min_fde
from .model import ModeQueryForecaster, save_checkpoint

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    lr_milestones: Tuple[int, ...] = (10, 15)
    lr_decay: float = 0.5
    beta_smooth_l1: float = 1.0
    regression_weight: float = 1.0
    classification_weight: float = 1.0
    grad_clip: float = 5.0
    wta_mode: str = "ade"
    seed: int = 0

    def __post_init__(self):
        self.lr_milestones = tuple(int(m) for m in self.lr_milestones)
        if self.lr <= 0:
            raise ConfigurationError("lr must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")
        ms = self.lr_milestones
        if any(b <= a for a, b in zip(ms, ms[1:])) or any(m >= self.epochs or m < 0 for m in ms):
            raise ConfigurationError(f"milestones {ms} must be strictly increasing and < epochs={self.epochs}")
        if self.wta_mode not in ("ade", "fde"):
            raise ConfigurationError("wta_mode must be 'ade' or 'fde'")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch: decayed once per milestone reached."""
        passed = sum(1 for m in self.lr_milestones if epoch >= m)
        return self.lr * self.lr_decay ** passed

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_milestones"] = list(self.lr_milestones)
        return d


# ------------------------------------------------------------ WTA selection
def wta_select(pred_local: np.ndarray, gt_local: np.ndarray, mode: str = "ade") -> np.ndarray:
    """Index of the mode closest to the ground truth; ties go to the lowest index.

    ``pred_local`` is (..., k, T_f, 3) and ``gt_local`` is (..., T_f, 3).
    """
    dist = np.linalg.norm(pred_local - gt_local[..., None, :, :], axis=-1)
    score = dist.mean(axis=-1) if mode == "ade" else dist[..., -1]
    return np.argmin(score, axis=-1)


def wta_loss(positions: Tensor, logits: Tensor, gt_local: np.ndarray, best: np.ndarray,
             cfg: TrainConfig) -> Tuple[Tensor, float, float]:
    """Smooth-L1 on the winning mode's positions plus cross-entropy toward it.

    Returns ``(total, regression, classification)``.
    """
    best = np.asarray(best, dtype=np.intp)
    rows = np.arange(len(best))
    chosen = positions[rows, best]
    reg = F.smooth_l1(chosen, gt_local, cfg.beta_smooth_l1)
    cls = F.cross_entropy(logits, best)
    total = add(scale(reg, cfg.regression_weight), scale(cls, cfg.classification_weight))
    return total, reg.item(), cls.item()


# ------------------------------------------------------------------ Adam
@dataclass
class AdamState:
    t: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: AdamState, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update applied to ``params`` in place."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(grads) != len(params) or len(state.m) != len(params):
        raise ValueError("params, grads and optimizer state disagree in length")
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


class Adam:
    def __init__(self, params: Sequence[Tensor], betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def step(self, lr: float) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, lr, self.betas, self.eps)


# ------------------------------------------------------------- train loop
@dataclass
class EpochRecord:
    epoch: int
    loss: float
    lr: float
    val_minade: Optional[float] = None
    val_minfde: Optional[float] = None
    mode_share: List[float] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TrainResult:
    history: List[EpochRecord]
    best_epoch: Optional[int]
    final_checkpoint: Optional[Path] = None
    best_checkpoint: Optional[Path] = None

    @property
    def mode_share(self) -> List[float]:
        return self.history[-1].mode_share if self.history else []


def validation_metrics(model: ModeQueryForecaster, samples: Sequence[Sample], batch_size: int = 256):
    hist, fut = stack_samples(samples)
    ade, fde = [], []
    for i in range(0, len(hist), batch_size):
        pred = model.forecast(hist[i:i + batch_size])
        ade.append(batch_min_ade(pred, fut[i:i + batch_size]))
        fde.append(batch_min_fde(pred, fut[i:i + batch_size]))
    return float(np.concatenate(ade).mean()), float(np.concatenate(fde).mean())


def train(model: ModeQueryForecaster, samples: Sequence[Sample], cfg: TrainConfig,
          val_samples: Optional[Sequence[Sample]] = None, out_dir=None,
          max_steps: Optional[int] = None) -> TrainResult:
    """Optimise ``model`` in place with WTA loss and a stepped learning-rate schedule.

    Writes ``metrics.jsonl``, ``model.ckpt`` and (with validation data)
    ``model_best.ckpt`` under ``out_dir`` when one is given.
    """
    if not samples:
        raise EmptyInputError("training set is empty")
    hist, fut = stack_samples(samples)
    prep = model.prepare(hist)
    gt_local = prep.to_local(fut)
    n = len(hist)
    k = model.config.k
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    opt = Adam(params)

    out_dir = Path(out_dir) if out_dir is not None else None
    metrics_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_file = open(out_dir / "metrics.jsonl", "w")

    history: List[EpochRecord] = []
    best_fde, best_epoch = math.inf, None
    steps = 0
    try:
        for epoch in range(cfg.epochs):
            lr = cfg.lr_at(epoch)
            order = rng.permutation(n)
            losses, wins = [], np.zeros(k)
            for b, start in enumerate(range(0, n, cfg.batch_size)):
                idx = order[start:start + cfg.batch_size]
                out = model.forward_prepared(prep.take(idx))
                best = wta_select(out.positions.data, gt_local[idx], cfg.wta_mode)
                loss, _, _ = wta_loss(out.positions, out.logits, gt_local[idx], best, cfg)
                value = loss.item()
                if not math.isfinite(value):
                    norm = math.sqrt(sum(float(np.sum(p.data ** 2)) for p in params))
                    raise NumericError(
                        f"non-finite loss at epoch {epoch} batch {b} (parameter norm {norm:.4g})")
                model.zero_grad()
                loss.backward()
                clip_grad_norm(params, cfg.grad_clip)
                opt.step(lr)
                losses.append(value * len(idx))
                wins += np.bincount(best, minlength=k)
                steps += 1
                if max_steps is not None and steps >= max_steps:
                    break

            rec = EpochRecord(epoch, float(np.sum(losses) / max(wins.sum(), 1)), lr,
                              mode_share=(wins / max(wins.sum(), 1)).tolist())
            if val_samples:
                rec.val_minade, rec.val_minfde = validation_metrics(model, val_samples)
                if rec.val_minfde < best_fde:
                    best_fde, best_epoch = rec.val_minfde, epoch
                    if out_dir is not None:
                        save_checkpoint(model, out_dir / "model_best.ckpt")
            history.append(rec)
            log.info("epoch %d loss %.4f lr %.2e", epoch, rec.loss, lr)
            if metrics_file is not None:
                metrics_file.write(rec.to_json() + "\n")
                metrics_file.flush()
            if max_steps is not None and steps >= max_steps:
                break
    finally:
        if metrics_file is not None:
            metrics_file.close()

    result = TrainResult(history, best_epoch)
    if out_dir is not None:
        result.final_checkpoint = out_dir / "model.ckpt"
        save_checkpoint(model, result.final_checkpoint)
        if best_epoch is not None:
            result.best_checkpoint = out_dir / "model_best.ckpt"
    return result
