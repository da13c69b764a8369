import json
import math

import numpy as np
import pytest

from gaforecast.autograd import Tensor
from gaforecast.data.io import make_sample
from gaforecast.errors import ConfigurationError, EmptyInputError, NumericError
from gaforecast.model import ModelConfig, ModeQueryForecaster, load_checkpoint
from gaforecast.training import Adam, AdamState, TrainConfig, adam_step, train, wta_loss, wta_select

TINY = ModelConfig(D=8, n_blocks=1, n_heads=2, k=2, T_h=4, T_f=3, dt_out=10.0, seed=1)


def toy_samples(n, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        v = rng.uniform(0.01, 0.05) * np.array([math.sin(a := rng.uniform(-3, 3)), math.cos(a), 0.0])
        start = rng.uniform(-2, 2, 3)
        hist = start + np.outer(np.arange(4), v)
        fut = hist[-1] + np.outer(np.arange(1, 4), 10 * v)
        out.append(make_sample(hist, fut, 1.0, 0.1, agent_id=i))
    return out


# ------------------------------------------------------------------ config
def test_lr_schedule():
    cfg = TrainConfig()
    assert cfg.lr_at(0) == cfg.lr_at(9) == 0.001
    assert cfg.lr_at(10) == 0.0005
    assert cfg.lr_at(15) == 0.00025
    assert cfg.lr_at(19) == 0.00025


@pytest.mark.parametrize("kw", [dict(lr_milestones=(15, 10)), dict(lr_milestones=(10, 10)),
                                dict(lr_milestones=(20,)), dict(lr=0.0), dict(lr=-1e-3),
                                dict(wta_mode="median")])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        TrainConfig(**kw)


# -------------------------------------------------------------- selection
def test_wta_single_mode():
    rng = np.random.default_rng(0)
    assert wta_select(rng.normal(size=(1, 5, 3)), rng.normal(size=(5, 3))) == 0


def test_wta_exact_match_wins():
    gt = np.random.default_rng(1).normal(size=(6, 3))
    pred = np.stack([gt, gt + 0.5])
    assert wta_select(pred, gt) == 0
    assert wta_select(pred[::-1], gt) == 1


def test_wta_ties_go_to_lowest_index():
    gt = np.zeros((4, 3))
    pred = np.stack([gt + [1, 0, 0], gt + [0, 1, 0], gt + [0, 0, 1]])
    assert wta_select(pred, gt) == 0


def brute_select(pred, gt, mode):
    best, best_score = 0, math.inf
    for j in range(pred.shape[0]):
        dists = [math.dist(pred[j, t], gt[t]) for t in range(gt.shape[0])]
        score = sum(dists) / len(dists) if mode == "ade" else dists[-1]
        if score < best_score:
            best, best_score = j, score
    return best


@pytest.mark.parametrize("mode", ["ade", "fde"])
def test_wta_matches_brute_force(mode):
    rng = np.random.default_rng(2)
    for _ in range(500):
        k, T = int(rng.integers(1, 7)), int(rng.integers(1, 13))
        pred, gt = rng.normal(size=(k, T, 3)), rng.normal(size=(T, 3))
        assert wta_select(pred, gt, mode) == brute_select(pred, gt, mode)


def test_wta_batched():
    rng = np.random.default_rng(3)
    pred, gt = rng.normal(size=(20, 4, 5, 3)), rng.normal(size=(20, 5, 3))
    np.testing.assert_array_equal(wta_select(pred, gt), [brute_select(p, g, "ade") for p, g in zip(pred, gt)])


# ------------------------------------------------------------------- loss
def test_loss_uniform_logits_is_log_k():
    rng = np.random.default_rng(4)
    pos = rng.normal(size=(3, 5, 4, 3))
    best = np.array([0, 2, 4])
    gt = pos[np.arange(3), best]
    total, reg, cls = wta_loss(Tensor(pos), Tensor(np.zeros((3, 5))), gt, best, TrainConfig())
    assert reg == 0.0
    assert cls == pytest.approx(math.log(5), abs=1e-12)
    assert total.item() == pytest.approx(math.log(5), abs=1e-12)


def test_loss_vanishes_for_confident_exact_mode():
    pos = np.random.default_rng(5).normal(size=(1, 3, 4, 3))
    logits = np.array([[-50.0, 50.0, -50.0]])
    total, _, _ = wta_loss(Tensor(pos), Tensor(logits), pos[0, 1][None], np.array([1]), TrainConfig())
    assert total.item() < 1e-30


def test_loss_gradient_only_reaches_selected_modes():
    rng = np.random.default_rng(6)
    pos = Tensor(rng.normal(size=(4, 3, 5, 3)), requires_grad=True)
    logits = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    best = np.array([2, 0, 1, 2])
    total, _, _ = wta_loss(pos, logits, rng.normal(size=(4, 5, 3)), best, TrainConfig())
    total.backward()
    mask = np.zeros((4, 3), dtype=bool)
    mask[np.arange(4), best] = True
    assert np.all(pos.grad[~mask] == 0.0)
    assert np.all(np.abs(pos.grad[mask]).sum(axis=(-1, -2)) > 0)
    assert np.all(logits.grad != 0.0)


def test_loss_weights():
    rng = np.random.default_rng(7)
    pos, logits, gt = rng.normal(size=(2, 2, 3, 3)), rng.normal(size=(2, 2)), rng.normal(size=(2, 3, 3))
    best = np.array([0, 1])
    total, reg, cls = wta_loss(Tensor(pos), Tensor(logits), gt, best,
                               TrainConfig(regression_weight=2.0, classification_weight=0.5))
    assert total.item() == pytest.approx(2.0 * reg + 0.5 * cls, rel=1e-14)


# ------------------------------------------------------------------- Adam
def test_adam_zero_gradient_is_noop():
    p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    state = AdamState()
    for _ in range(3):
        adam_step([p], [np.zeros(3)], state, 1e-3)
    np.testing.assert_array_equal(p.data, [1.0, -2.0, 3.0])


def test_adam_first_step_closed_form():
    p = Tensor(np.array([0.5]), requires_grad=True)
    adam_step([p], [np.array([1.0])], AdamState(), 0.001)
    # bias-corrected m / sqrt(v) is exactly 1 on the first step
    assert p.data[0] == pytest.approx(0.5 - 0.001 / (1.0 + 1e-8), abs=1e-15)


def test_adam_shape_mismatch():
    p = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ValueError):
        adam_step([p], [np.zeros(4)], AdamState(), 1e-3)
    with pytest.raises(ValueError):
        adam_step([p], [], AdamState(), 1e-3)


def test_adam_is_deterministic():
    def run():
        rng = np.random.default_rng(8)
        p = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        opt = Adam([p])
        for _ in range(25):
            p.grad = 2 * p.data + rng.normal(size=(4, 4))
            opt.step(1e-2)
        return p.data.tobytes()

    assert run() == run()


def test_adam_minimises_quadratic():
    p = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = Adam([p])
    for _ in range(2000):
        p.grad = 2 * p.data
        opt.step(0.01)
    assert np.abs(p.data).max() < 1e-2


# ------------------------------------------------------------------ loop
def test_empty_dataset():
    with pytest.raises(EmptyInputError):
        train(ModeQueryForecaster(TINY), [], TrainConfig(epochs=1, lr_milestones=()))


def test_non_finite_loss_aborts():
    m = ModeQueryForecaster(TINY)
    m.score_head.layers[-1].bias.data[0] = np.nan
    with pytest.raises(NumericError, match=r"epoch 0 batch 0 .*parameter norm"):
        train(m, toy_samples(4), TrainConfig(epochs=1, lr_milestones=()))


def test_training_reduces_loss_and_logs(tmp_path):
    samples = toy_samples(40)
    cfg = TrainConfig(epochs=6, batch_size=8, lr=5e-3, lr_milestones=(4,))
    res = train(ModeQueryForecaster(TINY), samples, cfg, val_samples=samples[:10], out_dir=tmp_path)
    assert res.history[-1].loss < res.history[0].loss
    lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 6
    rows = [json.loads(s) for s in lines]
    for r in rows:
        assert {"epoch", "loss", "lr", "val_minade", "val_minfde"} <= set(r)
    assert [r["lr"] for r in rows] == [cfg.lr_at(e) for e in range(6)]
    assert sum(res.mode_share) == pytest.approx(1.0)
    assert res.final_checkpoint.exists() and res.best_checkpoint.exists()
    best = min(rows, key=lambda r: r["val_minfde"])
    assert res.best_epoch == best["epoch"]
    load_checkpoint(res.best_checkpoint)


def test_identical_seeds_identical_logs(tmp_path):
    samples = toy_samples(20)
    cfg = TrainConfig(epochs=3, batch_size=6, lr_milestones=(2,), seed=3)
    for name in ("a", "b"):
        train(ModeQueryForecaster(TINY), samples, cfg, val_samples=samples[:5], out_dir=tmp_path / name)
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()
    assert (tmp_path / "a" / "model.ckpt").read_bytes() == (tmp_path / "b" / "model.ckpt").read_bytes()


def test_max_steps_stops_early():
    res = train(ModeQueryForecaster(TINY), toy_samples(20), TrainConfig(epochs=5, batch_size=4, lr_milestones=()),
                max_steps=3)
    assert len(res.history) == 1 and res.best_epoch is None
