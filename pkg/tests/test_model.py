import math

import numpy as np
import pytest

from gaforecast.autograd import Tensor, mul, no_grad, tsum
from gaforecast.autograd.gradcheck import check_gradients
from gaforecast.errors import ConfigurationError, DimensionError, FormatError
from gaforecast.geometry import PoseFrame, pose_features, yaw_rotation_z
from gaforecast.model import ModelConfig, ModeQueryForecaster, load_checkpoint, parameter_count, save_checkpoint

TINY = ModelConfig(D=8, n_blocks=1, n_heads=2, k=2, T_h=4, T_f=3, seed=1)


def histories(rng, B, T=4):
    start = rng.uniform(-3, 3, size=(B, 1, 3))
    return start + np.cumsum(rng.normal(0.0, 0.05, size=(B, T, 3)) + [0.02, 0.03, 0.0], axis=1)


def zero_module(mod):
    for p in mod.parameters():
        p.data[...] = 0.0


# ------------------------------------------------------------------- config
def test_config_invariants():
    with pytest.raises(ConfigurationError):
        ModelConfig(D=10, n_heads=4)
    with pytest.raises(ConfigurationError):
        ModelConfig(k=0)
    with pytest.raises(ConfigurationError):
        ModelConfig(T_h=1)
    with pytest.raises(ConfigurationError):
        ModelConfig(T_f=0)
    with pytest.raises(ConfigurationError):
        ModelConfig(output_mode="polar")


def test_global_mode_disables_normalisation(caplog):
    cfg = ModelConfig(coordinate_mode="global").resolved()
    assert not (cfg.positional_normalization or cfg.angular_normalization or cfg.pose_embeddings)
    assert "global coordinates" in caplog.text


@pytest.mark.parametrize("cfg", [
    ModelConfig(),
    ModelConfig(output_mode="direct_xyz"),
    ModelConfig(pose_embeddings=False, k=20, T_h=40),
    TINY,
])
def test_parameter_count_closed_form(cfg):
    assert ModeQueryForecaster(cfg).num_parameters() == parameter_count(cfg)


def test_default_parameter_count():
    # 4D + 2D + 2(8D^2 + 11D) + 2D + 5D + (D^2 + 9D) + 3 heads + score head, D = 128
    D = 128
    head = lambda out: 6 * D * D + 4 * D + out * (2 * D + 1)
    expected = 4 * D + 2 * D + 2 * (8 * D * D + 11 * D) + 2 * D + 5 * D + D * D + 9 * D
    expected += head(12) + 2 * head(24) + head(1)
    assert parameter_count(ModelConfig()) == expected == 695101


# ------------------------------------------------------------------- encoder
def test_identical_tokens_identical_without_time_embedding():
    m = ModeQueryForecaster(TINY)
    zero_module(m.time_embed)
    local = Tensor(np.tile([[0.1, -0.2, 0.05]], (1, 4, 1)))
    x = m.input_proj(local) + m.time_embed(m._time_index)
    for blk in m.blocks:
        x = blk(x)
    np.testing.assert_allclose(x.data, np.broadcast_to(x.data[:, :1], x.shape), atol=1e-14)


def test_time_embedding_breaks_symmetry():
    m = ModeQueryForecaster(TINY)
    x = m.input_proj(Tensor(np.zeros((1, 4, 3)))) + m.time_embed(m._time_index)
    assert not np.allclose(x.data[0, 0], x.data[0, 1])


def test_zero_encoder_weights_give_constant_feature():
    m = ModeQueryForecaster(TINY)
    for mod in [m.input_proj, m.time_embed] + m.blocks:
        zero_module(mod)
    rng = np.random.default_rng(0)
    a = m.encode_motion(rng.normal(size=(1, 4, 3))).data
    b = m.encode_motion(rng.normal(size=(1, 4, 3))).data
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, m.final_norm.bias.data[None])


def test_encoder_gradient_wrt_history():
    m = ModeQueryForecaster(TINY)
    x = Tensor(np.random.default_rng(1).normal(size=(2, 4, 3)), requires_grad=True)
    w = np.random.default_rng(2).normal(size=(2, 8))
    assert check_gradients(lambda: tsum(mul(m.encode_motion(x), w)), [x]) < 1e-4


# ---------------------------------------------------------------------- pose
def test_pose_input_convention():
    f = PoseFrame(np.zeros(3), 0.0, 0.0).features(10.0)
    np.testing.assert_array_equal(f, [0, 0, 0, 0, 1, 0, 1])


def test_pose_embedding_periodic_in_yaw():
    m = ModeQueryForecaster(TINY)
    g = 0.7
    a = m.pose_embedding(pose_features(np.array([[1.0, 2.0, 0.3]]), np.array([g]), np.array([0.1]), 10.0))
    b = m.pose_embedding(pose_features(np.array([[1.0, 2.0, 0.3]]), np.array([g + 2 * math.pi]),
                                       np.array([0.1]), 10.0))
    np.testing.assert_allclose(a.data, b.data, atol=1e-14)


def test_pose_mlp_gradient():
    m = ModeQueryForecaster(TINY)
    pose = pose_features(np.random.default_rng(3).normal(size=(3, 3)), np.array([0.1, 2.0, -1.0]),
                         np.array([0.0, 0.2, -0.1]), 10.0)
    w = np.random.default_rng(4).normal(size=(3, 8))
    assert check_gradients(lambda: tsum(mul(m.pose_embedding(pose), w)), m.pose_mlp.parameters()) < 1e-4


# -------------------------------------------------------------------- decoder
def test_single_mode_score_is_one():
    m = ModeQueryForecaster(ModelConfig(D=8, n_blocks=1, n_heads=2, k=1, T_h=4, T_f=3))
    _, scores = m.predict_batch(histories(np.random.default_rng(5), 3))
    np.testing.assert_array_equal(scores, 1.0)


def test_identical_queries_identical_modes():
    m = ModeQueryForecaster(TINY)
    m.mode_queries.data[1] = m.mode_queries.data[0]
    with no_grad():
        params, logits = m.decode(Tensor(np.random.default_rng(6).normal(size=(2, 8))))
    for v in params.values():
        np.testing.assert_array_equal(v.data[:, 0], v.data[:, 1])
    np.testing.assert_array_equal(logits.data[:, 0], logits.data[:, 1])


def test_decoder_gradient_all_heads():
    m = ModeQueryForecaster(TINY)
    feat = Tensor(np.random.default_rng(7).normal(size=(2, 8)), requires_grad=True)
    rng = np.random.default_rng(8)
    weights = {name: rng.normal(size=(2, 2, 3)) for name in ("speed", "yaw_sin", "yaw_cos", "pitch_sin", "pitch_cos")}
    wl = rng.normal(size=(2, 2))

    def fn():
        params, logits = m.decode(feat)
        total = tsum(mul(logits, wl))
        for name, w in weights.items():
            total = total + tsum(mul(params[name], w))
        return total

    heads = [m.speed_head, m.yaw_head, m.pitch_head, m.score_head]
    inputs = [feat, m.mode_queries] + [p for h in heads for p in h.parameters()]
    assert check_gradients(fn, inputs) < 1e-4


def test_direct_xyz_head_size():
    cfg = ModelConfig(D=8, n_blocks=1, n_heads=2, k=2, T_h=4, T_f=3, output_mode="direct_xyz")
    m = ModeQueryForecaster(cfg)
    assert m.position_head.layers[-1].weight.shape == (16, 9)
    assert m.speed_head is None
    out = m.forward(histories(np.random.default_rng(9), 2))
    assert out.positions.shape == (2, 2, 3, 3)


# -------------------------------------------------------------------- forward
def test_forward_shapes_and_scores():
    m = ModeQueryForecaster(ModelConfig(seed=3))
    rng = np.random.default_rng(10)
    pred = m.predict(histories(rng, 1, 11)[0])
    assert pred.trajectories.shape == (5, 12, 3) and pred.scores.shape == (5,)
    assert abs(pred.scores.sum() - 1.0) < 1e-9
    assert np.all(np.isfinite(pred.trajectories))
    trajs, scores = m.predict_batch(histories(rng, 7, 11))
    assert trajs.shape == (7, 5, 12, 3)
    np.testing.assert_allclose(scores.sum(axis=1), 1.0, atol=1e-9)


def test_angle_validity():
    m = ModeQueryForecaster(TINY)
    pred = m.predict(histories(np.random.default_rng(11), 1)[0])
    assert np.all(np.abs(pred.params.yaw) <= math.pi)
    assert np.all(np.abs(pred.params.pitch) <= math.pi / 2)


def test_local_and_global_agree():
    m = ModeQueryForecaster(TINY)
    pred = m.predict(histories(np.random.default_rng(12), 1)[0])
    np.testing.assert_allclose(pred.frame.to_global(pred.local_trajectories.reshape(-1, 3)).reshape(2, 3, 3),
                               pred.trajectories, atol=1e-12)


def test_stationary_history_is_finite():
    m = ModeQueryForecaster(TINY)
    trajs, scores = m.predict_batch(np.zeros((1, 4, 3)))
    assert np.all(np.isfinite(trajs)) and np.all(np.isfinite(scores))


def test_history_shape_mismatch():
    with pytest.raises(DimensionError):
        ModeQueryForecaster(TINY).predict_batch(np.zeros((2, 5, 3)))


def test_equivariance_with_pose_path_zeroed():
    m = ModeQueryForecaster(ModelConfig(D=16, n_blocks=2, n_heads=2, k=3, T_h=6, T_f=4, seed=2))
    zero_module(m.pose_mlp.layers[-1])
    rng = np.random.default_rng(13)
    h = histories(rng, 4, 6)
    moved = np.stack([yaw_rotation_z(x, 1.1) for x in h]) + np.array([10.0, -5.0, 0.2])
    a, b = m.forward(h), m.forward(moved)
    np.testing.assert_allclose(a.positions.data, b.positions.data, atol=1e-9, rtol=0)
    np.testing.assert_allclose(a.logits.data, b.logits.data, atol=1e-9, rtol=0)
    # the global outputs follow the rigid motion
    ga, _ = m.predict_batch(h)
    gb, _ = m.predict_batch(moved)
    expected = np.stack([yaw_rotation_z(x.reshape(-1, 3), 1.1).reshape(x.shape) for x in ga]) + [10.0, -5.0, 0.2]
    np.testing.assert_allclose(gb, expected, atol=1e-9)


def test_pose_path_breaks_equivariance():
    m = ModeQueryForecaster(ModelConfig(D=16, n_blocks=1, n_heads=2, k=3, T_h=6, T_f=4, seed=2))
    h = histories(np.random.default_rng(14), 2, 6)
    assert not np.allclose(m.forward(h).positions.data, m.forward(h + [3.0, 0, 0]).positions.data)


def test_full_pipeline_gradient():
    from gaforecast.training import TrainConfig, wta_loss, wta_select
    m = ModeQueryForecaster(TINY)
    rng = np.random.default_rng(15)
    h = histories(rng, 3)
    prep = m.prepare(h)
    gt = prep.to_local(h[:, -1:, :] + np.cumsum(rng.normal(0, 0.3, size=(3, 3, 3)), axis=1))
    best = wta_select(m.forward_prepared(prep).positions.data, gt)
    cfg = TrainConfig()

    def fn():
        out = m.forward_prepared(prep)
        return wta_loss(out.positions, out.logits, gt, best, cfg)[0]

    assert check_gradients(fn, m.parameters()) < 1e-4


def test_forward_is_deterministic():
    h = histories(np.random.default_rng(16), 3, 11)
    a = ModeQueryForecaster(ModelConfig(seed=4)).predict_batch(h)[0]
    b = ModeQueryForecaster(ModelConfig(seed=4)).predict_batch(h)[0]
    assert a.tobytes() == b.tobytes()


# ---------------------------------------------------------------- checkpoints
def test_checkpoint_round_trip(tmp_path):
    m = ModeQueryForecaster(ModelConfig(D=16, n_heads=4, seed=7, speed_activation="linear"))
    path = tmp_path / "m.ckpt"
    save_checkpoint(m, path)
    assert path.read_bytes()[:4] == b"ASCW"
    back = load_checkpoint(path)
    assert back.config == m.config
    for (na, pa), (nb, pb) in zip(m.named_parameters(), back.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()
    save_checkpoint(back, tmp_path / "again.ckpt")
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(FormatError):
        load_checkpoint(path)
    save_checkpoint(ModeQueryForecaster(TINY), path)
    path.write_bytes(path.read_bytes()[:-9])
    with pytest.raises(FormatError):
        load_checkpoint(path)
