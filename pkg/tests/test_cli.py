import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from gaforecast.cli import main
from gaforecast.config import load_config
from gaforecast.data.io import read_canonical_dataset
from gaforecast.data.settings import get_setting
from gaforecast.model import load_checkpoint

SMALL = """\
[experiment]
seed = 2

[model]
D = 16
n_heads = 2
n_blocks = 1

[train]
epochs = 2
lr_milestones = 1
batch_size = 16

[synth]
n_scenarios = 5
stride = 15
"""


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.ini"
    cfg.write_text(SMALL)
    out = root / "synth"
    assert main(["synth", "--config", str(cfg), "--out", str(out)]) == 0
    return root, cfg, out


@pytest.fixture(scope="module")
def trained(synth_dir):
    root, cfg, data = synth_dir
    out = root / "train"
    assert main(["train", "--config", str(cfg), "--data", str(data / "train.ascd"),
                 "--val", str(data / "test.ascd"), "--out", str(out)]) == 0
    return out


def test_synth_artifacts(synth_dir):
    _, _, out = synth_dir
    train, test = read_canonical_dataset(out / "train.ascd"), read_canonical_dataset(out / "test.ascd")
    assert len(train) > 0 and len(test) > 0
    assert (train[0].T_h, train[0].T_f) == (11, 12)
    labels = json.loads((out / "labels.json").read_text())
    assert len(labels["train"]) == len(train) and len(labels["runway"]) == 2
    run = load_config(out / "config.resolved")
    assert run.data.train.endswith("train.ascd") and len(run.data.runway) == 6


def test_train_artifacts(trained):
    rows = [json.loads(s) for s in (trained / "metrics.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in rows] == [0, 1]
    assert rows[1]["lr"] == 0.0005
    model = load_checkpoint(trained / "model.ckpt")
    assert (model.config.T_h, model.config.T_f, model.config.k) == (11, 12, 5)
    assert (trained / "model_best.ckpt").exists() and (trained / "config.resolved").exists()


def test_eval_predict_bench(synth_dir, trained, tmp_path, capsys):
    _, cfg, data = synth_dir
    test = str(data / "test.ascd")
    assert main(["eval", "--config", str(cfg), "--data", test, "--checkpoint", str(trained / "model.ckpt"),
                 "--out", str(tmp_path / "e"), "--per-sample"]) == 0
    rep = json.loads((tmp_path / "e" / "report.json").read_text())
    assert rep["n_samples"] == len(read_canonical_dataset(test)) == len(rep["per_sample"])
    assert rep["minade"] >= 0 and rep["minfde"] >= 0

    for baseline in ("cv", "nn", "nn_raw"):
        assert main(["eval", "--config", str(data / "config.resolved"), "--baseline", baseline,
                     "--out", str(tmp_path / baseline)]) == 0
        assert (tmp_path / baseline / "report.json").exists()
    assert main(["eval", "--config", str(data / "config.resolved"), "--baseline", "cv", "--radius-km", "5",
                 "--out", str(tmp_path / "r")]) == 0

    assert main(["predict", "--data", test, "--checkpoint", str(trained / "model.ckpt"),
                 "--out", str(tmp_path / "p")]) == 0
    preds = json.loads((tmp_path / "p" / "predictions.json").read_text())
    assert len(preds) == rep["n_samples"]
    p = preds[0]
    assert np.array(p["trajectories"]).shape == (5, 12, 3) and sum(p["scores"]) == pytest.approx(1.0)

    assert main(["bench", "--checkpoint", str(trained / "model.ckpt"), "--trials", "2", "--warmup", "1",
                 "--out", str(tmp_path / "b")]) == 0
    with open(tmp_path / "b" / "latency.csv") as fh:
        table = list(csv.reader(fh))
    assert table[0] == ["batch_size", "median_ms", "p90_ms"]
    assert [int(r[0]) for r in table[1:]] == [1, 4, 8, 16, 32]


def test_resolved_config_reproduces_run(trained, tmp_path):
    assert main(["train", "--config", str(trained / "config.resolved"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "metrics.jsonl").read_bytes() == (trained / "metrics.jsonl").read_bytes()
    assert (tmp_path / "model.ckpt").read_bytes() == (trained / "model.ckpt").read_bytes()
    assert (tmp_path / "config.resolved").read_text() == (trained / "config.resolved").read_text()


def test_setting_flag_sets_windows(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(SMALL.replace("n_scenarios = 5", "n_scenarios = 2"))
    assert main(["synth", "--config", str(cfg), "--setting", "atp-16s", "--out", str(tmp_path / "s")]) == 0
    s = read_canonical_dataset(tmp_path / "s" / "train.ascd")[0]
    assert (s.T_h, s.T_f) == (3, 24)
    run = load_config(tmp_path / "s" / "config.resolved")
    assert run.setting.name == "atp-16s"
    mc = run.model_config()
    assert (mc.T_h, mc.T_f) == (3, 24)
    trajair = load_config(None)
    trajair.setting = get_setting("trajair-11s")
    assert (trajair.model_config().T_h, trajair.model_config().T_f) == (11, 12)


def test_eval_ablation_direct_xyz(synth_dir, tmp_path):
    _, cfg, data = synth_dir
    assert main(["eval", "--config", str(data / "config.resolved"), "--ablation", "direct_xyz",
                 "--out", str(tmp_path)]) == 0
    model = load_checkpoint(tmp_path / "model.ckpt")
    assert model.config.output_mode == "direct_xyz"
    assert model.position_head.layers[-1].weight.shape[1] == 3 * 12
    assert (tmp_path / "report.json").exists()


def test_ablation_mismatching_checkpoint(synth_dir, trained, tmp_path):
    _, cfg, data = synth_dir
    code = main(["eval", "--config", str(cfg), "--data", str(data / "test.ascd"), "--ablation", "direct_xyz",
                 "--checkpoint", str(trained / "model.ckpt"), "--out", str(tmp_path)])
    assert code == 1


def test_usage_and_config_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-flag"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1
    bad = tmp_path / "bad.ini"
    bad.write_text("[model]\nwidth = 3\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "[model] width" in capsys.readouterr().err
    assert main(["train", "--out", str(tmp_path)]) == 1
    assert main(["train", "--ablation", "bogus", "--out", str(tmp_path)]) == 1
    assert main(["train", "--setting", "nowhere-9s", "--out", str(tmp_path)]) == 1


def test_data_errors(tmp_path, synth_dir):
    bad = tmp_path / "bad.ascd"
    bad.write_bytes(b"XXXX" + bytes(64))
    assert main(["eval", "--baseline", "cv", "--data", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["eval", "--baseline", "cv", "--data", str(tmp_path / "missing.ascd"), "--out", str(tmp_path)]) == 2
    _, cfg, data = synth_dir
    # windows from another setting do not fit the model
    assert main(["train", "--config", str(cfg), "--setting", "atp-16s", "--data", str(data / "train.ascd"),
                 "--out", str(tmp_path / "t")]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_code(synth_dir, tmp_path):
    _, _, data = synth_dir
    cfg = tmp_path / "explode.ini"
    cfg.write_text(SMALL.replace("batch_size = 16", "batch_size = 4\nlr = 1e300"))
    code = main(["train", "--config", str(cfg), "--data", str(data / "train.ascd"), "--out", str(tmp_path)])
    assert code == 3


def test_preprocess_scene_files(tmp_path):
    lines = []
    for f in range(40):
        lines.append(f"{f} 1 {0.03 * f:.6f} 0.5 0.4")
        lines.append(f"{f} 2 1.0 {-0.025 * f:.6f} 0.6")
    (tmp_path / "scene.txt").write_text("\n".join(lines) + "\n")
    cfg = tmp_path / "pp.ini"
    cfg.write_text("[experiment]\nsetting = trajair-11s\nfuture_rate = 1.0\nfuture_seconds = 12\n"
                   "[data]\nradius_km = none\n")
    assert main(["preprocess", str(tmp_path / "scene.txt"), "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    samples = read_canonical_dataset(tmp_path / "o" / "dataset.ascd")
    assert len(samples) == 2 * (40 - 23 + 1)
    assert {s.agent_id for s in samples} == {1, 2}


def test_thread_limit_env(tmp_path, monkeypatch):
    monkeypatch.setenv("ASCENT_THREADS", "1")
    assert main(["bench", "--batch-sizes", "1,2", "--trials", "1", "--warmup", "0", "--out", str(tmp_path)]) == 0
    monkeypatch.setenv("ASCENT_THREADS", "many")
    assert main(["bench", "--out", str(tmp_path)]) == 1


def test_config_reference_lists_every_section(capsys):
    assert main(["config-reference"]) == 0
    page = capsys.readouterr().out
    for token in ("[experiment]", "[model]", "[train]", "[data]", "[synth]", "lr_milestones", "direct_xyz"):
        assert token in page


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "gaforecast", "config-reference"], capture_output=True, text=True)
    assert res.returncode == 0 and "[model]" in res.stdout
