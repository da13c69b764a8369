"""Command-line workflows: preprocess, synth, train, eval, predict, bench.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure. ``ASCENT_THREADS`` caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .config import RunConfig, load_config, parse_ablations, reference_page, save_config
from .data.io import (make_tartan_splits, read_canonical_dataset, read_scene_file, scene_samples,
                      stack_samples, write_canonical_dataset)
from .data.settings import get_setting
from .errors import (ConfigurationError, DimensionError, EmptyInputError, EmptySceneError, FormatError,
                     InsufficientHistoryError, NumericError)
from .evaluation import (ConstantVelocity, NearestNeighborBank, cross_dataset_eval, latency_bench,
                         write_latency_csv)
from .model import ModeQueryForecaster, load_checkpoint
from .synthetic import DEFAULT_MIX, PatternSpec, generate_dataset, split_by_scenario
from .training import train

log = logging.getLogger("gaforecast")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--setting", help="named experiment setting (overrides the config)")
    common.add_argument("--seed", type=int, help="run seed (overrides the config)")
    common.add_argument("--out", default="runs/latest", help="output directory")
    common.add_argument("--ablation", action="append", default=[], help="ablation switch; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="gaforecast", description="Multi-modal aircraft trajectory forecasting.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("preprocess", parents=[common], help="scene text files -> canonical dataset")
    s.add_argument("inputs", nargs="+", help="scene files")
    s.add_argument("--split", choices=("all", "s1", "s2"), help="file split (overrides data.split)")

    s = sub.add_parser("synth", parents=[common], help="generate synthetic traffic-pattern datasets")
    s.add_argument("--n-scenarios", type=int)

    s = sub.add_parser("train", parents=[common], help="train a model")
    s.add_argument("--data", help="training dataset (overrides data.train)")
    s.add_argument("--val", help="validation dataset (overrides data.val)")

    s = sub.add_parser("eval", parents=[common], help="evaluate a model or baseline")
    s.add_argument("--data", help="test dataset (overrides data.test)")
    s.add_argument("--checkpoint")
    s.add_argument("--baseline", choices=("cv", "nn", "nn_raw"))
    s.add_argument("--train-data", help="train a fresh model (or build the NN bank) from this dataset first")
    s.add_argument("--radius-km", type=float, help="drop samples leaving this radius around the runway")
    s.add_argument("--per-sample", action="store_true")

    s = sub.add_parser("predict", parents=[common], help="dump k trajectories and scores per sample")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint", required=True)

    s = sub.add_parser("bench", parents=[common], help="inference latency per batch size")
    s.add_argument("--checkpoint")
    s.add_argument("--batch-sizes", default="1,4,8,16,32")
    s.add_argument("--warmup", type=int, default=3)
    s.add_argument("--trials", type=int, default=20)

    sub.add_parser("config-reference", help="print every config key with its default")
    return p


# ---------------------------------------------------------------- helpers
def resolve_run(args) -> RunConfig:
    run = load_config(args.config)
    if args.setting:
        run.setting = get_setting(args.setting)
    if args.seed is not None:
        run.seed = args.seed
    if args.ablation:
        run.ablations = parse_ablations(list(run.ablations) + args.ablation)
    return run


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_samples(path, what: str):
    if not path:
        raise ConfigurationError(f"no {what} dataset given (flag or [data] key)")
    samples = read_canonical_dataset(path)
    if not samples:
        raise EmptyInputError(f"{path}: dataset is empty")
    return samples


def _check_window(samples, model_cfg, path):
    th, tf = samples[0].T_h, samples[0].T_f
    if (th, tf) != (model_cfg.T_h, model_cfg.T_f):
        raise DimensionError(f"{path}: windows are {th}->{tf} steps, model expects {model_cfg.T_h}->{model_cfg.T_f}")


def _train_model(run: RunConfig, train_path, val_path, out: Path):
    samples = _load_samples(train_path, "training")
    val = _load_samples(val_path, "validation") if val_path else None
    model = ModeQueryForecaster(run.model_config())
    _check_window(samples, model.config, train_path)
    train(model, samples, run.train_config(), val, out)
    return model


# --------------------------------------------------------------- commands
def cmd_preprocess(args, run: RunConfig) -> None:
    out = _out_dir(args)
    split = args.split or run.data.split
    files = sorted(args.inputs)
    if split != "all":
        s1, s2 = make_tartan_splits(files)
        files = s1 if split == "s1" else s2
    samples, skipped = [], 0
    for scene_id, path in enumerate(files):
        try:
            scene = read_scene_file(path, run.data.column_map(), run.data.frame_rate)
        except EmptySceneError as exc:
            log.warning("%s", exc)
            continue
        skipped += scene.skipped_rows
        samples.extend(scene_samples(scene, run.setting, scene_id, run.data.stride,
                                     run.data.runway_endpoints(), run.data.ceiling_ft, run.data.radius_km))
    if not samples:
        raise EmptyInputError("no complete windows in the given scene files")
    write_canonical_dataset(samples, out / "dataset.ascd")
    save_config(run, out / "config.resolved")
    print(f"wrote {len(samples)} samples from {len(files)} file(s) ({skipped} malformed rows skipped)")


def cmd_synth(args, run: RunConfig) -> None:
    out = _out_dir(args)
    sc = run.synth
    n = args.n_scenarios if args.n_scenarios is not None else sc.n_scenarios
    spec = PatternSpec(noise_sigma=sc.noise_sigma, direction=sc.direction, seed=run.seed)
    ds = generate_dataset(spec, n, DEFAULT_MIX, run.setting, sc.stride)
    tr, te = split_by_scenario(ds, sc.train_fraction)
    labels = {}
    for name, part in (("train", tr), ("test", te)):
        write_canonical_dataset(part.samples, out / f"{name}.ascd")
        labels[name] = [asdict(lab) for lab in part.labels]
    (out / "labels.json").write_text(json.dumps(
        {"runway": ds.runway.tolist(), **labels}, indent=1) + "\n")
    run.data = replace(run.data, train=str(out / "train.ascd"), test=str(out / "test.ascd"),
                       runway=tuple(float(v) for v in ds.runway.ravel()))
    save_config(run, out / "config.resolved")
    print(f"wrote {len(tr)} train / {len(te)} test samples from {n} scenarios")


def cmd_train(args, run: RunConfig) -> None:
    out = _out_dir(args)
    if args.data:
        run.data = replace(run.data, train=args.data)
    if args.val:
        run.data = replace(run.data, val=args.val)
    save_config(run, out / "config.resolved")
    _train_model(run, run.data.train, run.data.val, out)
    print(f"wrote {out / 'model.ckpt'} and {out / 'metrics.jsonl'}")


def cmd_eval(args, run: RunConfig) -> None:
    out = _out_dir(args)
    if args.data:
        run.data = replace(run.data, test=args.data)
    if args.train_data:
        run.data = replace(run.data, train=args.train_data)
    test = _load_samples(run.data.test, "test")
    save_config(run, out / "config.resolved")

    if args.baseline == "cv":
        forecaster = ConstantVelocity(run.setting)
    elif args.baseline in ("nn", "nn_raw"):
        bank = _load_samples(run.data.train, "training (bank)")
        forecaster = NearestNeighborBank(bank, normalized=args.baseline == "nn")
    elif args.checkpoint:
        forecaster = load_checkpoint(args.checkpoint)
        if run.ablations and forecaster.config != replace(run.model_config(), seed=forecaster.config.seed):
            raise ConfigurationError("--ablation does not match the checkpoint's architecture")
        _check_window(test, forecaster.config, run.data.test)
    elif run.data.train:
        forecaster = _train_model(run, run.data.train, run.data.val, out)
        _check_window(test, forecaster.config, run.data.test)
    else:
        raise ConfigurationError("eval needs --checkpoint, --baseline or training data")

    runway = run.data.runway_endpoints()
    report = cross_dataset_eval(forecaster, test, run.setting, radius_km=args.radius_km,
                                runway_endpoints=runway, per_sample=args.per_sample)
    report.write_json(out / "report.json")
    print(f"minADE {report.minade:.4f} km  minFDE {report.minfde:.4f} km  over {report.n_samples} samples")


def cmd_predict(args, run: RunConfig) -> None:
    out = _out_dir(args)
    model = load_checkpoint(args.checkpoint)
    samples = _load_samples(args.data, "input")
    _check_window(samples, model.config, args.data)
    hist, _ = stack_samples(samples)
    records = []
    for i in range(0, len(hist), 256):
        trajs, scores = model.predict_batch(hist[i:i + 256])
        for j in range(len(trajs)):
            s = samples[i + j]
            records.append({"sample_id": i + j, "scene_id": s.scene_id, "agent_id": s.agent_id,
                            "scores": scores[j].tolist(), "trajectories": trajs[j].tolist()})
    (out / "predictions.json").write_text(json.dumps(records) + "\n")
    print(f"wrote predictions for {len(records)} samples")


def cmd_bench(args, run: RunConfig) -> None:
    out = _out_dir(args)
    model = load_checkpoint(args.checkpoint) if args.checkpoint else ModeQueryForecaster(run.model_config())
    try:
        sizes = [int(b) for b in args.batch_sizes.split(",") if b.strip()]
    except ValueError:
        raise ConfigurationError(f"bad --batch-sizes {args.batch_sizes!r}") from None
    rows = latency_bench(model, sizes, args.warmup, args.trials, seed=run.seed)
    write_latency_csv(rows, out / "latency.csv")
    save_config(run, out / "config.resolved")
    for r in rows:
        print(f"B={r.batch_size:3d}  median {r.median_ms:8.2f} ms  p90 {r.p90_ms:8.2f} ms")


COMMANDS = {"preprocess": cmd_preprocess, "synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "predict": cmd_predict, "bench": cmd_bench}


def _thread_limit():
    raw = os.environ.get("ASCENT_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"ASCENT_THREADS must be an integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(1, n))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "config-reference":
        sys.stdout.write(reference_page())
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limiter = None
    try:
        limiter = _thread_limit()
        run = resolve_run(args)
        COMMANDS[args.command](args, run)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, EmptySceneError, EmptyInputError, InsufficientHistoryError, DimensionError,
            OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
