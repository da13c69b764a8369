"""Run configuration: INI loading, ablation switches and the frozen resolved copy."""

from __future__ import annotations

import configparser
import dataclasses
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .data.io import ColumnMap
from .data.settings import ExperimentSetting, get_setting
from .errors import ConfigurationError
from .model import ModelConfig
from .training import TrainConfig

log = logging.getLogger(__name__)

ABLATIONS = {
    "global": {"coordinate_mode": "global"},
    "no_positional_norm": {"positional_normalization": False},
    "no_angular_norm": {"angular_normalization": False},
    "no_pose_embeddings": {"pose_embeddings": False},
    "direct_xyz": {"output_mode": "direct_xyz"},
}

_SETTING_KEYS = ("history_seconds", "history_rate", "future_seconds", "future_rate", "k")


@dataclass
class DataConfig:
    train: str = ""
    val: str = ""
    test: str = ""
    split: str = "all"
    stride: int = 1
    frame_rate: float = 1.0
    # zero-based positions of frame, agent, x, y, z
    columns: Tuple[int, ...] = (0, 1, 2, 3, 4)
    runway: Tuple[float, ...] = ()
    ceiling_ft: float = 6000.0
    radius_km: Optional[float] = 5.0

    def runway_endpoints(self):
        if not self.runway:
            return None
        if len(self.runway) != 6:
            raise ConfigurationError("data.runway needs six numbers: x1, y1, z1, x2, y2, z2")
        return (tuple(self.runway[:3]), tuple(self.runway[3:]))

    def column_map(self) -> ColumnMap:
        if len(self.columns) != 5:
            raise ConfigurationError("data.columns needs five indices: frame, agent, x, y, z")
        return ColumnMap(*self.columns)


@dataclass
class SynthConfig:
    n_scenarios: int = 200
    stride: int = 5
    train_fraction: float = 0.8
    noise_sigma: float = 0.005
    direction: str = "left"


@dataclass
class RunConfig:
    setting: ExperimentSetting = field(default_factory=lambda: get_setting("trajair-11s"))
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    ablations: List[str] = field(default_factory=list)
    seed: int = 0

    def model_config(self) -> ModelConfig:
        """Model config with the setting's window sizes, the run seed and ablations applied."""
        cfg = replace(self.model, k=self.setting.k, T_h=self.setting.history_steps,
                      T_f=self.setting.future_steps, dt_out=self.setting.dt_future, seed=self.seed)
        for name in self.ablations:
            cfg = replace(cfg, **ABLATIONS[name])
        return cfg.resolved()

    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.seed)


# ---------------------------------------------------------------- parsing
def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _coerce(text: str, default):
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float) or default is None:
        return None if text.strip().lower() in ("", "none") else float(text)
    if isinstance(default, tuple):
        parts = [p for p in text.replace(",", " ").split() if p]
        kind = int if default and isinstance(default[0], int) else float
        return tuple(kind(p) for p in parts)
    return text.strip()


def _apply(obj, section: str, items: Dict[str, str]):
    names = {f.name: f for f in dataclasses.fields(obj)}
    updates = {}
    for key, text in items.items():
        if key not in names:
            raise ConfigurationError(f"unknown config key [{section}] {key}")
        try:
            updates[key] = _coerce(text, getattr(obj, key))
        except ValueError as exc:
            raise ConfigurationError(f"invalid value for [{section}] {key}: {exc}") from None
    return replace(obj, **updates)


def parse_ablations(text) -> List[str]:
    names = text if isinstance(text, (list, tuple)) else [p for p in str(text).replace(",", " ").split() if p]
    for n in names:
        if n not in ABLATIONS:
            raise ConfigurationError(f"unknown ablation {n!r}; known: {sorted(ABLATIONS)}")
    return list(dict.fromkeys(names))


def load_config(path=None) -> RunConfig:
    """Read an INI file with sections experiment, model, train, data and synth."""
    run = RunConfig()
    if path is None:
        return run
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config {path}: {exc}") from None

    known = {"experiment", "model", "train", "data", "synth"}
    for section in parser.sections():
        if section not in known:
            raise ConfigurationError(f"unknown config section [{section}]")

    if parser.has_section("experiment"):
        exp = dict(parser["experiment"])
        if "setting" in exp:
            run.setting = get_setting(exp.pop("setting"))
        if "seed" in exp:
            run.seed = _coerce(exp.pop("seed"), 0)
        if "ablation" in exp:
            run.ablations = parse_ablations(exp.pop("ablation"))
        overrides = {}
        for key in list(exp):
            if key not in _SETTING_KEYS:
                raise ConfigurationError(f"unknown config key [experiment] {key}")
            overrides[key] = _coerce(exp.pop(key), getattr(run.setting, key))
        if overrides:
            run.setting = replace(run.setting, **overrides)
    for section in ("model", "train", "data", "synth"):
        if parser.has_section(section):
            setattr(run, section, _apply(getattr(run, section), section, dict(parser[section])))
    return run


def _fmt(value) -> str:
    if isinstance(value, (tuple, list)):
        return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def save_config(run: RunConfig, path) -> None:
    """Write every resolved value so the file alone reproduces the run."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    s = run.setting
    parser["experiment"] = {
        "setting": s.name, "seed": str(run.seed), "ablation": ", ".join(run.ablations),
        **{k: _fmt(getattr(s, k)) for k in _SETTING_KEYS},
    }
    skip_model = {"k", "T_h", "T_f", "dt_out", "seed"}
    parser["model"] = {f.name: _fmt(getattr(run.model, f.name))
                       for f in dataclasses.fields(run.model) if f.name not in skip_model}
    parser["train"] = {f.name: _fmt(getattr(run.train, f.name))
                       for f in dataclasses.fields(run.train) if f.name != "seed"}
    parser["data"] = {f.name: _fmt(getattr(run.data, f.name)) for f in dataclasses.fields(run.data)}
    parser["synth"] = {f.name: _fmt(getattr(run.synth, f.name)) for f in dataclasses.fields(run.synth)}
    with open(Path(path), "w") as fh:
        parser.write(fh)


def reference_page() -> str:
    """Plain-text listing of every config key and its default."""
    lines = ["[experiment]", "setting = trajair-11s   (one of trajair-11s, atp-16s, goodflight-40s)",
             "seed = 0", f"ablation =   (any of {', '.join(ABLATIONS)})"]
    lines += [f"{k} = (taken from the named setting)" for k in _SETTING_KEYS]
    defaults = RunConfig()
    for section in ("model", "train", "data", "synth"):
        lines += ["", f"[{section}]"]
        obj = getattr(defaults, section)
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"
