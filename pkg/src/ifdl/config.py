"""Run configuration: one TOML document per run, validated in full before any work starts."""

from __future__ import annotations

import dataclasses
import enum
import sys
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ifdl.data import FixtureConfig
from ifdl.judge.protocol import DecodingParams
from ifdl.losses import LossWeights
from ifdl.metrics.css import EMBEDDERS
from ifdl.metrics.morphology import parse_perturbation
from ifdl.model import Stage1Config
from ifdl.stage2 import BlendConfig, Stage2Config
from ifdl.train.common import OptimizerConfig, ScheduleConfig
from ifdl.train.stage1 import Stage1TrainConfig
from ifdl.train.stage2 import Stage2TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    manifest: str = "fixture/manifest.jsonl"
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)
    split_seed: int = 11

    def __post_init__(self):
        if len(self.split) != 3 or any(r < 0 for r in self.split) or abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must be three non-negative numbers summing to 1, got {self.split}")


@dataclass(frozen=True)
class Stage1Section:
    model_seed: int = 11
    model: Stage1Config = field(default_factory=Stage1Config)
    train: Stage1TrainConfig = field(
        default_factory=lambda: Stage1TrainConfig(
            optimizer=OptimizerConfig(learning_rate=1e-3),
            schedule=ScheduleConfig(total_steps=500, warmup_steps=50),
            loss_weights=LossWeights(),
            batch_size=16,
            accum=1,
            seed=11,
        )
    )
    checkpoint_every: int = 0  # 0: only at the end


@dataclass(frozen=True)
class Stage2Section:
    model_seed: int = 11
    model: Stage2Config = field(default_factory=Stage2Config)
    train: Stage2TrainConfig = field(
        default_factory=lambda: Stage2TrainConfig(
            optimizer=OptimizerConfig(learning_rate=3e-3),
            schedule=ScheduleConfig(total_steps=200, warmup_steps=20),
            blend=BlendConfig(alpha=0.5),
            batch_size=32,
            accum=4,
            seed=11,
        )
    )
    checkpoint_every: int = 0


@dataclass(frozen=True)
class EvalConfig:
    split: str = "test"
    predictions: str = "model"  # "model" or "oracle" (copy ground truth)
    mask_source: str = "predicted"  # masks fed to the explanation model: "predicted" or "ground_truth"
    alpha: float = 0.5
    threshold: float = 0.5
    embedder: str = "hashing"
    perturb: tuple[str, ...] = ()
    alpha_grid: tuple[float, ...] = (0.0, 0.3, 0.5, 0.7, 1.0)
    batch_size: int = 64

    def __post_init__(self):
        if self.split not in ("train", "val", "test"):
            raise ValueError(f"eval split must be train/val/test, got {self.split!r}")
        if self.predictions not in ("model", "oracle"):
            raise ValueError(f"predictions must be 'model' or 'oracle', got {self.predictions!r}")
        if self.mask_source not in ("predicted", "ground_truth"):
            raise ValueError(f"mask_source must be 'predicted' or 'ground_truth', got {self.mask_source!r}")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if not all(0 <= a <= 1 for a in (self.alpha, *self.alpha_grid)):
            raise ValueError("alpha values must lie in [0, 1]")
        if self.embedder not in EMBEDDERS:
            raise ValueError(f"unknown embedder {self.embedder!r}; available: {sorted(EMBEDDERS)}")
        for spec in self.perturb:
            parse_perturbation(spec)


@dataclass(frozen=True)
class JudgeConfig:
    provider: str = "mock"  # "mock" or "http"
    endpoint: str = ""
    model: str = "judge"
    api_key_env: str = "IFDL_JUDGE_API_KEY"
    run_a: str = ""  # eval output directories whose predictions are compared
    run_b: str = ""
    max_workers: int = 4
    max_attempts: int = 3
    timeout: float = 120.0
    decoding: DecodingParams = field(default_factory=DecodingParams)

    def __post_init__(self):
        if self.provider not in ("mock", "http"):
            raise ValueError(f"judge provider must be 'mock' or 'http', got {self.provider!r}")
        if self.provider == "http" and not self.endpoint:
            raise ValueError("judge provider 'http' needs an endpoint")


@dataclass(frozen=True)
class RunConfig:
    output_dir: str = "runs/default"
    seed: int = 11
    fixture: FixtureConfig = field(default_factory=FixtureConfig)
    fixture_dir: str = "fixture"
    data: DataConfig = field(default_factory=DataConfig)
    stage1: Stage1Section = field(default_factory=Stage1Section)
    stage2: Stage2Section = field(default_factory=Stage2Section)
    eval: EvalConfig = field(default_factory=EvalConfig)
    judge: JudgeConfig = field(default_factory=JudgeConfig)


# ---------------------------------------------------------------------------
# dict <-> dataclass


def to_plain(obj) -> Any:
    """Dataclass tree -> nested dicts of TOML-friendly values."""
    if dataclasses.is_dataclass(obj):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (tuple, list)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _coerce(tp, value, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a table, got {type(value).__name__}")
        return from_dict(tp, value, path)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected an array, got {value!r}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{path}: expected {len(args)} items, got {len(value)}")
        return tuple(_coerce(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        try:
            return tp(value)
        except ValueError:
            raise ConfigError(f"{path}: {value!r} is not one of {[m.value for m in tp]}") from None
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def from_dict(cls, data: dict, path: str = ""):
    """Build dataclass ``cls`` from ``data``; unknown keys and bad types are errors."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        where = path or "top level"
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        kwargs[name] = _coerce(hints[name], value, f"{path}.{name}" if path else name)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def _deep_merge(base: dict, update: dict) -> dict:
    out = dict(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def _flatten(d: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in d.items():
        key = f"{prefix}.{k}" if prefix else k
        if isinstance(v, dict):
            out.update(_flatten(v, key))
        else:
            out[key] = v
    return out


def parse_override(text: str) -> tuple[list[str], Any]:
    """``a.b.c=VALUE``; VALUE is read as a TOML value, falling back to a bare string."""
    key, sep, raw = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not KEY=VALUE")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key.split("."), value


@dataclass
class LoadedConfig:
    config: RunConfig
    sources: dict[str, str]  # dotted key -> "default" | "config" | "flag"

    def describe(self) -> str:
        flat = _flatten(to_plain(self.config))
        lines = ["configuration (flag > config > default):"]
        for key in sorted(flat):
            src = self.sources.get(key, "default")
            if src != "default":
                lines.append(f"  {key} = {flat[key]!r}  [{src}]")
        n_default = sum(1 for k in flat if self.sources.get(k, "default") == "default")
        lines.append(f"  ({n_default} other keys at their defaults)")
        return "\n".join(lines)


def load_config(path: str | Path | None = None, overrides: list[str] | dict | None = None) -> LoadedConfig:
    """Defaults, then the TOML file, then ``KEY=VALUE`` overrides; validates the merged result."""
    doc: dict = {}
    if path is not None:
        try:
            doc = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    flag_doc: dict = {}
    if isinstance(overrides, dict):
        items = list(overrides.items())
    else:
        items = [o if isinstance(o, tuple) else parse_override(o) for o in overrides or []]
    for keys, value in items:
        if isinstance(keys, str):
            keys = keys.split(".")
        node = flag_doc
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = value
    user = _deep_merge(doc, flag_doc)
    merged = _deep_merge(to_plain(RunConfig()), user)
    for stage in ("stage1", "stage2"):
        # a user-chosen warmup form replaces the default one
        sched = user.get(stage, {}).get("train", {}).get("schedule", {})
        target = merged[stage]["train"]["schedule"]
        if "warmup_fraction" in sched and "warmup_steps" not in sched:
            target["warmup_steps"] = None
        elif "warmup_steps" in sched and "warmup_fraction" not in sched:
            target["warmup_fraction"] = None
    config = from_dict(RunConfig, merged)
    sources = {k: "config" for k in _flatten(doc)}
    sources.update({k: "flag" for k in _flatten(flag_doc)})
    return LoadedConfig(config, sources)
