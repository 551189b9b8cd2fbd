"""Glue between a RunConfig and the library: run-directory layout, data splits, checkpoints."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import torch

from ifdl.config import RunConfig, to_plain
from ifdl.data import DatasetManifest, load_manifest, split_dataset
from ifdl.model import Stage1Model
from ifdl.precision import default_dtype
from ifdl.stage2 import Stage2Model
from ifdl.train.common import TensorData, TrainState, load_tensors
from ifdl.train.stage1 import train_stage1
from ifdl.train.stage2 import explanation_data, train_stage2

log = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")


class MissingCheckpoint(FileNotFoundError):
    pass


@dataclass(frozen=True)
class RunPaths:
    root: Path

    @property
    def stage1(self) -> Path:
        return self.root / "stage1"

    @property
    def stage2(self) -> Path:
        return self.root / "stage2"

    @property
    def eval(self) -> Path:
        return self.root / "eval"

    @property
    def judge(self) -> Path:
        return self.root / "judge"

    @property
    def report(self) -> Path:
        return self.root / "report"

    @property
    def user_study(self) -> Path:
        return self.root / "user_study.json"


def run_paths(config: RunConfig) -> RunPaths:
    return RunPaths(Path(config.output_dir))


def has_checkpoint(directory: Path) -> bool:
    return (directory / "meta.json").is_file() and (directory / "params.pt").is_file()


def write_resolved_config(config: RunConfig, directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "config.json"
    path.write_text(json.dumps(to_plain(config), indent=2, sort_keys=True), encoding="utf-8")
    return path


def load_splits(config: RunConfig) -> dict[str, DatasetManifest]:
    manifest = load_manifest(config.data.manifest)
    parts = split_dataset(manifest, config.data.split, config.data.split_seed)
    return dict(zip(SPLIT_NAMES, parts))


def load_split_tensors(config: RunConfig, split: str, dtype: torch.dtype | None = None) -> TensorData:
    return load_tensors(load_splits(config)[split], dtype or default_dtype())


def load_stage1(config: RunConfig, paths: RunPaths, dtype: torch.dtype | None = None) -> Stage1Model:
    if not has_checkpoint(paths.stage1):
        raise MissingCheckpoint(f"no stage-1 checkpoint in {paths.stage1}; run train-stage1 first")
    model = Stage1Model.build(config.stage1.model, seed=config.stage1.model_seed, dtype=dtype or default_dtype())
    state = TrainState.load(paths.stage1)
    model.load_state_dict(state.model_state)
    return model.eval()


def load_stage2(config: RunConfig, paths: RunPaths, dtype: torch.dtype | None = None) -> Stage2Model:
    if not has_checkpoint(paths.stage2):
        raise MissingCheckpoint(f"no stage-2 checkpoint in {paths.stage2}; run train-stage2 first")
    model = Stage2Model.build(config.stage2.model, seed=config.stage2.model_seed, dtype=dtype or default_dtype())
    state = TrainState.load(paths.stage2)
    model.load_state_dict(state.model_state)
    return model.eval()


def _chunks(start: int, end: int, every: int) -> list[int]:
    if every <= 0:
        return [end]
    stops = list(range(start - start % every + every, end, every))
    return [s for s in stops if s > start] + [end]


def run_stage1(config: RunConfig, resume: bool = False, stop_at: int | None = None) -> TrainState:
    """Train stage 1, checkpointing into ``<output_dir>/stage1``; optionally resume from it."""
    paths = run_paths(config)
    dtype = default_dtype()
    data = load_split_tensors(config, "train", dtype)
    model = Stage1Model.build(config.stage1.model, seed=config.stage1.model_seed, dtype=dtype)
    state = _resume_state(paths.stage1, resume)
    end = config.stage1.train.run_steps if stop_at is None else min(stop_at, config.stage1.train.run_steps)
    for stop in _chunks(state.step if state else 0, end, config.stage1.checkpoint_every):
        state = train_stage1(data, model, config.stage1.train, state=state, stop_at=stop)
        state.save(paths.stage1)
        log.info("stage-1 checkpoint at step %d", state.step)
    write_resolved_config(config, paths.root)
    return state


def run_stage2(config: RunConfig, resume: bool = False, stop_at: int | None = None) -> TrainState:
    paths = run_paths(config)
    dtype = default_dtype()
    data, tokens = explanation_data(load_split_tensors(config, "train", dtype))
    model = Stage2Model.build(config.stage2.model, seed=config.stage2.model_seed, dtype=dtype)
    state = _resume_state(paths.stage2, resume)
    end = config.stage2.train.run_steps if stop_at is None else min(stop_at, config.stage2.train.run_steps)
    for stop in _chunks(state.step if state else 0, end, config.stage2.checkpoint_every):
        state = train_stage2(data, tokens, model, config.stage2.train, state=state, stop_at=stop)
        state.save(paths.stage2)
        log.info("stage-2 checkpoint at step %d", state.step)
    write_resolved_config(config, paths.root)
    return state


def _resume_state(directory: Path, resume: bool) -> TrainState | None:
    if not resume:
        return None
    if not has_checkpoint(directory):
        raise MissingCheckpoint(f"--resume given but no checkpoint in {directory}")
    return TrainState.load(directory)
