from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, is_dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import nn

from ifdl.data import DatasetManifest, Label, load_image_tensor, read_mask

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.0
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0 or self.epsilon <= 0:
            raise ValueError("weight_decay must be >= 0 and epsilon > 0")


@dataclass(frozen=True)
class ScheduleConfig:
    """Linear warmup then linear decay to zero.

    Give exactly one of ``warmup_steps`` (fixed count) or ``warmup_fraction``
    (share of ``total_steps``).
    """

    total_steps: int = 10000
    warmup_steps: int | None = 100
    warmup_fraction: float | None = None
    shape: str = "warmup_linear_decay"

    def __post_init__(self):
        if self.shape != "warmup_linear_decay":
            raise ValueError(f"unsupported schedule shape {self.shape!r}")
        if (self.warmup_steps is None) == (self.warmup_fraction is None):
            raise ValueError("set exactly one of warmup_steps / warmup_fraction")
        if self.warmup_fraction is not None and not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if not 0 <= self.warmup < self.total_steps:
            raise ValueError(f"need 0 <= warmup ({self.warmup}) < total_steps ({self.total_steps})")

    @property
    def warmup(self) -> int:
        if self.warmup_steps is not None:
            return self.warmup_steps
        return int(round(self.warmup_fraction * self.total_steps))


def lr_at(step: int, peak: float, schedule: ScheduleConfig) -> float:
    total, warm = schedule.total_steps, schedule.warmup
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    if step < warm:
        return peak * step / warm
    return peak * (total - step) / (total - warm)


def global_grad_norm(grads: Iterable[torch.Tensor]) -> float:
    total = 0.0
    for g in grads:
        total += float(g.detach().to(torch.float64).pow(2).sum())
    return math.sqrt(total)


def clip_gradients(grads: Sequence[torch.Tensor], max_norm: float) -> tuple[list[torch.Tensor], float]:
    """Scale all gradients by max_norm/norm when their global L2 norm exceeds max_norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    grads = list(grads)
    norm = global_grad_norm(grads)
    if not math.isfinite(norm):
        raise FloatingPointError("non-finite gradient norm")
    scale = max_norm / norm if norm > max_norm else 1.0
    if scale == 1.0:
        return grads, 1.0
    return [g * scale for g in grads], scale


def clip_parameters_(params: Sequence[nn.Parameter], max_norm: float) -> tuple[float, float]:
    """In-place variant over ``.grad``; returns (pre-clip norm, applied scale)."""
    grads = [p.grad for p in params if p.grad is not None]
    norm = global_grad_norm(grads)
    _, scale = clip_gradients(grads, max_norm) if grads else ([], 1.0)
    if scale != 1.0:
        for g in grads:
            g.mul_(scale)
    return norm, scale


def make_optimizer(params: Sequence[nn.Parameter], config: OptimizerConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        params,
        lr=config.learning_rate,
        betas=(config.beta1, config.beta2),
        eps=config.epsilon,
        weight_decay=config.weight_decay,
        foreach=False,
    )


class NonFiniteLossError(FloatingPointError):
    def __init__(self, sample_ids: Sequence[str], step: int):
        super().__init__(f"non-finite loss at step {step}; samples: {', '.join(sample_ids)}")
        self.sample_ids = list(sample_ids)
        self.step = step


class SampleOrder:
    """Epoch-wise shuffled index stream; epoch e uses a generator seeded from (seed, e)."""

    def __init__(self, n: int, seed: int):
        if n <= 0:
            raise ValueError("cannot draw batches from an empty dataset")
        self.n = n
        self.seed = seed
        self._perms: dict[int, torch.Tensor] = {}

    def _perm(self, epoch: int) -> torch.Tensor:
        if epoch not in self._perms:
            g = torch.Generator().manual_seed(int(np.random.SeedSequence([self.seed, epoch]).generate_state(1)[0]))
            self._perms = {epoch: torch.randperm(self.n, generator=g)}
        return self._perms[epoch]

    def take(self, start: int, count: int) -> list[int]:
        return [int(self._perm(p // self.n)[p % self.n]) for p in range(start, start + count)]


@dataclass
class TrainState:
    step: int
    model_state: dict
    optimizer_state: dict
    seed: int
    loss_history: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        torch.save(self.model_state, directory / "params.pt")
        torch.save(self.optimizer_state, directory / "optimizer.pt")
        meta = {"format_version": CHECKPOINT_VERSION, "step": self.step, "seed": self.seed, "config": self.config}
        (directory / "meta.json").write_text(json.dumps(meta, indent=2, default=_jsonable), encoding="utf-8")
        with (directory / "loss_history.jsonl").open("w", encoding="utf-8") as fh:
            for rec in self.loss_history:
                fh.write(json.dumps(rec) + "\n")
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "TrainState":
        directory = Path(directory)
        meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"{directory}: unsupported checkpoint version {meta.get('format_version')}")
        history = [json.loads(line) for line in (directory / "loss_history.jsonl").read_text().splitlines() if line]
        return cls(
            step=meta["step"],
            model_state=torch.load(directory / "params.pt", weights_only=True),
            optimizer_state=torch.load(directory / "optimizer.pt", weights_only=True),
            seed=meta["seed"],
            loss_history=history,
            config=meta.get("config", {}),
        )


def _jsonable(obj):
    if isinstance(obj, Enum):
        return obj.value
    if is_dataclass(obj):
        return asdict(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def param_table(state_dict: dict) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical tensor name -> shape, in archive order."""
    return [(name, tuple(t.shape)) for name, t in state_dict.items()]


@dataclass
class TensorData:
    ids: list[str]
    images: torch.Tensor  # (N, 3, H, W)
    masks: torch.Tensor  # (N, H, W); zeros where no localization target exists
    labels: torch.Tensor  # (N,)
    has_mask: torch.Tensor  # (N,) 1.0 where the localization loss applies
    records: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, idx: Sequence[int]) -> "TensorData":
        idx_t = torch.as_tensor(list(idx), dtype=torch.long)
        return TensorData(
            ids=[self.ids[i] for i in idx],
            images=self.images[idx_t],
            masks=self.masks[idx_t],
            labels=self.labels[idx_t],
            has_mask=self.has_mask[idx_t],
            records=[self.records[i] for i in idx] if self.records else [],
        )


def load_tensors(manifest: DatasetManifest, dtype: torch.dtype = torch.float32) -> TensorData:
    """Load a whole manifest into memory; full-synthetic images carry no localization target."""
    images, masks, labels, has_mask = [], [], [], []
    for r in manifest.records:
        img = load_image_tensor(r.image_path, dtype)
        images.append(img)
        if r.label is Label.FULL_SYNTHETIC or r.mask_path is None and r.label is not Label.REAL:
            masks.append(torch.zeros(img.shape[-2:], dtype=dtype))
            has_mask.append(0.0)
        elif r.mask_path is None:
            masks.append(torch.zeros(img.shape[-2:], dtype=dtype))
            has_mask.append(1.0)
        else:
            masks.append(torch.from_numpy(read_mask(r.mask_path)).to(dtype))
            has_mask.append(1.0)
        labels.append(r.label.index)
    if not images:
        raise ValueError("manifest has no records")
    return TensorData(
        ids=[r.id for r in manifest.records],
        images=torch.stack(images),
        masks=torch.stack(masks),
        labels=torch.tensor(labels, dtype=torch.long),
        has_mask=torch.tensor(has_mask, dtype=dtype),
        records=list(manifest.records),
    )
