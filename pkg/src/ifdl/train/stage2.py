from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import torch

from ifdl.stage2 import (
    BOS_ID,
    PAD_ID,
    BlendConfig,
    MaskSource,
    Stage2Model,
    explanation_to_tokens,
    stage2_loss,
    teacher_forcing_batch,
)
from ifdl.train.common import (
    NonFiniteLossError,
    OptimizerConfig,
    SampleOrder,
    ScheduleConfig,
    TensorData,
    TrainState,
    clip_parameters_,
    lr_at,
    make_optimizer,
)
from ifdl.train.stage1 import trainable_parameters

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Stage2TrainConfig:
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    blend: BlendConfig = field(default_factory=BlendConfig)
    batch_size: int = 4
    accum: int = 10
    max_grad_norm: float = 1.0
    steps: int | None = None
    seed: int = 0
    prompt: tuple[int, ...] = (BOS_ID,)

    def __post_init__(self):
        if self.batch_size < 1 or self.accum < 1:
            raise ValueError("batch_size and accum must be >= 1")
        if self.blend.mask_source is not MaskSource.GROUND_TRUTH:
            raise ValueError("stage-2 training uses ground-truth masks")
        if self.steps is not None and not 0 <= self.steps <= self.schedule.total_steps:
            raise ValueError("steps must lie in [0, schedule.total_steps]")

    @property
    def run_steps(self) -> int:
        return self.schedule.total_steps if self.steps is None else self.steps


def explanation_data(data: TensorData) -> tuple[TensorData, list[list[int]]]:
    """Keep samples that carry an explanation and tokenize it."""
    keep = [i for i, r in enumerate(data.records) if r.explanation is not None]
    if not keep:
        raise ValueError("no records with explanations")
    sub = data.subset(keep)
    return sub, [explanation_to_tokens(r.explanation) for r in sub.records]


def train_stage2(
    data: TensorData,
    tokens: Sequence[Sequence[int]],
    model: Stage2Model,
    config: Stage2TrainConfig = Stage2TrainConfig(),
    state: TrainState | None = None,
    stop_at: int | None = None,
    on_step: Callable[[dict], None] | None = None,
) -> TrainState:
    """Teacher-forced explanation training on blended visual tokens (ground-truth masks).

    With a frozen encoder only the adapter and language head are updated.
    """
    if len(tokens) != len(data):
        raise ValueError("one token sequence per sample required")
    params = trainable_parameters(model)
    optimizer = make_optimizer(params, config.optimizer)
    history: list[dict] = []
    step = 0
    if state is not None:
        model.load_state_dict(state.model_state)
        optimizer.load_state_dict(state.optimizer_state)
        history = list(state.loss_history)
        step = state.step
    order = SampleOrder(len(data), config.seed)
    end = config.run_steps if stop_at is None else min(stop_at, config.run_steps)
    window = config.batch_size * config.accum
    dtype = model.dtype
    alpha = config.blend.alpha

    model.train()
    while step < end:
        idx = order.take(step * window, window)
        inputs_all, targets_all = teacher_forcing_batch([tokens[i] for i in idx], config.prompt)
        norm = float((targets_all != PAD_ID).sum())
        optimizer.zero_grad(set_to_none=True)
        total = 0.0
        for m in range(config.accum):
            sl = slice(m * config.batch_size, (m + 1) * config.batch_size)
            mb = idx[sl]
            loss = stage2_loss(
                model,
                data.images[mb].to(dtype),
                data.masks[mb].to(dtype),
                inputs_all[sl],
                targets_all[sl],
                alpha=alpha,
                norm=norm,
            )
            if not torch.isfinite(loss):
                raise NonFiniteLossError([data.ids[i] for i in mb], step)
            loss.backward()
            total += float(loss.detach())
        lr = lr_at(step + 1, config.optimizer.learning_rate, config.schedule)
        for group in optimizer.param_groups:
            group["lr"] = lr
        grad_norm, scale = clip_parameters_(params, config.max_grad_norm)
        optimizer.step()
        step += 1
        record = {"step": step, "lr": lr, "grad_norm": grad_norm, "clip_scale": scale, "total": total}
        history.append(record)
        if on_step is not None:
            on_step(record)
        if step % 50 == 0:
            log.info("stage2 step %d loss %.4f", step, total)

    return TrainState(
        step=step,
        model_state={k: v.detach().clone() for k, v in model.state_dict().items()},
        optimizer_state=copy.deepcopy(optimizer.state_dict()),
        seed=config.seed,
        loss_history=history,
        config={"train": asdict(config), "model": asdict(model.config)},
    )
