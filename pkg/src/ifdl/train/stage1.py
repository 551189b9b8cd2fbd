from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import torch

from ifdl.losses import LossWeights, stage1_loss
from ifdl.model import Stage1Model
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

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Stage1TrainConfig:
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    batch_size: int = 4
    accum: int = 10
    max_grad_norm: float = 1.0
    steps: int | None = None  # optimizer steps to run; defaults to schedule.total_steps
    seed: int = 0
    dice_smoothing: float = 1.0

    def __post_init__(self):
        if self.batch_size < 1 or self.accum < 1:
            raise ValueError("batch_size and accum must be >= 1")
        if self.steps is not None and not 0 <= self.steps <= self.schedule.total_steps:
            raise ValueError("steps must lie in [0, schedule.total_steps]")

    @property
    def run_steps(self) -> int:
        return self.schedule.total_steps if self.steps is None else self.steps


def trainable_parameters(model: torch.nn.Module) -> list[torch.nn.Parameter]:
    return [p for p in model.parameters() if p.requires_grad]


def train_stage1(
    data: TensorData,
    model: Stage1Model,
    config: Stage1TrainConfig = Stage1TrainConfig(),
    state: TrainState | None = None,
    stop_at: int | None = None,
    on_step: Callable[[dict], None] | None = None,
) -> TrainState:
    """AdamW with accumulation and clipping on the weighted BCE + Dice + CE objective.

    Each optimizer step consumes ``accum`` micro-batches of ``batch_size`` samples.
    Micro-batch losses are normalized by the sample counts of the whole window, so a
    step equals one step over the concatenated batch. Passing ``state`` resumes from a
    saved run; ``stop_at`` ends early (useful for checkpointing mid-run).
    """
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

    model.train()
    while step < end:
        idx = order.take(step * window, window)
        loc_norm = float(data.has_mask[idx].sum())
        det_norm = float(len(idx))
        totals = {"total": 0.0, "bce": 0.0, "dice": 0.0, "ce": 0.0}
        optimizer.zero_grad(set_to_none=True)
        for m in range(config.accum):
            mb = idx[m * config.batch_size : (m + 1) * config.batch_size]
            class_logits, mask_logits = model(data.images[mb].to(dtype))
            loss = stage1_loss(
                mask_logits,
                data.masks[mb].to(dtype),
                class_logits,
                data.labels[mb],
                config.loss_weights,
                loc_weight=data.has_mask[mb].to(dtype),
                loc_norm=loc_norm,
                det_norm=det_norm,
                smoothing=config.dice_smoothing,
            )
            if not torch.isfinite(loss.total):
                raise NonFiniteLossError([data.ids[i] for i in mb], step)
            loss.total.backward()
            for k, v in loss.as_floats().items():
                totals[k] += v
        lr = lr_at(step + 1, config.optimizer.learning_rate, config.schedule)
        for group in optimizer.param_groups:
            group["lr"] = lr
        grad_norm, scale = clip_parameters_(params, config.max_grad_norm)
        optimizer.step()
        step += 1
        record = {"step": step, "lr": lr, "grad_norm": grad_norm, "clip_scale": scale, **totals}
        history.append(record)
        if on_step is not None:
            on_step(record)
        if step % 50 == 0:
            log.info("stage1 step %d loss %.4f (bce %.4f dice %.4f ce %.4f)", step, *totals.values())

    return TrainState(
        step=step,
        model_state={k: v.detach().clone() for k, v in model.state_dict().items()},
        optimizer_state=copy.deepcopy(optimizer.state_dict()),
        seed=config.seed,
        loss_history=history,
        config={"train": asdict(config), "model": asdict(model.config)},
    )


@torch.no_grad()
def predict_stage1(model: Stage1Model, images: torch.Tensor, batch_size: int = 32):
    model.eval()
    return model.predict(images, batch_size)
