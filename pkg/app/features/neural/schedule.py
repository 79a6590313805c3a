import copy
import math
from typing import Callable, Literal, Optional

import torch
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field
from torch import nn


class OptimizerSchedule(BaseModel):
    """Adam first, then a reaction to the first dev-metric decrease.

    ``on_decrease="switch"`` moves to AMSGrad and starts counting patience;
    ``on_decrease="decay"`` multiplies the learning rate by ``decay`` every time the dev
    metric gets worse and never stops early.
    """

    lr: float = Field(gt=0)
    beta1: float = 0.9
    beta2: float = 0.999
    max_steps: int = Field(gt=0)
    eval_interval: int = Field(default=100, gt=0)
    eval_after: int = 0
    patience: Optional[int] = Field(default=None, gt=0)
    on_decrease: Literal["switch", "decay"] = "switch"
    decay: float = 0.999
    max_grad_norm: Optional[float] = None


class ScheduleEntry(BaseModel):
    step: int
    metric: float
    phase: int
    lr: float


class ScheduleResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    best_state: dict
    best_metric: float
    best_step: int
    switch_step: Optional[int] = None
    steps: int
    log: list[ScheduleEntry] = Field(default_factory=list)


def _adam(params, schedule: OptimizerSchedule, lr: float, amsgrad: bool):
    return torch.optim.Adam(
        params, lr=lr, betas=(schedule.beta1, schedule.beta2), amsgrad=amsgrad
    )


def run_schedule(
    model: nn.Module,
    schedule: OptimizerSchedule,
    train_step: Callable[[int], torch.Tensor],
    dev_eval: Callable[[], float],
) -> ScheduleResult:
    """Train ``model`` under ``schedule`` and keep the best dev snapshot.

    Args:
        model: The module whose parameters are optimized.
        schedule: Learning rate, betas, evaluation cadence and stopping rule.
        train_step: Called with the 1-based step; returns the loss to minimize.
        dev_eval: Returns the dev metric, higher is better.

    Returns:
        ScheduleResult: The best state dict (restored into ``model``) and the eval log.
    """
    params = [p for p in model.parameters() if p.requires_grad]
    lr = schedule.lr
    optimizer = _adam(params, schedule, lr, amsgrad=False)
    phase = 1
    switch_step: Optional[int] = None
    best_metric = -math.inf
    best_step = 0
    best_state = copy.deepcopy(model.state_dict())
    previous: Optional[float] = None
    log: list[ScheduleEntry] = []
    step = 0

    for step in range(1, schedule.max_steps + 1):
        model.train()
        loss = train_step(step)
        optimizer.zero_grad()
        loss.backward()
        if schedule.max_grad_norm is not None:
            nn.utils.clip_grad_norm_(params, schedule.max_grad_norm)
        optimizer.step()

        if step % schedule.eval_interval != 0 or step < schedule.eval_after:
            continue

        model.eval()
        with torch.no_grad():
            metric = float(dev_eval())
        if previous is not None and metric < previous:
            if schedule.on_decrease == "switch" and phase == 1:
                phase = 2
                switch_step = step
                optimizer = _adam(params, schedule, lr, amsgrad=True)
                logger.info(f"Step {step}: dev metric dropped, switching to AMSGrad")
            elif schedule.on_decrease == "decay":
                lr *= schedule.decay
                for group in optimizer.param_groups:
                    group["lr"] = lr
        log.append(ScheduleEntry(step=step, metric=metric, phase=phase, lr=lr))
        previous = metric

        if metric > best_metric:
            best_metric = metric
            best_step = step
            best_state = copy.deepcopy(model.state_dict())
            logger.debug(f"Step {step}: new best dev metric {metric:.4f}")
        elif (
            phase == 2
            and schedule.patience is not None
            and step - best_step >= schedule.patience
        ):
            logger.info(f"Step {step}: no improvement for {schedule.patience} steps")
            break

    if not log:
        best_state = copy.deepcopy(model.state_dict())
        best_step = step
    model.load_state_dict(best_state)
    model.eval()
    return ScheduleResult(
        best_state=best_state,
        best_metric=best_metric if log else math.nan,
        best_step=best_step,
        switch_step=switch_step,
        steps=step,
        log=log,
    )
