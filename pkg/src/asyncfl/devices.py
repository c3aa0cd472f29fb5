"""Per-device state: local training rounds, compute-time model, age bookkeeping.

Local SGD is executed lazily: a round's E steps are computed when the wall
clock reaches the device's completion time, not when the round starts. The
result is identical because training depends only on the anchor model and
the device's per-round RNG stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset, sample_batch
from .model import (
    ModelParams,
    TrainingHyper,
    learning_rate,
    regularized_batch_gradient,
    sgd_step,
)

# Sub-stream tags appended to (seed, device, round) when deriving RNGs, so the
# duration draw and the batch sequence never share state.
_STREAM_DURATION = 0
_STREAM_BATCHES = 1


def device_round_rng(master_seed: int, device_id: int, round_index: int,
                     stream: int) -> np.random.Generator:
    """Independent RNG stream per (seed, device, round); schedule-order free."""
    return np.random.default_rng([master_seed, device_id, round_index, stream])


@dataclass
class ComputeTimeModel:
    """Local training duration model: T_k ~ U(0, T_max].

    mode 'redraw' samples a fresh duration every round; 'fixed' caches the
    first draw per device; 'explicit' returns caller-supplied durations
    (used by tests and hand-built traces).
    """

    mode: str = "redraw"
    t_max: float = 1.0
    explicit: Optional[tuple] = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.mode not in ("redraw", "fixed", "explicit"):
            raise ValueError(f"unknown compute-time mode {self.mode!r}")
        if self.t_max <= 0:
            raise ValueError("t_max must be positive")
        if self.mode == "explicit" and self.explicit is None:
            raise ValueError("explicit mode requires per-device durations")


def draw_compute_time(model: ComputeTimeModel, device_id: int, rng) -> float:
    if model.mode == "explicit":
        return float(model.explicit[device_id])
    if model.mode == "fixed" and device_id in model._cache:
        return model._cache[device_id]
    # 1 - U[0,1) lies in (0, 1], keeping durations strictly positive.
    duration = model.t_max * (1.0 - rng.random())
    if model.mode == "fixed":
        model._cache[device_id] = duration
    return duration


@dataclass
class DeviceState:
    """One device's training-round state and scheduling bookkeeping."""

    id: int
    data_indices: np.ndarray
    anchor: ModelParams
    anchor_iteration: int
    busy_until: float = 0.0
    pending_update: Optional[ModelParams] = None
    sched_count: int = 0


def start_local_training(device: DeviceState, global_model: ModelParams,
                         t: int, now: float, compute_model: ComputeTimeModel,
                         master_seed: int) -> None:
    """Begin a new local round from the freshly received global model."""
    device.anchor = global_model
    device.anchor_iteration = t
    device.pending_update = None
    rng = device_round_rng(master_seed, device.id, t, _STREAM_DURATION)
    device.busy_until = now + draw_compute_time(compute_model, device.id, rng)


def complete_local_training(device: DeviceState, dataset: Dataset,
                            hyper: TrainingHyper, master_seed: int) -> ModelParams:
    """Run the round's E regularized SGD steps from the anchor.

    The learning rate is indexed by the global iteration at which the round
    started (the device cannot see later iterations). Reproducible from
    (anchor, seed, hyper) alone.
    """
    rng = device_round_rng(master_seed, device.id, device.anchor_iteration,
                           _STREAM_BATCHES)
    rate = learning_rate(hyper.lr_schedule, device.anchor_iteration)
    params = device.anchor
    for _ in range(hyper.local_epochs):
        batch = sample_batch(device.data_indices, hyper.batch_size, rng)
        grad = regularized_batch_gradient(
            params, device.anchor,
            dataset.features[batch], dataset.labels[batch],
            hyper.reg_lambda)
        params = sgd_step(params, grad, rate)
    device.pending_update = params
    return params


def alu(device: DeviceState, t: int) -> int:
    """Age of the device's anchor model: global iterations since reception."""
    if t < device.anchor_iteration:
        raise RuntimeError(
            f"iteration {t} precedes device {device.id} anchor "
            f"{device.anchor_iteration}: clock ran backwards")
    return t - device.anchor_iteration
