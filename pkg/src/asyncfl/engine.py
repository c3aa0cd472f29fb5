"""Discrete-time simulation driver for both protocols.

The asynchronous protocol aggregates every fixed wall-clock period T and
redistributes the new global model to every device that has finished its
local round, scheduled or not. The synchronous FedAvg baseline runs on the
same device/server machinery with round length T_max.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset, Partition
from .devices import (
    ComputeTimeModel,
    DeviceState,
    alu,
    complete_local_training,
    start_local_training,
)
from .model import ModelParams, TrainingHyper, dataset_loss, evaluate_accuracy
from .server import (
    PolicyConfig,
    aggregate_async,
    aggregate_sync,
    compute_weights,
    schedule,
    update_norm,
)

_STREAM_SCHEDULER = 2

PROTOCOLS = ("async", "fedavg")


@dataclass(frozen=True)
class SimConfig:
    num_devices: int = 100
    t_max: float = 1.0
    aggregation_period: Optional[float] = None  # async default: t_max / 4
    num_iterations: int = 40
    policy: PolicyConfig = PolicyConfig()
    hyper: TrainingHyper = TrainingHyper()
    seed: int = 0
    protocol: str = "async"
    compute_mode: str = "redraw"
    explicit_times: Optional[tuple] = None
    init: str = "zeros"
    fedavg_literal: bool = False

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.num_devices < 1:
            raise ValueError("num_devices must be positive")
        if self.t_max <= 0:
            raise ValueError("t_max must be positive")
        if self.aggregation_period is not None and self.aggregation_period <= 0:
            raise ValueError("aggregation_period must be positive")
        if self.num_iterations < 0:
            raise ValueError("num_iterations must be non-negative")
        if self.init not in ("zeros", "random"):
            raise ValueError(f"unknown init {self.init!r}")

    @property
    def period(self) -> float:
        if self.aggregation_period is not None:
            return self.aggregation_period
        return self.t_max / 4.0 if self.protocol == "async" else self.t_max


@dataclass(frozen=True)
class IterationRecord:
    t: int
    wall_clock: float
    test_accuracy: float
    train_loss: float
    ready_count: int
    scheduled_count: int
    mean_alu_scheduled: float
    max_alu_scheduled: int


@dataclass
class MetricsTrace:
    records: list = field(default_factory=list)
    schedule_history: list = field(default_factory=list)  # (t, ready, scheduled)
    final_model: Optional[ModelParams] = None
    sched_counts: Optional[np.ndarray] = None


def _initial_model(dataset: Dataset, config: SimConfig) -> ModelParams:
    model = ModelParams.zeros(dataset.num_features, dataset.num_classes)
    if config.init == "random":
        rng = np.random.default_rng([config.seed, 0, 0])
        model = model.replace_theta(0.01 * rng.standard_normal(model.dim))
    return model


def _make_devices(partition: Partition, model: ModelParams) -> list:
    return [DeviceState(id=k, data_indices=np.asarray(idx), anchor=model,
                        anchor_iteration=1)
            for k, idx in enumerate(partition.device_indices)]


def _record(trace: MetricsTrace, t: int, wall_clock: float, model: ModelParams,
            dataset: Dataset, test_set: Dataset, ready, scheduled, ages):
    mean_alu = float(np.mean(ages)) if len(ages) else float("nan")
    max_alu = int(max(ages)) if len(ages) else 0
    trace.records.append(IterationRecord(
        t=t,
        wall_clock=wall_clock,
        test_accuracy=evaluate_accuracy(model, test_set.features, test_set.labels),
        train_loss=dataset_loss(model, dataset.features, dataset.labels),
        ready_count=len(ready),
        scheduled_count=len(scheduled),
        mean_alu_scheduled=mean_alu,
        max_alu_scheduled=max_alu,
    ))
    trace.schedule_history.append((t, tuple(ready), tuple(scheduled)))


def run_async(dataset: Dataset, partition: Partition, test_set: Dataset,
              config: SimConfig) -> MetricsTrace:
    """Asynchronous FL with periodic aggregation."""
    if config.protocol != "async":
        raise ValueError("run_async requires protocol='async'")
    policy = config.policy
    compute_model = ComputeTimeModel(mode=config.compute_mode,
                                     t_max=config.t_max,
                                     explicit=config.explicit_times)
    period = config.period
    sizes = partition.sizes()

    model = _initial_model(dataset, config)
    devices = _make_devices(partition, model)
    for dev in devices:
        start_local_training(dev, model, t=1, now=0.0,
                             compute_model=compute_model,
                             master_seed=config.seed)

    trace = MetricsTrace()
    for t in range(1, config.num_iterations + 1):
        boundary = t * period
        ready = [dev.id for dev in devices if dev.busy_until <= boundary]
        for k in ready:
            complete_local_training(devices[k], dataset, config.hyper, config.seed)

        norms = {k: update_norm(devices[k].pending_update, devices[k].anchor)
                 for k in ready}
        counts = {k: devices[k].sched_count for k in ready}
        sched_rng = np.random.default_rng([config.seed, t, _STREAM_SCHEDULER])
        scheduled = schedule(ready, policy.max_scheduled, policy.scheduler,
                             norms, counts, sched_rng)

        if ready:
            members = (scheduled if policy.normalization == "scheduled"
                       else list(range(config.num_devices)))
            ages = np.array([alu(dev, t) for dev in devices])
            weights = compute_weights(members, sizes, ages,
                                      policy.weighting, policy.gamma)
            updates = {k: devices[k].pending_update.theta for k in scheduled}
            anchors = {dev.id: dev.anchor.theta for dev in devices
                       if dev.id not in updates}
            model = model.replace_theta(aggregate_async(updates, anchors, weights))

        for k in scheduled:
            devices[k].sched_count += 1
        scheduled_ages = [alu(devices[k], t) for k in scheduled]
        for k in ready:
            start_local_training(devices[k], model, t=t + 1, now=boundary,
                                 compute_model=compute_model,
                                 master_seed=config.seed)

        _record(trace, t, boundary, model, dataset, test_set,
                ready, scheduled, scheduled_ages)

    trace.final_model = model
    trace.sched_counts = np.array([dev.sched_count for dev in devices])
    return trace


def run_fedavg(dataset: Dataset, partition: Partition, test_set: Dataset,
               config: SimConfig) -> MetricsTrace:
    """Synchronous FedAvg baseline; round length bounded by the slowest device."""
    if config.protocol != "fedavg":
        raise ValueError("run_fedavg requires protocol='fedavg'")
    policy = config.policy
    sizes = partition.sizes()
    total = int(sizes.sum())

    model = _initial_model(dataset, config)
    devices = _make_devices(partition, model)

    trace = MetricsTrace()
    for t in range(1, config.num_iterations + 1):
        for dev in devices:
            dev.anchor = model
            dev.anchor_iteration = t
            complete_local_training(dev, dataset, config.hyper, config.seed)

        ready = [dev.id for dev in devices]
        norms = {k: update_norm(devices[k].pending_update, devices[k].anchor)
                 for k in ready}
        counts = {k: devices[k].sched_count for k in ready}
        sched_rng = np.random.default_rng([config.seed, t, _STREAM_SCHEDULER])
        scheduled = schedule(ready, policy.max_scheduled, policy.scheduler,
                             norms, counts, sched_rng)
        updates = {k: devices[k].pending_update.theta for k in scheduled}

        if config.fedavg_literal:
            theta = aggregate_sync(model.theta, updates, sizes, total)
        else:
            members = (scheduled if policy.normalization == "scheduled"
                       else list(range(config.num_devices)))
            ages = np.zeros(config.num_devices, dtype=np.int64)
            weights = compute_weights(members, sizes, ages,
                                      policy.weighting, policy.gamma)
            anchors = {dev.id: dev.anchor.theta for dev in devices
                       if dev.id not in updates}
            theta = aggregate_async(updates, anchors, weights)
        model = model.replace_theta(theta)

        for k in scheduled:
            devices[k].sched_count += 1
        _record(trace, t, t * config.period, model, dataset, test_set,
                ready, scheduled, [0] * len(scheduled))

    trace.final_model = model
    trace.sched_counts = np.array([dev.sched_count for dev in devices])
    return trace


def run_simulation(dataset: Dataset, partition: Partition, test_set: Dataset,
                   config: SimConfig) -> MetricsTrace:
    runner = run_async if config.protocol == "async" else run_fedavg
    return runner(dataset, partition, test_set, config)
