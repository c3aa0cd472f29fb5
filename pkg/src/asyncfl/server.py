"""Server-side policies: device scheduling, weighting, model aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelParams

SCHEDULERS = ("random", "significance", "frequency")
WEIGHTINGS = ("equal", "age")
NORMALIZATIONS = ("scheduled", "all")

# Named gamma presets for the age-aware weighting.
GAMMA_OLD = 1.17    # favors staler updates
GAMMA_FRESH = 0.85  # favors fresher updates


@dataclass(frozen=True)
class PolicyConfig:
    scheduler: str = "random"
    weighting: str = "equal"
    gamma: float = 1.0
    normalization: str = "scheduled"
    max_scheduled: int = 30

    def __post_init__(self):
        if self.scheduler not in SCHEDULERS:
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.max_scheduled < 1:
            raise ValueError("max_scheduled must be >= 1")


def schedule(ready, max_scheduled: int, scheduler: str, norms: dict,
             counts: dict, rng) -> list:
    """Pick min(R, |ready|) devices per policy; returns ascending device ids.

    random: uniform without replacement. significance: largest update norms,
    equal norms break to the lower id. frequency: smallest scheduling counts,
    ties broken uniformly at random.
    """
    ready = sorted(ready)
    r = min(max_scheduled, len(ready))
    if r == len(ready):
        return ready
    if scheduler == "random":
        chosen = rng.choice(ready, size=r, replace=False)
    elif scheduler == "significance":
        chosen = sorted(ready, key=lambda k: (-norms[k], k))[:r]
    elif scheduler == "frequency":
        shuffled = rng.permutation(ready)
        chosen = sorted(shuffled, key=lambda k: counts[k])[:r]
    else:
        raise ValueError(f"unknown scheduler {scheduler!r}")
    return sorted(int(k) for k in chosen)


def update_norm(update: ModelParams, anchor: ModelParams) -> float:
    """Euclidean norm of the local model displacement over the round."""
    if update.theta.shape != anchor.theta.shape:
        raise ValueError("update and anchor shapes differ")
    return float(np.linalg.norm(update.theta - anchor.theta))


def compute_weights(members, sizes: np.ndarray, ages: np.ndarray,
                    weighting: str, gamma: float) -> np.ndarray:
    """Aggregation weights over all N devices, supported on `members` only.

    equal: w_k proportional to |S_k|. age: w_k proportional to
    |S_k| * gamma^a_k. gamma=1 reproduces equal weighting exactly.
    """
    members = sorted(members)
    if not members:
        raise ValueError("weight normalization set must be non-empty")
    weights = np.zeros(len(sizes))
    if weighting == "equal":
        raw = sizes.astype(np.float64)
    elif weighting == "age":
        raw = sizes * np.power(float(gamma), ages)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    denom = 0.0
    for k in members:
        denom += raw[k]
    for k in members:
        weights[k] = raw[k] / denom
    return weights


def aggregate_async(updates: dict, anchors: dict,
                    weights: np.ndarray) -> np.ndarray:
    """Convex combination of scheduled updates and non-scheduled anchors.

    Summation runs in ascending device-id order for bit-reproducibility.
    """
    theta = None
    for k in range(len(weights)):
        w = weights[k]
        if w == 0.0:
            continue
        if k in updates:
            vec = updates[k]
        elif k in anchors:
            vec = anchors[k]
        else:
            raise RuntimeError(f"no model vector supplied for weighted device {k}")
        theta = w * vec if theta is None else theta + w * vec
    if theta is None:
        raise ValueError("all aggregation weights are zero")
    return theta


def aggregate_sync(global_theta: np.ndarray, updates: dict, sizes: np.ndarray,
                   total_size: int) -> np.ndarray:
    """Literal FedAvg rule: global-size-weighted deltas added to theta(t).

    With a strict subset scheduled the deltas are damped by |S_k|/|S|; the
    renormalized variant goes through compute_weights + aggregate_async.
    """
    theta = global_theta.copy()
    for k in sorted(updates):
        theta = theta + (sizes[k] / total_size) * (updates[k] - global_theta)
    return theta
