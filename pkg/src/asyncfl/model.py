"""Linear-softmax model: parameters, loss, gradients, SGD step, lr schedule.

All operations are pure functions over immutable inputs and use float64
throughout, so results are bit-reproducible regardless of call order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ConfigurationError(ValueError):
    """Raised on dimension mismatches or invalid hyperparameters."""


@dataclass(frozen=True)
class ModelParams:
    """Flat parameter vector for a multinomial logistic regression model.

    theta holds the (num_features x num_classes) weight matrix followed by
    the num_classes bias terms, flattened: d = F*C + C.
    """

    theta: np.ndarray
    num_features: int
    num_classes: int

    def __post_init__(self):
        if self.num_features < 1 or self.num_classes < 1:
            raise ConfigurationError("num_features and num_classes must be positive")
        expected = self.num_features * self.num_classes + self.num_classes
        if self.theta.shape != (expected,):
            raise ConfigurationError(
                f"theta has shape {self.theta.shape}, expected ({expected},) "
                f"for {self.num_features} features x {self.num_classes} classes"
            )
        if not np.all(np.isfinite(self.theta)):
            raise ConfigurationError("theta contains non-finite entries")

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    def weights(self) -> np.ndarray:
        """View of theta as the (F, C) weight matrix."""
        split = self.num_features * self.num_classes
        return self.theta[:split].reshape(self.num_features, self.num_classes)

    def bias(self) -> np.ndarray:
        return self.theta[self.num_features * self.num_classes:]

    def replace_theta(self, theta: np.ndarray) -> "ModelParams":
        return ModelParams(theta, self.num_features, self.num_classes)

    @staticmethod
    def zeros(num_features: int, num_classes: int) -> "ModelParams":
        d = num_features * num_classes + num_classes
        return ModelParams(np.zeros(d), num_features, num_classes)


@dataclass(frozen=True)
class TrainingHyper:
    """Local-training hyperparameters shared by both protocols."""

    local_epochs: int = 5
    batch_size: int = 32
    lr_schedule: tuple = ((20, 0.01), (40, 0.005))
    reg_lambda: float = 0.02

    def __post_init__(self):
        if self.local_epochs < 0:
            raise ConfigurationError("local_epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        if not self.lr_schedule:
            raise ConfigurationError("lr_schedule must not be empty")
        thresholds = [t for t, _ in self.lr_schedule]
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ConfigurationError("lr_schedule thresholds must be strictly increasing")
        if any(rate <= 0 for _, rate in self.lr_schedule):
            raise ConfigurationError("lr_schedule rates must be positive")
        if self.reg_lambda < 0:
            raise ConfigurationError("reg_lambda must be non-negative")


def _logits(params: ModelParams, features: np.ndarray) -> np.ndarray:
    return features @ params.weights() + params.bias()


def _log_softmax_losses(params: ModelParams, features: np.ndarray,
                        labels: np.ndarray) -> np.ndarray:
    z = _logits(params, features)
    m = z.max(axis=1)
    lse = m + np.log(np.exp(z - m[:, None]).sum(axis=1))
    return lse - z[np.arange(len(labels)), labels]


def _check_samples(params: ModelParams, features: np.ndarray, labels: np.ndarray):
    if features.ndim != 2 or features.shape[1] != params.num_features:
        raise ConfigurationError(
            f"feature width {features.shape[-1] if features.ndim else '?'} "
            f"does not match model num_features={params.num_features}"
        )
    if features.shape[0] != labels.shape[0]:
        raise ConfigurationError("features and labels disagree on sample count")
    if labels.size and labels.max() >= params.num_classes:
        raise ConfigurationError("label out of range for model num_classes")


def sample_loss(params: ModelParams, features: np.ndarray, label: int) -> float:
    """Softmax cross-entropy -log p(label | features, theta) for one sample."""
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray([label])
    _check_samples(params, f, y)
    return float(_log_softmax_losses(params, f, y)[0])


def dataset_loss(params: ModelParams, features: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy over a non-empty sample collection."""
    if len(labels) == 0:
        raise ValueError("dataset_loss over an empty collection is undefined")
    _check_samples(params, features, labels)
    return float(np.mean(_log_softmax_losses(params, features, labels)))


def batch_gradient(params: ModelParams, features: np.ndarray,
                   labels: np.ndarray) -> np.ndarray:
    """Gradient of the mean cross-entropy over the batch, flattened like theta."""
    if len(labels) == 0:
        raise ValueError("batch_gradient over an empty batch is undefined")
    _check_samples(params, features, labels)
    n = features.shape[0]
    z = _logits(params, features)
    z = z - z.max(axis=1)[:, None]
    e = np.exp(z)
    p = e / e.sum(axis=1)[:, None]
    p[np.arange(n), labels] -= 1.0
    g = p / n
    grad_w = features.T @ g
    grad_b = g.sum(axis=0)
    return np.concatenate([grad_w.ravel(), grad_b])


def regularized_batch_gradient(params: ModelParams, anchor: ModelParams,
                               features: np.ndarray, labels: np.ndarray,
                               reg_lambda: float) -> np.ndarray:
    """Batch gradient plus the proximal term lambda * (theta - anchor)."""
    if anchor.theta.shape != params.theta.shape:
        raise ConfigurationError("anchor shape does not match params")
    grad = batch_gradient(params, features, labels)
    if reg_lambda != 0.0:
        grad = grad + reg_lambda * (params.theta - anchor.theta)
    return grad


def sgd_step(params: ModelParams, gradient: np.ndarray, rate: float) -> ModelParams:
    if rate <= 0:
        raise ConfigurationError("learning rate must be positive")
    return params.replace_theta(params.theta - rate * gradient)


def learning_rate(schedule, t: int) -> float:
    """Rate of the first segment with threshold >= t; last rate persists after."""
    if not schedule:
        raise ConfigurationError("empty learning-rate schedule")
    if t < 1:
        raise ConfigurationError("iteration index must be >= 1")
    for threshold, rate in schedule:
        if t <= threshold:
            return rate
    return schedule[-1][1]


def evaluate_accuracy(params: ModelParams, features: np.ndarray,
                      labels: np.ndarray) -> float:
    """Fraction of samples whose argmax score matches the label.

    Ties break to the lowest class index (np.argmax convention).
    """
    if len(labels) == 0:
        raise ValueError("cannot evaluate accuracy on an empty test set")
    _check_samples(params, features, labels)
    predicted = np.argmax(_logits(params, features), axis=1)
    return float(np.mean(predicted == labels))
