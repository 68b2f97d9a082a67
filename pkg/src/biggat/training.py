"""Cross-entropy, Adam, and the per-event training loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from biggat import autodiff as ad
from biggat.model import ModelConfig, ModelParams, Neighborhoods, init_params, loss_and_grad


TRAIN_CLUSTER_SOURCES = ("kmeans", "inferred")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    epochs: int = 300
    weight_decay: float = 0.0
    class_weights: bool = False
    seed: int = 0
    # training-node cluster labels: k-means assignments or the wind-only rule used at test time
    train_clusters: str = "kmeans"

    def __post_init__(self):
        if self.learning_rate < 0 or self.epochs < 1 or self.weight_decay < 0:
            raise ValueError("learning_rate/weight_decay must be >= 0 and epochs >= 1")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_epsilon > 0):
            raise ValueError("invalid Adam constants")
        if self.train_clusters not in TRAIN_CLUSTER_SOURCES:
            raise ValueError(f"train_clusters must be one of {TRAIN_CLUSTER_SOURCES}")


def cross_entropy_loss(logits, labels, class_weights=None) -> float:
    tape = ad.Tape()
    return float(ad.cross_entropy(tape.const(logits), labels, class_weights).value)


def inverse_frequency_weights(labels, n_classes: int = 3) -> np.ndarray:
    """Inverse class frequency, normalised to mean 1 over the classes present."""
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=n_classes).astype(float)
    w = np.divide(1.0, counts, out=np.zeros(n_classes), where=counts > 0)
    present = counts > 0
    w[present] /= w[present].mean()
    return w


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: ModelParams, grads: dict, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update (decoupled weight decay); returns (params, state)."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.sum(~np.isfinite(g)))
            raise TrainingError(f"non-finite gradient in {name!r} ({bad} entries) at step {state.t + 1}")
    t = state.t + 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    lr = config.learning_rate
    new = {}
    m_new, v_new = {}, {}
    for name, p in params.arrays.items():
        g = grads[name]
        m = b1 * state.m.get(name, np.zeros_like(p)) + (1 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(p)) + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new[name] = p - lr * m_hat / (np.sqrt(v_hat) + config.adam_epsilon) - lr * config.weight_decay * p
        m_new[name], v_new[name] = m, v
    return ModelParams(new), AdamState(m_new, v_new, t)


@dataclass(frozen=True)
class TrainingBatch:
    """One event ready for the model: scaled features, cluster labels, targets."""

    event_id: str
    X: np.ndarray
    clusters: np.ndarray
    targets: np.ndarray
    nbhd: Neighborhoods


@dataclass
class TrainResult:
    params: ModelParams
    loss_history: list[float]
    n_steps: int


def train(batches: list[TrainingBatch], model_config: ModelConfig, train_config: TrainConfig,
          init: ModelParams | None = None) -> TrainResult:
    """Full-graph forward/backward per event, one Adam step per event per epoch."""
    if not batches:
        raise TrainingError("need at least one training event")
    params = init.copy() if init is not None else init_params(train_config.seed, model_config)
    weights = None
    if train_config.class_weights:
        weights = inverse_frequency_weights(np.concatenate([b.targets for b in batches]))
    state = AdamState()
    history = []
    for epoch in range(train_config.epochs):
        losses = []
        for b in batches:
            loss, grads = loss_and_grad(params, model_config, b.X, b.clusters, b.targets, b.nbhd, weights)
            if not np.isfinite(loss):
                raise TrainingError(f"training diverged at epoch {epoch} (event {b.event_id})")
            params, state = adam_step(params, grads, state, train_config)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return TrainResult(params, history, state.t)
