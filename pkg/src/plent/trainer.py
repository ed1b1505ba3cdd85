"""Heavy-ball SGD training loop with weight decay, early stopping, and
telemetry hooks.

The optimizer treats the network parameters as one flat vector (synaptic
weights followed by biases). Weight decay is the classic coupled form:
``lambda * params`` is added to the loss gradient before the momentum
update. There is no learning-rate schedule and no Nesterov acceleration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .net import Network

__all__ = [
    "OptimizerState",
    "EarlyStop",
    "Schedule",
    "TrainReport",
    "TrainingDiverged",
    "sgd_step",
    "evaluate",
    "train",
]


class TrainingDiverged(RuntimeError):
    """Loss or gradient became non-finite during optimization."""


@dataclass
class OptimizerState:
    """Momentum-SGD state over the flat parameter vector (weights + biases)."""

    velocity: np.ndarray
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    nesterov: bool = False  # plain heavy ball only

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.nesterov:
            raise ValueError("nesterov acceleration is not supported")

    @classmethod
    def for_network(cls, net: Network, lr, momentum=0.9, weight_decay=0.0):
        return cls(
            velocity=np.zeros(net.n_params, dtype=net.dtype),
            lr=lr,
            momentum=momentum,
            weight_decay=weight_decay,
        )


@dataclass
class EarlyStop:
    metric: str = "test_acc"
    patience: int = 20

    def __post_init__(self):
        if self.metric != "test_acc":
            raise ValueError(f"unsupported early-stop metric {self.metric!r}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class Schedule:
    epochs: int
    batch_size: int
    shuffle_seed: int | None = None
    eval_every: int = 1
    early_stop: EarlyStop | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass
class TrainReport:
    """Training trajectory plus the best/final test metrics.

    ``eval_epochs[i]`` gives the epoch number of row ``i`` in the per-epoch
    arrays; epoch 0 is the pre-training evaluation. ``train_loss`` holds
    the mean mini-batch loss of each epoch (an evaluated full-set loss for
    epoch 0).
    """

    eval_epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)
    best_acc: float = 0.0
    best_epoch: int = 0
    final_acc: float = 0.0
    steps: int = 0
    weight_decay: float = 0.0
    stopped_early: bool = False
    run_id: str | None = None
    config: dict | None = None

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "config": self.config,
            "eval_epochs": self.eval_epochs,
            "train_loss": self.train_loss,
            "test_loss": self.test_loss,
            "test_acc": self.test_acc,
            "best_acc": self.best_acc,
            "best_epoch": self.best_epoch,
            "final_acc": self.final_acc,
            "steps": self.steps,
            "weight_decay": self.weight_decay,
            "stopped_early": self.stopped_early,
        }

    def save_json(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


def _flat_params(net):
    return np.concatenate([net.flat_weights(), net.flat_biases()])


def _set_flat_params(net, params):
    net.set_flat_weights(params[: net.n_weights])
    net.set_flat_biases(params[net.n_weights :])


def sgd_step(net, state: OptimizerState, loss_fn, batch, labels, rng=None):
    """One heavy-ball update; mutates net and state in place.

    ``loss_fn(net, batch, labels, rng) -> (loss, FlatGradient)``. Returns
    the pre-step loss and its gradient (for telemetry).
    """
    loss, grad = loss_fn(net, batch, labels, rng)
    if not np.isfinite(loss) or not grad.is_finite():
        raise TrainingDiverged(
            f"non-finite loss or gradient (loss={loss}, "
            f"|wgrad|_max={np.abs(grad.wgrad).max(initial=0.0)})"
        )
    params = _flat_params(net)
    g = np.concatenate([grad.wgrad, grad.bgrad])
    if state.weight_decay:
        g = g + state.weight_decay * params
    state.velocity = state.momentum * state.velocity - state.lr * g
    _set_flat_params(net, params + state.velocity)
    return loss, grad


def evaluate(net, dataset: Dataset, batch_size: int = 256):
    """Mean cross-entropy and argmax accuracy over a dataset.

    Argmax ties resolve to the lowest class index.
    """
    n = len(dataset.labels)
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    total_loss = 0.0
    correct = 0
    for start in range(0, n, batch_size):
        xb = dataset.images[start : start + batch_size]
        yb = dataset.labels[start : start + batch_size]
        logits = net.forward(xb)
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        total_loss += float(-logp[np.arange(len(yb)), yb].sum())
        correct += int((logits.argmax(axis=1) == yb).sum())
    return total_loss / n, correct / n


def train(
    net: Network,
    train_set: Dataset,
    test_set: Dataset,
    loss_fn,
    state: OptimizerState,
    schedule: Schedule,
    seed: int = 0,
    recorder=None,
    augment_fn=None,
) -> TrainReport:
    """Run the full schedule; deterministic given the seed (single thread).

    Mini-batches are reshuffled every epoch; displacement draws for the
    smoothed losses are fresh every step (their rng stream is derived from
    ``seed`` unless ``schedule.shuffle_seed`` pins the shuffle separately).
    """
    ss = np.random.SeedSequence(seed)
    shuffle_child, loss_child, augment_child = ss.spawn(3)
    if schedule.shuffle_seed is not None:
        shuffle_rng = np.random.default_rng(schedule.shuffle_seed)
    else:
        shuffle_rng = np.random.default_rng(shuffle_child)
    loss_rng = np.random.default_rng(loss_child)
    augment_rng = np.random.default_rng(augment_child)

    report = TrainReport(weight_decay=state.weight_decay)
    init_train_loss, _ = evaluate(net, train_set, schedule.batch_size)
    test_loss, test_acc = evaluate(net, test_set, schedule.batch_size)
    report.eval_epochs.append(0)
    report.train_loss.append(init_train_loss)
    report.test_loss.append(test_loss)
    report.test_acc.append(test_acc)

    best_acc = test_acc
    best_epoch = 0
    best_params = _flat_params(net)
    evals_since_best = 0
    step_idx = 0
    n = len(train_set.labels)

    for epoch in range(1, schedule.epochs + 1):
        perm = shuffle_rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, schedule.batch_size):
            idx = perm[start : start + schedule.batch_size]
            xb = train_set.images[idx]
            yb = train_set.labels[idx]
            if augment_fn is not None:
                xb = augment_fn(xb, augment_rng)
            loss, grad = sgd_step(net, state, loss_fn, xb, yb, loss_rng)
            if recorder is not None:
                recorder.observe(step_idx, grad, net)
            epoch_losses.append(loss)
            step_idx += 1

        if epoch % schedule.eval_every == 0 or epoch == schedule.epochs:
            test_loss, test_acc = evaluate(net, test_set, schedule.batch_size)
            report.eval_epochs.append(epoch)
            report.train_loss.append(float(np.mean(epoch_losses)))
            report.test_loss.append(test_loss)
            report.test_acc.append(test_acc)
            if test_acc > best_acc:
                best_acc = test_acc
                best_epoch = epoch
                best_params = _flat_params(net)
                evals_since_best = 0
            else:
                evals_since_best += 1
            if (
                schedule.early_stop is not None
                and evals_since_best >= schedule.early_stop.patience
            ):
                report.stopped_early = True
                break

    if schedule.early_stop is not None:
        _set_flat_params(net, best_params)

    if recorder is not None:
        recorder.close(step_idx)
    report.best_acc = best_acc
    report.best_epoch = best_epoch
    report.final_acc = report.test_acc[-1]
    report.steps = step_idx
    return report
