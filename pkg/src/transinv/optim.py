"""Adam training loop with early stopping on validation accuracy.

The objective is mean cross-entropy plus an L2 penalty (lambda/2) * sum(w^2)
over weight matrices only; biases are never decayed.  The weight-decay term
enters the optimizer as part of the gradient, grad + lambda * w.
"""

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .nn import Model, NonFiniteError

LR_GRID = (1e-4, 3e-4, 1e-3)
L2_GRID = (0.0, 1e-4, 1e-3)


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; names the epoch and batch."""

    def __init__(self, epoch, batch):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    l2_strength: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 20
    patience: int = 3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.l2_strength < 0:
            raise ValueError(f"l2_strength must be >= 0, got {self.l2_strength}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def init_like(cls, params):
        return cls(m={k: np.zeros_like(p.array) for k, p in params.items()},
                   v={k: np.zeros_like(p.array) for k, p in params.items()})


def adam_step(params, grads, state, cfg):
    """One Adam update, in place.  grads must already include any L2 term.

    theta <- theta - lr * mhat / (sqrt(vhat) + eps); eps sits outside the
    square root.
    """
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = np.asarray(grads[name])
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1 - cfg.beta2) * np.square(g)
        mhat = m / (1 - cfg.beta1 ** t)
        vhat = v / (1 - cfg.beta2 ** t)
        p.array -= (cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)).astype(
            p.dtype, copy=False)


def l2_penalty(params, lam):
    """(lambda/2) * sum of squared weight entries; biases excluded."""
    if lam == 0:
        return 0.0
    total = 0.0
    for name, p in params.items():
        if name.endswith("_w"):
            a = p.array.astype(np.float64, copy=False)
            total += float(np.dot(a.reshape(-1), a.reshape(-1)))
    return 0.5 * lam * total


def add_l2_to_grads(grads, params, lam):
    if lam == 0:
        return grads
    for name, p in params.items():
        if name.endswith("_w"):
            grads[name] = np.asarray(grads[name]) + (lam * p.array).astype(p.dtype)
    return grads


def evaluate(model, images, labels, batch_size=256):
    """Top-1 accuracy."""
    labels = np.asarray(labels)
    hits = 0
    for start in range(0, len(labels), batch_size):
        pred = model.predict(images[start:start + batch_size])
        hits += int(np.sum(pred == labels[start:start + batch_size]))
    return hits / len(labels)


@dataclass
class TrainResult:
    model: Model
    metrics: list = field(default_factory=list)  # (epoch, train_loss, val_accuracy)
    best_epoch: int = 0
    epochs_run: int = 0
    val_accuracy: float = 0.0
    stopped_early: bool = False


def train(spec, train_data, val_data, cfg, dataset_tag=""):
    """Train a freshly He-initialized model.

    train_data and val_data are (images, labels) pairs; images are (n, 40, 40)
    or (n, 1, 40, 40) float32 in [0, 1].  The model parameters come from seed
    cfg.seed and the per-epoch shuffles from the independent stream
    cfg.seed + 1, so a run is fully determined by its config.

    Early stopping: if validation accuracy fails to improve for cfg.patience
    consecutive epochs, training stops and the best-epoch snapshot is
    restored.
    """
    images, labels = train_data
    labels = np.asarray(labels, dtype=np.int64)
    val_images, val_labels = val_data
    val_labels = np.asarray(val_labels, dtype=np.int64)

    model = Model.initialize(spec, seed=cfg.seed, dataset=dataset_tag)
    state = AdamState.init_like(model.params)
    shuffle_rng = np.random.default_rng(cfg.seed + 1)

    metrics = []
    best_acc = -1.0
    best_epoch = 0
    best_params = None
    stale = 0
    stopped_early = False
    epochs_run = 0

    for epoch in range(1, cfg.max_epochs + 1):
        perm = shuffle_rng.permutation(len(labels))
        batch_losses = []
        for bi, start in enumerate(range(0, len(labels), cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            # A blown-up run surfaces as NaN scores or gradients well before
            # the mean loss itself overflows, so both paths funnel here.
            try:
                loss, grads = model.loss_and_grads(images[idx], labels[idx])
                loss += l2_penalty(model.params, cfg.l2_strength)
                if not np.isfinite(loss):
                    raise NonFiniteError("non-finite loss")
                add_l2_to_grads(grads, model.params, cfg.l2_strength)
                adam_step(model.params, grads, state, cfg)
            except NonFiniteError as exc:
                raise TrainingDiverged(epoch, bi) from exc
            batch_losses.append(loss)
        epochs_run = epoch
        train_loss = float(np.mean(batch_losses))
        val_acc = evaluate(model, val_images, val_labels)
        metrics.append((epoch, train_loss, val_acc))
        if val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch
            best_params = {k: p.array.copy() for k, p in model.params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                stopped_early = True
                break

    if best_params is not None:
        for k, p in model.params.items():
            p.array[...] = best_params[k]
    model.meta.update({
        "learning_rate": cfg.learning_rate,
        "l2_strength": cfg.l2_strength,
        "batch_size": cfg.batch_size,
        "max_epochs": cfg.max_epochs,
        "patience": cfg.patience,
        "epochs_run": epochs_run,
        "best_epoch": best_epoch,
        "best_val_accuracy": best_acc,
        "init": "he-normal",
        "optimizer": "adam",
    })
    return TrainResult(model=model, metrics=metrics, best_epoch=best_epoch,
                       epochs_run=epochs_run, val_accuracy=best_acc,
                       stopped_early=stopped_early)


def select_hyperparams(spec, train_data, val_data, base_cfg,
                       lr_grid=LR_GRID, l2_grid=L2_GRID, budget_epochs=3):
    """Grid search on a short fixed budget.

    Every (lr, l2) pair trains for budget_epochs with no early stopping and is
    scored by best validation accuracy.  Diverged runs score NaN and are
    excluded from selection; ties keep the first pair in grid order.
    Returns (best_config, report_rows).
    """
    rows = []
    best = None
    best_acc = -1.0
    for lr in lr_grid:
        for l2 in l2_grid:
            cfg = replace(base_cfg, learning_rate=lr, l2_strength=l2,
                          max_epochs=budget_epochs, patience=budget_epochs)
            try:
                result = train(spec, train_data, val_data, cfg)
                acc = result.val_accuracy
            except TrainingDiverged:
                acc = float("nan")
            rows.append((lr, l2, acc))
            if np.isfinite(acc) and acc > best_acc:
                best_acc = acc
                best = replace(base_cfg, learning_rate=lr, l2_strength=l2)
    if best is None:
        raise RuntimeError("every grid point diverged; nothing to select")
    return best, rows


def write_metrics_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_accuracy"])
        for epoch, loss, acc in rows:
            w.writerow([epoch, f"{loss:.6f}", f"{acc:.6f}"])


def write_tuning_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lr", "l2", "val_accuracy"])
        for lr, l2, acc in rows:
            w.writerow([f"{lr:g}", f"{l2:g}", f"{acc:.6f}"])
