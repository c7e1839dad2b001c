"""Training loop, stratified splitting, and evaluation metrics.

One iteration is a full seeded-shuffle pass over the training set in
minibatches.  Euclidean parameters take plain SGD steps; the attention
projections take Riemannian steps (tangent projection + QR retraction)
at the same learning rate.  After each iteration the validation loss
is recorded, and the parameter snapshot with the lowest validation
loss is what training returns.
"""

import os
from dataclasses import dataclass

import numpy as np

from .attention import attention_scores
from .autodiff import stiefel_step
from .errors import ConfigError, ContractError, DivergenceError, StratificationError
from .model import forward, init_params, loss_and_grads

__all__ = [
    "TrainConfig",
    "TrainResult",
    "EvalReport",
    "split",
    "train",
    "evaluate",
    "auc_score",
    "save_history",
]


@dataclass
class TrainConfig:
    iterations: int = 350
    lr: float = 1e-2
    batch_size: int = 32
    val_fraction: float = 1.0 / 8.0
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.lr < 0:
            raise ConfigError("learning rate must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("validation fraction must lie in (0, 1)")


@dataclass
class TrainResult:
    """Best parameter snapshot plus the per-iteration loss history."""

    params: object
    history: list
    best_iteration: int
    best_val_loss: float


@dataclass
class EvalReport:
    accuracy: float
    auc: float | None
    confusion: np.ndarray
    attention_profile: np.ndarray


def split(dataset, fraction, seed):
    """Seeded stratified split into (rest, held-out fraction).

    Class proportions are preserved within one trial per class; the
    parts are disjoint and exhaustive, and each keeps the original
    trial order.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    held_idx = []
    rest_idx = []
    for cls in range(dataset.classes):
        members = np.flatnonzero(dataset.labels == cls)
        take = int(round(fraction * members.size))
        if members.size and (take == 0 or take == members.size):
            raise StratificationError(
                f"class {cls} has {members.size} trials; fraction {fraction} "
                "leaves one part empty"
            )
        chosen = rng.permutation(members)[:take]
        held_idx.append(chosen)
        rest_idx.append(np.setdiff1d(members, chosen))
    held = np.sort(np.concatenate(held_idx))
    rest = np.sort(np.concatenate(rest_idx))
    return dataset.subset(rest), dataset.subset(held)


def _mean_loss(dataset, params, cfg):
    total = 0.0
    for i in range(dataset.n_trials):
        probs, _, _ = forward(dataset.trials[i], params, cfg)
        p = max(float(probs[dataset.labels[i]]), 1e-12)
        total += -np.log(p)
    return total / dataset.n_trials


def train(dataset, model_cfg, train_cfg):
    """Fit the decoder on a dataset.

    The dataset is split into training and validation parts
    (stratified, seeded); each iteration shuffles the training part,
    applies minibatch updates, then scores the validation part.  The
    returned parameters are the snapshot from the iteration with the
    minimum validation loss.

    Raises
    ------
    DivergenceError
        If a non-finite loss appears; carries the iteration index.
    """
    present = np.unique(dataset.labels)
    if dataset.classes < 2 or present.size < 2:
        raise ContractError("training requires at least 2 classes present")
    train_part, val_part = split(dataset, train_cfg.val_fraction, train_cfg.seed)
    if train_part.n_trials < train_cfg.batch_size:
        raise ContractError(
            f"{train_part.n_trials} training trials < batch size "
            f"{train_cfg.batch_size}"
        )

    params = init_params(model_cfg)
    rng = np.random.default_rng(train_cfg.seed)
    history = []
    best_val = np.inf
    best_iteration = -1
    best_params = params.copy()

    n = train_part.n_trials
    for iteration in range(train_cfg.iterations):
        order = rng.permutation(n)
        weighted = 0.0
        for start in range(0, n, train_cfg.batch_size):
            batch = order[start : start + train_cfg.batch_size]
            loss, grads = loss_and_grads(
                train_part.trials[batch], train_part.labels[batch], params, model_cfg
            )
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite training loss at iteration {iteration}", iteration
                )
            weighted += loss * batch.size
            if train_cfg.lr > 0:
                for name, g in grads.items():
                    if name in params.stiefel:
                        params.stiefel[name] = stiefel_step(
                            params.stiefel[name], g, train_cfg.lr
                        )
                    else:
                        params.euclidean[name] = params.euclidean[name] - train_cfg.lr * g
        train_loss = weighted / n
        val_loss = _mean_loss(val_part, params, model_cfg)
        if not np.isfinite(val_loss):
            raise DivergenceError(
                f"non-finite validation loss at iteration {iteration}", iteration
            )
        history.append((iteration, float(train_loss), float(val_loss)))
        if val_loss < best_val:
            best_val = float(val_loss)
            best_iteration = iteration
            best_params = params.copy()
    return TrainResult(best_params, history, best_iteration, best_val)


def auc_score(scores, labels):
    """Area under the ROC curve via tie-averaged ranks.

    Equals the Mann-Whitney statistic: the fraction of
    (positive, negative) pairs ranked correctly, ties counting half.
    ``labels`` must be 0/1 with both classes present.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ContractError("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ContractError("AUC requires both classes present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        # 1-based ranks, ties get the group average
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def evaluate(params, cfg, dataset):
    """Score a parameter set on a labeled dataset.

    Returns accuracy, the confusion matrix (rows true, columns
    predicted), the mean per-epoch attention profile, and, for binary
    datasets with both classes present, the AUC of the positive-class
    probability.
    """
    if dataset.n_trials == 0:
        raise ContractError("evaluation set is empty")
    if dataset.classes != cfg.classes:
        raise ContractError(
            f"dataset has {dataset.classes} classes but model expects {cfg.classes}"
        )
    confusion = np.zeros((cfg.classes, cfg.classes), dtype=np.int64)
    prob_rows = np.empty((dataset.n_trials, cfg.classes))
    profiles = np.empty((dataset.n_trials, cfg.m))
    for i in range(dataset.n_trials):
        probs, att, _ = forward(dataset.trials[i], params, cfg)
        prob_rows[i] = probs
        profiles[i] = attention_scores(att)
        confusion[dataset.labels[i], int(np.argmax(probs))] += 1
    accuracy = float(np.trace(confusion)) / dataset.n_trials
    auc = None
    if cfg.classes == 2 and np.unique(dataset.labels).size == 2:
        auc = auc_score(prob_rows[:, 1], dataset.labels)
    return EvalReport(
        accuracy=accuracy,
        auc=auc,
        confusion=confusion,
        attention_profile=profiles.mean(axis=0),
    )


def save_history(path, history):
    """Write the loss history as CSV: iteration, train loss, val loss."""
    lines = ["iteration,train_loss,val_loss"]
    lines += [f"{it},{tl!r},{vl!r}" for it, tl, vl in history]
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)
