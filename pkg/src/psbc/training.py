"""Minibatch gradient descent with step-size control and early stopping.

After every minibatch update the time steps are re-tightened from the
current weight hulls, capped at their initial values.  Accuracy on the
evaluation set is monitored once per epoch; the best weights (and the time
steps in force when they were measured) are kept.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Hyperparameters, WeightStack
from .data import Dataset
from .errors import ConfigurationError, DomainError, PropagationError
from .gradient import cost_and_gradient
from .propagation import (
    PsbcModel,
    cost,
    model_diameters,
    new_model,
    predict_batch,
    step_bound,
)


@dataclass(frozen=True)
class TrainConfig:
    lr_u: float
    lr_p: float
    epochs: int
    seed: int
    lr_decay: float = 0.5
    decay_every: int = 5
    batch_size: int = 32
    patience: int = 10
    monitor: str = "accuracy"

    def __post_init__(self):
        if self.lr_u < 0 or self.lr_p < 0:
            raise ConfigurationError("learning rates must be non-negative")
        if not 0 < self.lr_decay <= 1:
            raise ConfigurationError("lr_decay must lie in (0, 1]")
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1 or self.decay_every < 1:
            raise ConfigurationError("epochs, batch_size, patience, decay_every must be >= 1")
        if self.monitor != "accuracy":
            raise ConfigurationError(f"unsupported monitor {self.monitor!r}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    cost: float
    accuracy: float
    dt_u: float
    dt_p: float
    diam_alpha: float
    diam_beta: float


@dataclass(frozen=True)
class FitReport:
    best_weights: WeightStack
    best_epoch: int
    best_dt_u: float
    best_dt_p: float
    history: list[EpochStats] = field(default_factory=list)
    stopped_early: bool = False


def init_weights(hp: Hyperparameters, seed: int) -> WeightStack:
    """Independent Normal(0.5, 0.1^2) draws for every stored coordinate."""
    rng = np.random.default_rng(seed)
    w_u = rng.normal(0.5, 0.1, size=(hp.n_groups, hp.n_pt))
    w_p = rng.normal(0.5, 0.1, size=(hp.n_groups, hp.n_p))
    return WeightStack(w_u, w_p)


def _accuracy(model: PsbcModel, ds: Dataset) -> float:
    return float(np.mean(predict_batch(model, ds.features) == ds.labels))


def best_model(base: PsbcModel, report: FitReport) -> PsbcModel:
    """Model carrying the best weights and the time steps they were scored with."""
    return base.with_weights(report.best_weights).with_dt(report.best_dt_u, report.best_dt_p)


def fit(model: PsbcModel, train_set: Dataset, eval_set: Dataset, config: TrainConfig) -> FitReport:
    """Train by shuffled minibatch descent; returns the early-stopping record."""
    if len(train_set) == 0 or len(eval_set) == 0:
        raise DomainError("training and evaluation sets must be non-empty")
    for ds in (train_set, eval_set):
        if not np.isin(ds.labels, (0, 1)).all():
            raise DomainError("labels must be 0 or 1")
    rng = np.random.default_rng(config.seed)
    stack = model.weights.copy()
    dt_ceiling_u, dt_ceiling_p = model.hp.dt_u, model.hp.dt_p
    dt_u, dt_p = dt_ceiling_u, dt_ceiling_p
    lr_u, lr_p = config.lr_u, config.lr_p
    xs = train_set.features
    ys = train_set.labels.astype(np.float64)
    n = len(train_set)

    history: list[EpochStats] = []
    best_acc = -math.inf
    best = (stack.copy(), 0, dt_u, dt_p)
    since_improve = 0
    stopped_early = False

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch_no = start // config.batch_size
            idx = order[start : start + config.batch_size]
            current = model.with_weights(stack).with_dt(dt_u, dt_p)
            try:
                value, grad = cost_and_gradient(current, xs[idx], ys[idx])
            except PropagationError as exc:
                raise PropagationError(
                    f"epoch {epoch} batch {batch_no}: {exc}"
                ) from exc
            if not (
                math.isfinite(value)
                and np.isfinite(grad.g_w_u).all()
                and np.isfinite(grad.g_w_p).all()
            ):
                raise PropagationError(f"non-finite cost at epoch {epoch} batch {batch_no}")
            stack.w_u[...] -= lr_u * grad.g_w_u
            stack.w_p[...] -= lr_p * grad.g_w_p
            diam_a, diam_b = model_diameters(model.with_weights(stack))
            dt_u = min(dt_ceiling_u, step_bound(diam_a))
            dt_p = min(dt_ceiling_p, step_bound(diam_b))

        current = model.with_weights(stack).with_dt(dt_u, dt_p)
        epoch_cost = _epoch_cost(current, xs, ys)
        acc = _accuracy(current, eval_set)
        diam_a, diam_b = model_diameters(current)
        history.append(EpochStats(epoch, epoch_cost, acc, dt_u, dt_p, diam_a, diam_b))
        if acc > best_acc:
            best_acc = acc
            best = (stack.copy(), epoch, dt_u, dt_p)
            since_improve = 0
        else:
            since_improve += 1
            if since_improve >= config.patience:
                stopped_early = True
                break
        if epoch % config.decay_every == 0:
            lr_u *= config.lr_decay
            lr_p *= config.lr_decay

    return FitReport(best[0], best[1], best[2], best[3], history, stopped_early)


def _epoch_cost(model: PsbcModel, xs: np.ndarray, ys: np.ndarray) -> float:
    return cost(model, (xs, ys))


def kfold_split(dataset: Dataset, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled near-equal folds; each fold serves once as validation."""
    n = len(dataset)
    if k < 2:
        raise DomainError("k must be at least 2")
    if k > n:
        raise DomainError(f"cannot split {n} samples into {k} folds")
    order = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(order, k)
    splits = []
    for i in range(k):
        val = folds[i]
        train = np.concatenate([folds[j] for j in range(k) if j != i])
        splits.append((train, val))
    return splits


@dataclass(frozen=True)
class Candidate:
    """One grid point: learning rates and initial (ceiling) time steps."""

    lr_u: float
    lr_p: float
    dt_star_u: float
    dt_star_p: float


def _candidate_hp(hp: Hyperparameters, cand: Candidate) -> Hyperparameters:
    return replace(
        hp,
        dt_u=cand.dt_star_u,
        dt_p=cand.dt_star_p,
        dt_star=max(cand.dt_star_u, cand.dt_star_p),
    )


def grid_search(
    grid: list[Candidate],
    dataset: Dataset,
    hp: Hyperparameters,
    k: int,
    seed: int,
    epochs: int = 10,
    batch_size: int = 32,
    patience: int = 10,
) -> tuple[Candidate, list[dict]]:
    """Mean k-fold validation accuracy per candidate; first best wins ties."""
    if not grid:
        raise DomainError("empty candidate grid")
    grid = [c if isinstance(c, Candidate) else Candidate(*c) for c in grid]
    splits = kfold_split(dataset, k, seed)
    fold_seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(k)]
    table = []
    best_idx, best_mean = 0, -math.inf
    for ci, cand in enumerate(grid):
        cand_hp = _candidate_hp(hp, cand)
        fold_accs = []
        for (train_idx, val_idx), fold_seed in zip(splits, fold_seeds):
            weights = init_weights(cand_hp, fold_seed)
            model = new_model(cand_hp, weights)
            config = TrainConfig(
                lr_u=cand.lr_u,
                lr_p=cand.lr_p,
                epochs=epochs,
                seed=fold_seed,
                batch_size=batch_size,
                patience=patience,
            )
            report = fit(model, dataset.subset(train_idx), dataset.subset(val_idx), config)
            fold_accs.append(_accuracy(best_model(model, report), dataset.subset(val_idx)))
        mean_acc = float(np.mean(fold_accs))
        table.append({"candidate": cand, "fold_accuracies": fold_accs, "mean_accuracy": mean_acc})
        if mean_acc > best_mean:
            best_mean, best_idx = mean_acc, ci
    return grid[best_idx], table


def assess(
    hp: Hyperparameters,
    candidate: Candidate,
    train_dev: Dataset,
    test_set: Dataset,
    repeats: int,
    seed: int,
    epochs: int = 20,
    batch_size: int = 32,
    patience: int = 10,
) -> dict:
    """Refit from fresh seeded initializations and score on the test set.

    The monitor runs on the train-development set itself, which is trained
    on whole; the test set stays untouched until final scoring.
    """
    if repeats < 1:
        raise DomainError("repeats must be at least 1")
    cand_hp = _candidate_hp(hp, candidate)
    repeat_seeds = [
        int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(repeats)
    ]
    accuracies = []
    models = []
    for rep_seed in repeat_seeds:
        weights = init_weights(cand_hp, rep_seed)
        model = new_model(cand_hp, weights)
        config = TrainConfig(
            lr_u=candidate.lr_u,
            lr_p=candidate.lr_p,
            epochs=epochs,
            seed=rep_seed,
            batch_size=batch_size,
            patience=patience,
        )
        report = fit(model, train_dev, train_dev, config)
        fitted = best_model(model, report)
        models.append(fitted)
        accuracies.append(_accuracy(fitted, test_set))
    return {
        "mean_accuracy": float(np.mean(accuracies)),
        "sd_accuracy": float(np.std(accuracies)),
        "accuracies": accuracies,
        "models": models,
    }


def write_history_csv(history: list[EpochStats], path: str) -> None:
    """Epoch diagnostics as CSV: cost, accuracy, time steps, hull diameters."""
    import os
    import tempfile

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["epoch", "cost", "accuracy", "dt_u", "dt_p", "diam_alpha", "diam_beta"]
            )
            for row in history:
                writer.writerow(
                    [
                        row.epoch,
                        f"{row.cost:.17g}",
                        f"{row.accuracy:.17g}",
                        f"{row.dt_u:.17g}",
                        f"{row.dt_p:.17g}",
                        f"{row.diam_alpha:.17g}",
                        f"{row.diam_beta:.17g}",
                    ]
                )
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def parse_grid_config(path: str) -> dict:
    """Key/value text config for grids and schedules.

    One `key value...` pair per line; `#` starts a comment.  List-valued
    keys (lr_u, lr_p, dt, dt_u, dt_p) take comma- or space-separated
    numbers.  Returns raw strings for scalar keys and float lists for the
    list keys.
    """
    list_keys = {"lr_u", "lr_p", "dt", "dt_u", "dt_p"}
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, rest = line.partition(" ")
            rest = rest.strip()
            if not rest:
                raise ConfigurationError(f"{path}:{lineno}: key {key!r} has no value")
            if key in list_keys:
                toks = rest.replace(",", " ").split()
                out[key] = [float(t) for t in toks]
            else:
                out[key] = rest
    return out


def candidates_from_config(cfg: dict) -> list[Candidate]:
    """Cartesian grid from config lists.

    `dt` ties the two ceilings together (the usual protocol); explicit
    `dt_u`/`dt_p` lists build the full product instead.
    """
    lr_u = cfg.get("lr_u", [0.1, 0.3, 1.0, 3.0])
    lr_p = cfg.get("lr_p", [0.1, 0.3, 1.0, 3.0])
    if "dt_u" in cfg or "dt_p" in cfg:
        dt_pairs = [(du, dp) for du in cfg.get("dt_u", [0.1, 0.2]) for dp in cfg.get("dt_p", [0.1, 0.2])]
    else:
        dt_pairs = [(d, d) for d in cfg.get("dt", [0.1, 0.2])]
    return [
        Candidate(lu, lp, du, dp)
        for lu in lr_u
        for lp in lr_p
        for (du, dp) in dt_pairs
    ]
