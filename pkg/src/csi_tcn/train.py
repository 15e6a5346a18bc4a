"""Training and evaluation: AdamW with decoupled decay, exponential LR decay,
mini-batch loop, stratified k-fold plans, metrics, and ablation sweeps.

Training is bitwise deterministic for fixed (dataset, configs, seed): all
randomness comes from named sub-streams of the seed, batches reduce in a
fixed order, and BLAS pools are pinned to one thread for the duration of a
run (pools of different sizes may reduce in different orders).
"""

from __future__ import annotations

import contextlib
import dataclasses
import json
import os
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .augment import AugmentConfig, expand_dataset
from .dsp import PreprocessedSample
from .model import (
    AttentionPlacement,
    ModelConfig,
    ModelParams,
    init_model,
    model_forward,
)
from .seeding import named_rng
from .tensor import Tensor, cross_entropy_mean

try:
    from threadpoolctl import threadpool_limits

    def _single_threaded_blas():
        return threadpool_limits(limits=1)

except ImportError:  # pragma: no cover - threadpoolctl is a declared dep

    def _single_threaded_blas():
        return contextlib.nullcontext()


__all__ = [
    "TrainConfig",
    "AdamWState",
    "Metrics",
    "KFoldPlan",
    "AblationRow",
    "adamw_step",
    "lr_at_epoch",
    "evaluate",
    "train",
    "kfold_plan",
    "kfold_evaluate",
    "ablate",
    "write_metrics_csv",
    "write_confusion_csv",
    "write_summary",
    "write_ablation_table",
]


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 200
    base_lr: float = 1e-3
    lr_decay: float = 0.988  # multiplicative, per epoch
    weight_decay: float = 1e-4
    seed: int = 0
    shuffle: bool = True
    k_folds: int = 10

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.base_lr <= 0.0:
            raise ValueError("base_lr must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be >= 0")
        if self.k_folds < 2:
            raise ValueError("k_folds must be >= 2")


@dataclass
class AdamWState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict[str, Tensor]) -> "AdamWState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def adamw_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamWState,
    lr: float,
    weight_decay: float,
) -> None:
    """Bias-corrected Adam moments plus decoupled decay.

    The decay multiplies the parameter directly (theta *= 1 - lr*wd) before
    the moment update is subtracted, so a zero gradient shrinks the weight by
    exactly that factor.
    """
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape} ({name})")
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        p.data = p.data * (1.0 - lr * weight_decay) - lr * (m_hat / (np.sqrt(v_hat) + state.eps))


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    return cfg.base_lr * cfg.lr_decay**epoch


@dataclass
class Metrics:
    n_classes: int
    train_accuracy: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    confusion: Optional[np.ndarray] = None  # rows: true class, cols: predicted

    @property
    def final_val_accuracy(self) -> float:
        if not self.val_accuracy:
            raise ValueError("no validation history recorded")
        return self.val_accuracy[-1]


def _stack(dataset: Sequence[PreprocessedSample]) -> tuple[np.ndarray, np.ndarray]:
    if not dataset:
        raise ValueError("dataset is empty")
    shape = dataset[0].data.shape
    for s in dataset:
        if s.data.shape != shape:
            raise ValueError(f"inconsistent sample shapes: {s.data.shape} vs {shape}")
        if s.label is None:
            raise ValueError("all samples must be labelled")
    data = np.stack([s.data for s in dataset])
    labels = np.array([s.label for s in dataset], dtype=np.int64)
    return data, labels


def _eval_arrays(
    params: ModelParams,
    model_cfg: ModelConfig,
    data: np.ndarray,
    labels: np.ndarray,
    batch_size: int,
) -> tuple[float, float, np.ndarray]:
    n = len(labels)
    confusion = np.zeros((model_cfg.n_classes, model_cfg.n_classes), dtype=np.int64)
    loss_sum = 0.0
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        probs = model_forward(data[idx], params, model_cfg, training=False)
        loss = cross_entropy_mean(probs, labels[idx])
        loss_sum += float(loss.data) * len(idx)
        predicted = probs.data.argmax(axis=1)
        for true, pred in zip(labels[idx], predicted):
            confusion[true, pred] += 1
    accuracy = float(np.trace(confusion)) / n
    return accuracy, loss_sum / n, confusion


def evaluate(
    params: ModelParams,
    model_cfg: ModelConfig,
    dataset: Sequence[PreprocessedSample],
    batch_size: int = 32,
) -> tuple[float, float, np.ndarray]:
    """(accuracy, mean loss, confusion matrix) of the eval-mode model."""
    data, labels = _stack(dataset)
    with _single_threaded_blas():
        return _eval_arrays(params, model_cfg, data, labels, batch_size)


def train(
    dataset: Sequence[PreprocessedSample],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    val_dataset: Optional[Sequence[PreprocessedSample]] = None,
) -> tuple[ModelParams, Metrics]:
    """Mini-batch AdamW training; per-epoch history plus a final confusion
    matrix when a validation set is given.

    Per epoch: seeded reshuffle, batches of `batch_size` (last one short),
    batch loss = mean per-sample cross-entropy on the pooled distribution,
    one optimizer step per batch at lr_at_epoch(). Training accuracy is
    measured on the training-mode forward passes (dropout active).
    """
    data, labels = _stack(dataset)
    if len(np.unique(labels)) < 2:
        raise ValueError("training requires at least 2 classes")
    val_arrays = _stack(val_dataset) if val_dataset else None

    params = init_model(model_cfg, named_rng(train_cfg.seed, "init"))
    named = params.named()
    state = AdamWState.for_params(named)
    shuffle_rng = named_rng(train_cfg.seed, "shuffle")
    dropout_rng = named_rng(train_cfg.seed, "dropout")
    metrics = Metrics(n_classes=model_cfg.n_classes)

    n = len(labels)
    with _single_threaded_blas():
        for epoch in range(train_cfg.epochs):
            started = time.perf_counter()
            lr = lr_at_epoch(train_cfg, epoch)
            order = shuffle_rng.permutation(n) if train_cfg.shuffle else np.arange(n)
            loss_sum = 0.0
            correct = 0
            for start in range(0, n, train_cfg.batch_size):
                idx = order[start : start + train_cfg.batch_size]
                probs = model_forward(
                    data[idx], params, model_cfg, training=True, rng=dropout_rng
                )
                loss = cross_entropy_mean(probs, labels[idx])
                for p in named.values():
                    p.grad = None
                loss.backward()
                grads = {
                    k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                    for k, p in named.items()
                }
                adamw_step(named, grads, state, lr, train_cfg.weight_decay)
                loss_sum += float(loss.data) * len(idx)
                correct += int((probs.data.argmax(axis=1) == labels[idx]).sum())
            metrics.train_accuracy.append(correct / n)
            metrics.train_loss.append(loss_sum / n)
            if val_arrays is not None:
                acc, vloss, confusion = _eval_arrays(
                    params, model_cfg, *val_arrays, train_cfg.batch_size
                )
                metrics.val_accuracy.append(acc)
                metrics.val_loss.append(vloss)
                metrics.confusion = confusion
            metrics.epoch_seconds.append(time.perf_counter() - started)
        if val_arrays is not None and metrics.confusion is None:
            _, _, metrics.confusion = _eval_arrays(
                params, model_cfg, *val_arrays, train_cfg.batch_size
            )
    return params, metrics


# ---------------------------------------------------------------------------
# K-fold cross-validation


@dataclass
class KFoldPlan:
    k: int
    folds: list[np.ndarray]
    seed: int

    def train_indices(self, fold: int) -> np.ndarray:
        rest = [f for i, f in enumerate(self.folds) if i != fold]
        return np.sort(np.concatenate(rest))


def kfold_plan(labels: Sequence[int], k: int = 10, seed: int = 0) -> KFoldPlan:
    """Stratified partition: each class is shuffled then dealt round-robin,
    keeping per-fold class counts within one sample of exact proportionality."""
    labels = np.asarray(labels)
    n = len(labels)
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError(f"cannot split {n} samples into {k} folds")
    buckets: list[list[int]] = [[] for _ in range(k)]
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        rng = named_rng(seed, "kfold", int(c))
        idx = idx[rng.permutation(len(idx))]
        for i, j in enumerate(idx):
            buckets[i % k].append(int(j))
    return KFoldPlan(k=k, folds=[np.array(sorted(b), dtype=np.int64) for b in buckets], seed=seed)


def kfold_evaluate(
    dataset: Sequence[PreprocessedSample],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    k: int = 10,
) -> tuple[list[Metrics], float]:
    """Train k models, each validated on its held-out fold; returns per-fold
    metrics and the arithmetic mean of the final validation accuracies."""
    _, labels = _stack(dataset)
    plan = kfold_plan(labels, k=k, seed=train_cfg.seed)
    classes = np.unique(labels)
    per_fold: list[Metrics] = []
    for fold in range(k):
        train_idx = plan.train_indices(fold)
        present = np.unique(labels[train_idx])
        missing = np.setdiff1d(classes, present)
        if len(missing):
            raise ValueError(f"class {missing[0]} absent from the training split of fold {fold}")
        train_set = [dataset[i] for i in train_idx]
        val_set = [dataset[i] for i in plan.folds[fold]]
        _, metrics = train(train_set, model_cfg, train_cfg, val_set)
        per_fold.append(metrics)
    mean_accuracy = float(np.mean([m.final_val_accuracy for m in per_fold]))
    return per_fold, mean_accuracy


# ---------------------------------------------------------------------------
# Ablation sweeps


@dataclass
class AblationRow:
    sweep: str
    value: str
    train_accuracy: float
    val_accuracy: float
    train_loss: float
    val_loss: float


_SWEEP_KINDS = ("kernel", "dropout", "attention", "augment")


def ablate(
    dataset: Sequence[PreprocessedSample],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    sweep: str,
    values: Sequence,
    augment_cfg: Optional[AugmentConfig] = None,
) -> list[AblationRow]:
    """Train/validate once per sweep point with everything else fixed.

    Validation is fold 0 of the stratified k-fold plan; an `augment` sweep
    expands only the training split. Values for `augment` are "none" or
    "+"-joined method names (e.g. "dropout+mix_same").
    """
    if sweep not in _SWEEP_KINDS:
        raise ValueError(f"unknown sweep {sweep!r}, expected one of {_SWEEP_KINDS}")
    _, labels = _stack(dataset)
    plan = kfold_plan(labels, k=train_cfg.k_folds, seed=train_cfg.seed)
    val_set = [dataset[i] for i in plan.folds[0]]
    base_train = [dataset[i] for i in plan.train_indices(0)]

    rows = []
    for value in values:
        mc = model_cfg
        train_set = base_train
        if sweep == "kernel":
            mc = dataclasses.replace(model_cfg, kernel=int(value))
        elif sweep == "dropout":
            mc = dataclasses.replace(model_cfg, dropout=float(value))
        elif sweep == "attention":
            mc = dataclasses.replace(model_cfg, attention_placement=AttentionPlacement(value))
        else:
            if str(value) != "none":
                base = augment_cfg or AugmentConfig(seed=train_cfg.seed)
                methods = tuple(str(value).split("+"))
                train_set = expand_dataset(base_train, dataclasses.replace(base, methods=methods))
        _, metrics = train(train_set, mc, train_cfg, val_set)
        rows.append(
            AblationRow(
                sweep=sweep,
                value=str(value),
                train_accuracy=metrics.train_accuracy[-1] if metrics.train_accuracy else 0.0,
                val_accuracy=metrics.final_val_accuracy,
                train_loss=metrics.train_loss[-1] if metrics.train_loss else 0.0,
                val_loss=metrics.val_loss[-1],
            )
        )
    return rows


# ---------------------------------------------------------------------------
# Deterministic file emission (floats via repr: shortest exact round-trip)


def write_metrics_csv(metrics: Metrics, path: str | os.PathLike) -> None:
    lines = ["epoch,split,accuracy,loss\n"]
    for epoch, (acc, loss) in enumerate(zip(metrics.train_accuracy, metrics.train_loss)):
        lines.append(f"{epoch},train,{acc!r},{loss!r}\n")
        if epoch < len(metrics.val_accuracy):
            lines.append(f"{epoch},val,{metrics.val_accuracy[epoch]!r},{metrics.val_loss[epoch]!r}\n")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.writelines(lines)


def write_confusion_csv(confusion: np.ndarray, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for row in confusion:
            fh.write(",".join(str(int(v)) for v in row) + "\n")


def write_summary(payload: dict, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_ablation_table(rows: Sequence[AblationRow], path: str | os.PathLike) -> None:
    lines = ["sweep,value,train_accuracy,val_accuracy,train_loss,val_loss\n"]
    for r in rows:
        lines.append(
            f"{r.sweep},{r.value},{r.train_accuracy!r},{r.val_accuracy!r},"
            f"{r.train_loss!r},{r.val_loss!r}\n"
        )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.writelines(lines)
