"""Mini-batch Adam training, evaluation metrics and the two validation protocols."""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from . import nn
from .data import TrialDataset, split_leave_one_out, split_subject_specific
from .errors import DataError, SingleClassError, UndefinedCorrelationError
from .model import ArchitectureConfig, CENet, build_model

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 128
    epochs: int = 50
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    dropout: float | None = None     # None keeps the architecture's rate
    seed: int = 0
    shuffle: bool = True
    early_stopping_patience: int | None = None
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm needs two samples)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown train-config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvalReport:
    """Rows of ``confusion`` are true classes, columns predicted (0 = disengaged)."""

    confusion: np.ndarray
    subject_id: str | None = None

    @property
    def n(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.n)

    @property
    def precision(self) -> np.ndarray:
        col = self.confusion.sum(axis=0)
        return np.divide(np.diag(self.confusion), col, out=np.zeros(2), where=col > 0)

    @property
    def recall(self) -> np.ndarray:
        row = self.confusion.sum(axis=1)
        return np.divide(np.diag(self.confusion), row, out=np.zeros(2), where=row > 0)

    @property
    def f1(self) -> np.ndarray:
        p, r = self.precision, self.recall
        return np.divide(2 * p * r, p + r, out=np.zeros(2), where=(p + r) > 0)

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "n": self.n,
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        return cls(np.asarray(doc["confusion"], dtype=np.int64), doc.get("subject_id"))


def confusion_matrix(y_true, y_pred) -> np.ndarray:
    cm = np.zeros((2, 2), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.intp), np.asarray(y_pred, dtype=np.intp)), 1)
    return cm


def _batches(n, batch_size, rng):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for s in range(0, n, batch_size):
        idx = order[s:s + batch_size]
        if len(idx) >= 2:          # short tail kept only if batch norm can use it
            yield np.sort(idx)


def train(model: CENet, dataset: TrialDataset, config: TrainConfig | None = None):
    """Minimize mean cross entropy with mini-batch Adam.

    Returns ``(model, loss_history)``; ``loss_history`` holds the mean training
    loss of each epoch.  The model is updated in place.
    """
    config = config or TrainConfig()
    X, y = dataset.arrays()
    if len(np.unique(y)) < 2:
        raise SingleClassError("training data must contain both classes")
    if config.dropout is not None:
        model.dropout.rate = config.dropout
    rng = np.random.default_rng(config.seed)
    model.dropout.rng = np.random.default_rng([config.seed, 1])

    val_idx = None
    if config.early_stopping_patience is not None:
        perm = rng.permutation(len(y))
        n_val = max(2, int(round(config.validation_fraction * len(y))))
        val_idx, train_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
        X_val, y_val = X[val_idx], y[val_idx]
        X, y = X[train_idx], y[train_idx]

    params = model.parameters()
    opt = nn.Adam(params, lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
    history = []
    best = (math.inf, None)
    stale = 0
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for idx in _batches(len(y), config.batch_size, rng if config.shuffle else None):
            logits = model.forward(X[idx], training=True)
            loss, _, dlogits = nn.softmax_bce(logits, y[idx])
            if not math.isfinite(loss):
                raise DataError(f"non-finite loss at epoch {epoch}")
            model.backward(dlogits)
            opt.step(model.gradients())
            total += loss * len(idx)
            count += len(idx)
        history.append(total / count)
        log.info("epoch %d loss %.4f", epoch + 1, history[-1])
        if val_idx is not None:
            p = np.clip(model.probabilities(X_val)[np.arange(len(y_val)), y_val], 1e-12, 1.0)
            val_loss = float(-np.mean(np.log(p)))
            if val_loss < best[0]:
                best, stale = (val_loss, [a.copy() for _, a in model.named_arrays()]), 0
            else:
                stale += 1
                if stale >= config.early_stopping_patience:
                    break
    if best[1] is not None:
        for (_, a), saved in zip(model.named_arrays(), best[1]):
            a[...] = saved
    model.metadata.update({"train_seed": config.seed, "epochs": len(history), "loss_history": history})
    return model, history


def evaluate(model: CENet, dataset: TrialDataset, subject_id: str | None = None) -> EvalReport:
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    X, y = dataset.arrays()
    pred = (model.probabilities(X)[:, 1] > 0.5).astype(np.int64)
    return EvalReport(confusion_matrix(y, pred), subject_id)


@dataclass
class LosoResult:
    reports: dict
    models: dict = field(default_factory=dict, repr=False)

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([self.reports[s].accuracy for s in sorted(self.reports)])

    @property
    def mean_accuracy(self) -> float:
        return float(self.accuracies.mean())

    @property
    def std_accuracy(self) -> float:
        return float(self.accuracies.std())

    def to_dict(self) -> dict:
        return {"protocol": "loso",
                "folds": [self.reports[s].to_dict() for s in sorted(self.reports)],
                "mean_accuracy": self.mean_accuracy,
                "std_accuracy": self.std_accuracy}


def _max_workers():
    try:
        return max(1, int(os.environ.get("ENGAGE_THREADS", "1")))
    except ValueError:
        return 1


def run_loso(datasets: Mapping[str, TrialDataset], train_config: TrainConfig | None = None,
             arch: ArchitectureConfig | None = None, keep_models: bool = False) -> LosoResult:
    """Leave-one-subject-out: one fresh model per held-out subject."""
    if len(datasets) < 2:
        raise ValueError("leave-one-out needs at least two subjects")
    train_config = train_config or TrainConfig()
    subjects = sorted(datasets)

    def fold(sid):
        train_set, test_set = split_leave_one_out(datasets, sid)
        assert sid not in train_set.subject_ids
        model = build_model(arch, seed=train_config.seed)
        train(model, train_set, train_config)
        return sid, evaluate(model, test_set, sid), model

    with ThreadPoolExecutor(max_workers=_max_workers()) as pool:
        results = list(pool.map(fold, subjects))
    reports = {sid: rep for sid, rep, _ in results}
    models = {sid: m for sid, _, m in results} if keep_models else {}
    return LosoResult(reports, models)


def run_subject_specific(dataset: TrialDataset, ratio=(4, 1), train_config: TrainConfig | None = None,
                         arch: ArchitectureConfig | None = None, max_retries: int = 10,
                         return_model: bool = False):
    """Train on the larger part of a random split, evaluate on the rest.

    The split is redrawn (seed + attempt) until both parts hold both classes.
    """
    train_config = train_config or TrainConfig()
    if ratio[0] <= 0 or ratio[1] <= 0:
        raise ValueError(f"ratio parts must be positive, got {ratio}")
    if len(set(dataset.labels)) < 2:
        raise SingleClassError("subject data must contain both classes")
    for attempt in range(max_retries):
        train_set, test_set = split_subject_specific(dataset, ratio, seed=train_config.seed + attempt)
        if len(set(train_set.labels)) == 2 and len(set(test_set.labels)) == 2:
            break
    else:
        raise DataError(f"no two-class split found in {max_retries} attempts")
    model = build_model(arch, seed=train_config.seed)
    train(model, train_set, train_config)
    sid = next(iter(dataset.subject_ids))
    report = evaluate(model, test_set, sid)
    return (report, model) if return_model else report


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("pearson needs two equal-length sequences of length >= 2")
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(xc @ xc), np.sqrt(yc @ yc)
    if sx == 0 or sy == 0:
        raise UndefinedCorrelationError("correlation undefined for a constant sequence")
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))
