"""Stratified k-fold cross-validation and the accuracy/precision/recall/F1 suite."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence, TextIO

import numpy as np

from .features import apply_tfidf, as_csr, class_weights, idf_weights
from .models import TrainConfig, predict_labels, train

METRIC_NAMES = ("accuracy", "precision", "recall", "f1")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)


@dataclass(frozen=True)
class Metrics:
    """Scores in percent. ``undefined`` names ratios whose denominator was 0."""

    accuracy: float
    precision: float
    recall: float
    f1: float
    undefined: tuple[str, ...] = ()

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.accuracy, self.precision, self.recall, self.f1)


def confusion(predictions: Sequence[int], labels: Sequence[int]) -> ConfusionMatrix:
    p = np.asarray(predictions, dtype=int)
    y = np.asarray(labels, dtype=int)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.size} predictions, {y.size} labels")
    return ConfusionMatrix(
        tp=int(np.sum((p == 1) & (y == 1))),
        fp=int(np.sum((p == 1) & (y == 0))),
        tn=int(np.sum((p == 0) & (y == 0))),
        fn=int(np.sum((p == 0) & (y == 1))),
    )


def _ratio(num: float, den: float, name: str, undefined: list) -> float:
    if den == 0:
        undefined.append(name)
        return 0.0
    return 100.0 * num / den


def metrics(cm: ConfusionMatrix) -> Metrics:
    if cm.total == 0:
        raise ValueError("metrics of an empty confusion matrix")
    undefined: list[str] = []
    accuracy = 100.0 * (cm.tp + cm.tn) / cm.total
    precision = _ratio(cm.tp, cm.tp + cm.fp, "precision", undefined)
    recall = _ratio(cm.tp, cm.tp + cm.fn, "recall", undefined)
    if precision + recall == 0:
        undefined.append("f1")
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return Metrics(accuracy, precision, recall, f1, tuple(undefined))


def false_positive_rate(cm: ConfusionMatrix) -> float:
    """Percent of negatives predicted positive."""
    return _ratio(cm.fp, cm.fp + cm.tn, "fpr", [])


def stratified_kfold(labels: Sequence[int], k: int, seed: int = 0) -> list[np.ndarray]:
    """Split indices into ``k`` disjoint folds with per-class counts within one.

    Each class is shuffled and dealt round-robin; the dealer carries on from
    where the previous class stopped so fold sizes also stay within one.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    y = np.asarray(labels)
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    offset = 0
    for cls in np.unique(y):
        members = np.flatnonzero(y == cls)
        if members.size < k:
            raise ValueError(f"class {cls} has {members.size} members, fewer than k={k}")
        members = rng.permutation(members)
        for j, idx in enumerate(members):
            folds[(offset + j) % k].append(int(idx))
        offset = (offset + members.size) % k
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds]


@dataclass
class FoldReport:
    folds: list[Metrics]
    confusions: list[ConfusionMatrix]
    name: str = ""
    predictions: np.ndarray | None = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return len(self.folds)

    def mean(self) -> Metrics:
        arr = np.array([m.as_tuple() for m in self.folds])
        return Metrics(*arr.mean(axis=0))

    def std(self) -> Metrics:
        arr = np.array([m.as_tuple() for m in self.folds])
        return Metrics(*arr.std(axis=0, ddof=1)) if len(arr) > 1 else Metrics(0.0, 0.0, 0.0, 0.0)

    @property
    def total(self) -> ConfusionMatrix:
        out = ConfusionMatrix(0, 0, 0, 0)
        for cm in self.confusions:
            out = out + cm
        return out

    def row(self) -> list[str]:
        """Cells of a results row: name, TP, FP, TN, FN, then ``mean (±std)`` scores."""
        cm, mean, std = self.total, self.mean(), self.std()
        cells = [self.name, str(cm.tp), str(cm.fp), str(cm.tn), str(cm.fn)]
        cells += [f"{m:.2f} (±{s:.2f})" for m, s in zip(mean.as_tuple(), std.as_tuple())]
        return cells

    def format_table(self) -> str:
        header = ["Model", "TP", "FP", "TN", "FN", "Accuracy", "Precision", "Recall", "F1-Score"]
        rows = [header, self.row()]
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = [" | ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
        lines.insert(1, "-+-".join("-" * w for w in widths))
        lines.append("")
        lines.append("Per fold:")
        for i, m in enumerate(self.folds, start=1):
            lines.append(f"  fold {i}: " + ", ".join(f"{n} {v:.2f}" for n, v in zip(METRIC_NAMES, m.as_tuple())))
        return "\n".join(lines)

    def write_csv(self, out: TextIO) -> None:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["model", "tp", "fp", "tn", "fn",
                    *(f"{n}_{s}" for n in METRIC_NAMES for s in ("mean", "std"))])
        cm, mean, std = self.total, self.mean(), self.std()
        vals = []
        for m, s in zip(mean.as_tuple(), std.as_tuple()):
            vals += [f"{m:.4f}", f"{s:.4f}"]
        w.writerow([self.name, cm.tp, cm.fp, cm.tn, cm.fn, *vals])


def cross_validate(
    X,
    y: Sequence[int],
    model_kind: str,
    cfg: TrainConfig,
    k: int = 5,
    seed: int = 0,
    balance: bool = True,
    weighting: str = "count",
    threads: int = 1,
    name: str = "",
) -> FoldReport:
    """Train on k-1 folds, score the held-out fold, for each fold in turn.

    With ``balance`` the class weights are recomputed on every training
    split. ``weighting="tfidf"`` fits idf on the training split only.
    """
    X = as_csr(X)
    y = np.asarray(y, dtype=int)
    folds = stratified_kfold(y, k, seed)

    def run(i: int):
        test = folds[i]
        train_idx = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
        Xtr, Xte = X[train_idx], X[test]
        if weighting == "tfidf":
            idf = idf_weights(Xtr)
            Xtr, Xte = apply_tfidf(Xtr, idf), apply_tfidf(Xte, idf)
        elif weighting != "count":
            raise ValueError(f"unknown weighting {weighting!r}")
        fold_cfg = replace(cfg, class_weights=class_weights(y[train_idx])) if balance else cfg
        model = train(model_kind, Xtr, y[train_idx], fold_cfg)
        pred = predict_labels(model, Xte)
        return pred, confusion(pred, y[test])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run, range(k)))
    else:
        results = [run(i) for i in range(k)]

    predictions = np.full(y.size, -1)
    for fold, (pred, _) in zip(folds, results):
        predictions[fold] = pred
    cms = [cm for _, cm in results]
    return FoldReport([metrics(cm) for cm in cms], cms, name=name, predictions=predictions)
