"""Evaluation metrics and the experimental protocols.

Protocols: K sweep, training-size sweep, mode transfer, merged-mode training
and the twelve-class (client x mode) experiment. All of them produce
:class:`ExperimentReport` objects which serialize to JSON or a text table.

A report's ``accuracy`` is always ``trace(confusion) / total``. For
cross-validated reports the confusion matrix is pooled over folds and the
per-fold mean/std live in ``metrics``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import knn, mlp
from .dataset import (
    LabeledDataset, collapse_labels, merge_equal_parts, relabel_twelve_class,
    stratified_kfold, subsample_balanced, train_test_split,
)

log = logging.getLogger(__name__)

ClassifierConfig = Union[knn.KnnConfig, mlp.MlpConfig]
Model = Union[knn.KnnModel, mlp.MlpModel]

VAL_FRACTION = 0.1


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows true, columns predicted
    class_names: tuple[str, ...]

    @classmethod
    def from_predictions(cls, y_true, y_pred, class_names) -> "ConfusionMatrix":
        c = len(class_names)
        counts = np.zeros((c, c), dtype=np.int64)
        np.add.at(counts, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
        return cls(counts, tuple(class_names))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.counts))

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else float("nan")

    def recall(self) -> tuple[np.ndarray, list[str]]:
        """Per-class recall; classes with no true samples get 0 and are listed."""
        support = self.counts.sum(axis=1)
        diag = np.diag(self.counts)
        rec = np.divide(diag, support, out=np.zeros(len(diag)), where=support > 0)
        absent = [n for n, s in zip(self.class_names, support) if s == 0]
        return rec, absent

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.class_names != self.class_names:
            raise ValueError("cannot add confusion matrices over different classes")
        return ConfusionMatrix(self.counts + other.counts, self.class_names)

    def collapse(self) -> "ConfusionMatrix":
        """Sum client x mode rows/columns into per-client totals."""
        mapping, clients = collapse_labels(np.arange(len(self.class_names)), self.class_names)
        out = np.zeros((len(clients), len(clients)), dtype=np.int64)
        np.add.at(out, (mapping[:, None], mapping[None, :]), self.counts)
        return ConfusionMatrix(out, clients)


@dataclass
class ExperimentReport:
    kind: str
    dataset: dict
    classifier: dict
    confusion: ConfusionMatrix
    protocol: str = "held_out"
    curve: Optional[list[dict]] = None
    metrics: dict = field(default_factory=dict)
    seed: Optional[int] = None
    timestamp: Optional[str] = None
    # fold index audit trail; not serialized
    indices: list = field(default_factory=list, repr=False)

    @property
    def accuracy(self) -> float:
        return self.confusion.accuracy

    @property
    def per_class_recall(self) -> np.ndarray:
        return self.confusion.recall()[0]

    def to_dict(self) -> dict:
        recall, absent = self.confusion.recall()
        return {
            "kind": self.kind,
            "protocol": self.protocol,
            "dataset": self.dataset,
            "classifier": self.classifier,
            "accuracy": self.accuracy,
            "correct": self.confusion.correct,
            "total": self.confusion.total,
            "per_class_recall": dict(zip(self.confusion.class_names, recall.tolist())),
            "absent_classes": absent,
            "confusion": {"class_names": list(self.confusion.class_names),
                          "counts": self.confusion.counts.tolist()},
            "curve": self.curve,
            "metrics": self.metrics,
            "seed": self.seed,
            "timestamp": self.timestamp,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        names = self.confusion.class_names
        recall, absent = self.confusion.recall()
        width = max(8, max(len(n) for n in names))
        lines = [f"{self.kind} [{self.protocol}] accuracy {self.accuracy:.4f} "
                 f"({self.confusion.correct}/{self.confusion.total})"]
        for key in ("cv_mean", "cv_std", "collapsed_accuracy"):
            if key in self.metrics:
                lines.append(f"  {key}: {self.metrics[key]:.4f}")
        lines.append("")
        corner = "true/pred"
        lines.append(f"{corner:<{width}} " + " ".join(f"{n[:8]:>8}" for n in names) + "   recall")
        for name, row, r in zip(names, self.confusion.counts, recall):
            flag = " (absent)" if name in absent else ""
            lines.append(f"{name:<{width}} " + " ".join(f"{v:>8d}" for v in row) + f"   {r:.4f}{flag}")
        if self.curve:
            lines.append("")
            lines.append(f"{'x':>10} {'mean':>8} {'std':>8}")
            for p in self.curve:
                lines.append(f"{p['x']:>10} {p['mean']:>8.4f} {p['std']:>8.4f}")
        return "\n".join(lines) + "\n"


def fit_classifier(config: ClassifierConfig, train: LabeledDataset, seed: int = 0,
                   val_fraction: float = VAL_FRACTION) -> Model:
    """Fit either classifier kind; the MLP carves a stratified validation split for early stopping."""
    if isinstance(config, knn.KnnConfig):
        return knn.fit(train, config)
    if isinstance(config, mlp.MlpConfig):
        counts = train.class_counts()
        if val_fraction > 0 and counts[counts > 0].min() >= 2:
            fit_part, val = train_test_split(train, val_fraction, seed)
        else:
            fit_part, val = train, None
        return mlp.train(fit_part, val, config)
    raise TypeError(f"unknown classifier config {type(config).__name__}")


def evaluate(model: Model, test: LabeledDataset, kind: str = "evaluate") -> ExperimentReport:
    if tuple(model.class_names) != tuple(test.class_names):
        raise ValueError(f"class mismatch: model {model.class_names} vs test {test.class_names}")
    preds, _ = model.predict_batch(test.vectors) if len(test) else (np.zeros(0, dtype=np.int64), None)
    return ExperimentReport(
        kind=kind, dataset=test.describe(), classifier=model.describe(),
        confusion=ConfusionMatrix.from_predictions(test.labels, preds, test.class_names))


def cross_validate(ds: LabeledDataset, config: ClassifierConfig, k: int = 5,
                   seed: int = 0) -> tuple[float, float, list[ExperimentReport]]:
    """Fresh model (and scaler) per fold; returns mean and population std of fold accuracies."""
    folds = stratified_kfold(ds, k, seed)
    reports = []
    for f, (train_idx, test_idx) in enumerate(folds):
        model = fit_classifier(config, ds.subset(train_idx), seed)
        rep = evaluate(model, ds.subset(test_idx), kind=f"fold_{f}")
        rep.indices = [(train_idx, test_idx)]
        reports.append(rep)
        log.info("fold %d/%d accuracy %.4f", f + 1, k, rep.accuracy)
    accs = np.array([r.accuracy for r in reports])
    return float(accs.mean()), float(accs.std()), reports


def cv_report(ds: LabeledDataset, config: ClassifierConfig, k: int, seed: int,
              kind: str = "cross_validate") -> ExperimentReport:
    mean, std, folds = cross_validate(ds, config, k, seed)
    pooled = folds[0].confusion
    for r in folds[1:]:
        pooled = pooled + r.confusion
    return ExperimentReport(
        kind=kind, dataset=ds.describe(), classifier=config.describe(), confusion=pooled,
        protocol=f"stratified_{k}_fold_cv",
        metrics={"cv_mean": mean, "cv_std": std, "fold_accuracies": [r.accuracy for r in folds]},
        seed=seed, indices=[pair for r in folds for pair in r.indices])


def k_sweep(ds: LabeledDataset, ks: Sequence[int], cv_k: int = 5, seed: int = 0) -> ExperimentReport:
    """KNN accuracy per K over one shared fold partition."""
    ks = list(ks)
    if not ks:
        raise ValueError("k_sweep needs at least one k")
    if len(set(ks)) != len(ks):
        raise ValueError(f"duplicate k values in {ks}")
    curve, best = [], None
    for k in ks:
        rep = cv_report(ds, knn.KnnConfig(k=k), cv_k, seed)
        curve.append({"x": k, "mean": rep.metrics["cv_mean"], "std": rep.metrics["cv_std"]})
        if best is None or rep.metrics["cv_mean"] > best.metrics["cv_mean"]:
            best = rep
    best.kind = "k_sweep"
    best.curve = curve
    best.metrics["best_k"] = best.classifier["k"]
    return best


def size_sweep(ds: LabeledDataset, per_class_sizes: Sequence[int], config: ClassifierConfig,
               cv_k: int = 5, seed: int = 0) -> ExperimentReport:
    """Balanced subsample at each per-class size, then cross-validate."""
    sizes = list(per_class_sizes)
    if not sizes:
        raise ValueError("size_sweep needs at least one size")
    if len(set(sizes)) != len(sizes):
        raise ValueError(f"duplicate sizes in {sizes}")
    curve, last = [], None
    for size in sizes:
        sub = subsample_balanced(ds, size, seed)
        last = cv_report(sub, config, cv_k, seed)
        curve.append({"x": size, "total": len(sub), "mean": last.metrics["cv_mean"],
                      "std": last.metrics["cv_std"]})
    last.kind = "size_sweep"
    last.curve = curve
    return last


def mode_transfer(train_ds: LabeledDataset, test_same: LabeledDataset, test_other: LabeledDataset,
                  config: ClassifierConfig, seed: int = 0) -> tuple[ExperimentReport, ExperimentReport]:
    """Train once, evaluate on a same-mode and an other-mode test set."""
    model = fit_classifier(config, train_ds, seed)
    same = evaluate(model, test_same, kind="mode_transfer_same")
    other = evaluate(model, test_other, kind="mode_transfer_other")
    drop = same.per_class_recall - other.per_class_recall
    for rep in (same, other):
        rep.seed = seed
        rep.metrics["train"] = train_ds.describe()
        rep.metrics["accuracy_drop"] = same.accuracy - other.accuracy
        rep.metrics["recall_drop"] = dict(zip(train_ds.class_names, drop.tolist()))
    return same, other


def merged_training(ds_default: LabeledDataset, ds_other: LabeledDataset, config: ClassifierConfig,
                    seed: int = 0, cv_k: int = 5, test_fraction: float = 0.2
                    ) -> tuple[ExperimentReport, ExperimentReport, ExperimentReport]:
    """Equal-parts merge of two modes.

    Returns (CV on the full merge, held-out default-mode test, held-out
    other-mode test); the held-out model trains on the merge of the two
    training splits only.
    """
    merged = merge_equal_parts(ds_default, ds_other, seed)
    cv = cv_report(merged, config, cv_k, seed, kind="merged_cv")
    train_a, test_a = train_test_split(ds_default, test_fraction, seed)
    train_b, test_b = train_test_split(ds_other, test_fraction, seed)
    model = fit_classifier(config, merge_equal_parts(train_a, train_b, seed), seed)
    rep_a = evaluate(model, test_a, kind="merged_test_default")
    rep_b = evaluate(model, test_b, kind="merged_test_other")
    for rep in (rep_a, rep_b):
        rep.seed = seed
    cv.metrics["mode_balance"] = merged.describe()["modes"]
    return cv, rep_a, rep_b


def twelve_class_experiment(ds_default: LabeledDataset, ds_other: LabeledDataset, config: ClassifierConfig,
                            seed: int = 0, cv_k: int = 5) -> ExperimentReport:
    """Client x mode classes, cross-validated, plus the collapsed per-client accuracy."""
    twelve = relabel_twelve_class(ds_default, ds_other)
    rep = cv_report(twelve, config, cv_k, seed, kind="twelve_class")
    collapsed = rep.confusion.collapse()
    rec, _ = collapsed.recall()
    rep.metrics["collapsed_accuracy"] = collapsed.accuracy
    rep.metrics["collapsed_recall"] = dict(zip(collapsed.class_names, rec.tolist()))
    rep.metrics["collapsed_confusion"] = collapsed.counts.tolist()
    return rep


def plot_curve(report: ExperimentReport, path, xlabel: str = "x") -> None:
    """Write the report's curve (mean +/- std) as SVG with reproducible output."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not report.curve:
        raise ValueError("report has no curve")
    xs = [p["x"] for p in report.curve]
    means = np.array([p["mean"] for p in report.curve])
    stds = np.array([p["std"] for p in report.curve])
    with matplotlib.rc_context({"svg.hashsalt": "clientprint"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.errorbar(xs, means, yerr=stds, marker="o", capsize=3)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("cv accuracy")
        ax.set_title(report.kind)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
