"""Grid search over K and random search over MLP hidden-layer architectures.

Every trial in one search is scored on the same stratified fold partition.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import knn, mlp
from .dataset import LabeledDataset, stratified_kfold
from .experiments import ConfusionMatrix, fit_classifier


@dataclass(frozen=True)
class SearchSpace:
    n_layers_range: tuple[int, int] = (1, 10)
    layer_size_range: tuple[int, int] = (100, 2000)
    n_trials: int = 30
    cv_folds: int = 5
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.n_layers_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad n_layers_range {self.n_layers_range}")
        lo, hi = self.layer_size_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad layer_size_range {self.layer_size_range}")
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")

    def contains(self, hidden_sizes) -> bool:
        return (self.n_layers_range[0] <= len(hidden_sizes) <= self.n_layers_range[1]
                and all(self.layer_size_range[0] <= h <= self.layer_size_range[1] for h in hidden_sizes))


@dataclass(frozen=True)
class TrialResult:
    params: dict
    fold_accuracies: tuple[float, ...]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracies))

    def to_dict(self) -> dict:
        return {"params": self.params, "fold_accuracies": list(self.fold_accuracies),
                "mean_accuracy": self.mean_accuracy}


def _score(ds: LabeledDataset, config, folds, seed: int) -> tuple[float, ...]:
    accs = []
    for train_idx, test_idx in folds:
        model = fit_classifier(config, ds.subset(train_idx), seed)
        test = ds.subset(test_idx)
        preds, _ = model.predict_batch(test.vectors)
        accs.append(ConfusionMatrix.from_predictions(test.labels, preds, ds.class_names).accuracy)
    return tuple(accs)


def _rank(trials: list[TrialResult]) -> list[TrialResult]:
    # sorted() is stable: equal means keep evaluation order
    return sorted(trials, key=lambda t: -t.mean_accuracy)


def grid_search_knn(ds: LabeledDataset, ks, cv_folds: int = 5, seed: int = 0) -> list[TrialResult]:
    """One trial per K (tried in ascending order), best first."""
    ks = sorted(int(k) for k in ks)
    if not ks:
        raise ValueError("no k values given")
    folds = stratified_kfold(ds, cv_folds, seed)
    smallest_train = min(len(tr) for tr, _ in folds)
    for k in ks:
        if k < 1 or k > smallest_train:
            raise ValueError(f"invalid k={k}: must lie in [1, {smallest_train}] (smallest training fold)")
    trials = [TrialResult({"kind": "knn", "k": k}, _score(ds, knn.KnnConfig(k=k), folds, seed)) for k in ks]
    return _rank(trials)


def sample_architectures(space: SearchSpace) -> list[tuple[int, ...]]:
    """Draw ``n_trials`` architectures from a dedicated stream.

    The stream is sequential, so trial ``i`` is the same whatever ``n_trials`` is.
    """
    rng = np.random.default_rng([space.seed, 0x5EA2C4])
    out = []
    for _ in range(space.n_trials):
        n_layers = int(rng.integers(space.n_layers_range[0], space.n_layers_range[1] + 1))
        sizes = rng.integers(space.layer_size_range[0], space.layer_size_range[1] + 1, size=n_layers)
        out.append(tuple(int(s) for s in sizes))
    return out


def random_search_mlp(ds: LabeledDataset, space: SearchSpace, base: mlp.MlpConfig = mlp.MlpConfig()
                      ) -> list[TrialResult]:
    folds = stratified_kfold(ds, space.cv_folds, space.seed)
    trials = []
    for i, hidden in enumerate(sample_architectures(space)):
        config = replace(base, hidden_sizes=hidden)
        accs = _score(ds, config, folds, space.seed)
        trials.append(TrialResult({"kind": "mlp", "trial": i, "hidden_sizes": list(hidden)}, accs))
    return _rank(trials)
