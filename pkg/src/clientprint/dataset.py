"""Labeled dataset container and the sampling strategies used by the experiments.

Every sampling routine is seed-deterministic and never duplicates an index.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .features import MODES, N_FEATURES

CLIENTS = ("grandine", "lighthouse", "lodestar", "nimbus", "prysm", "teku")
SCHEMES = ("six_class", "twelve_class")


class DatasetError(ValueError):
    pass


def client_index(name: str) -> int:
    try:
        return CLIENTS.index(name)
    except ValueError:
        raise DatasetError(f"unknown client {name!r}; known: {', '.join(CLIENTS)}") from None


def twelve_class_name(client: str, mode: str) -> str:
    return f"{client}_{mode}"


def collapse_name(name: str) -> str:
    """Strip a mode suffix: ``lighthouse_all_subnets`` -> ``lighthouse``."""
    for mode in MODES:
        suffix = "_" + mode
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return name


@dataclass(frozen=True)
class LabeledDataset:
    vectors: np.ndarray          # (n, 7) float64
    labels: np.ndarray           # (n,) int64 class indices
    modes: tuple[str, ...]
    scheme: str = "six_class"
    class_names: tuple[str, ...] = CLIENTS

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.size == 0:
            vectors = vectors.reshape(0, N_FEATURES)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        modes = tuple(self.modes)
        names = tuple(self.class_names)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "class_names", names)

        if vectors.ndim != 2 or vectors.shape[1] != N_FEATURES:
            raise DatasetError(f"vectors must have shape (n, {N_FEATURES}), got {vectors.shape}")
        if not (len(vectors) == len(labels) == len(modes)):
            raise DatasetError(
                f"length mismatch: {len(vectors)} vectors, {len(labels)} labels, {len(modes)} modes")
        if self.scheme not in SCHEMES:
            raise DatasetError(f"unknown scheme {self.scheme!r}")
        if len(set(names)) != len(names):
            raise DatasetError("duplicate class names")
        if len(labels) and (labels.min() < 0 or labels.max() >= len(names)):
            raise DatasetError("label index out of range for class_names")
        bad = set(modes) - set(MODES)
        if bad:
            raise DatasetError(f"unknown mode tag(s): {sorted(bad)}")
        if self.scheme == "twelve_class":
            clients = {collapse_name(n) for n in names}
            suffixes = {n[len(collapse_name(n)) + 1:] for n in names}
            if len(suffixes) != 2 or len(names) != 2 * len(clients) or any(s not in MODES for s in suffixes):
                raise DatasetError("twelve_class scheme needs client x mode class names for exactly two modes")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            self.vectors[idx], self.labels[idx], tuple(self.modes[i] for i in idx),
            self.scheme, self.class_names)

    def describe(self) -> dict:
        modes = {m: self.modes.count(m) for m in MODES if m in self.modes}
        return {
            "size": len(self),
            "scheme": self.scheme,
            "class_names": list(self.class_names),
            "class_counts": self.class_counts().tolist(),
            "modes": modes,
        }


def concat(parts: Sequence[LabeledDataset]) -> LabeledDataset:
    first = parts[0]
    for p in parts[1:]:
        if p.scheme != first.scheme or p.class_names != first.class_names:
            raise DatasetError("cannot concatenate datasets with different schemes or class names")
    return LabeledDataset(
        np.concatenate([p.vectors for p in parts]),
        np.concatenate([p.labels for p in parts]),
        tuple(m for p in parts for m in p.modes),
        first.scheme, first.class_names)


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, *stream])


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5).astype(np.int64)


def train_test_split(ds: LabeledDataset, test_fraction: float, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified split; per class the test share is ``count * test_fraction`` rounded half up."""
    if not 0 < test_fraction < 1:
        raise DatasetError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    counts = ds.class_counts()
    for c, n in enumerate(counts):
        if 0 < n < 2:
            raise DatasetError(f"class {ds.class_names[c]!r} has {n} sample(s); need >= 2 to split")
    rng = _rng(seed, 1)
    test_idx, train_idx = [], []
    for c in range(ds.n_classes):
        members = np.flatnonzero(ds.labels == c)
        if len(members) == 0:
            continue
        n_test = int(_round_half_up(np.array(len(members) * test_fraction)))
        n_test = min(max(n_test, 1), len(members) - 1)
        perm = rng.permutation(members)
        test_idx.append(np.sort(perm[:n_test]))
        train_idx.append(np.sort(perm[n_test:]))
    train = np.sort(np.concatenate(train_idx))
    test = np.sort(np.concatenate(test_idx))
    return ds.subset(train), ds.subset(test)


def stratified_kfold(ds: LabeledDataset, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified k-fold partition as a list of ``(train_indices, test_indices)``.

    Each class is shuffled and dealt round-robin over the folds, starting where
    the previous class stopped, so per-fold class counts differ by at most one
    from the proportional share and fold sizes stay balanced.
    """
    counts = ds.class_counts()
    present = counts[counts > 0]
    if len(present) == 0:
        raise DatasetError("cannot fold an empty dataset")
    if not 2 <= k <= present.min():
        raise DatasetError(f"k must satisfy 2 <= k <= smallest class count ({present.min()}), got {k}")
    rng = _rng(seed, 2)
    fold_of = np.empty(len(ds), dtype=np.int64)
    offset = 0
    for c in range(ds.n_classes):
        members = np.flatnonzero(ds.labels == c)
        if len(members) == 0:
            continue
        perm = rng.permutation(members)
        fold_of[perm] = (offset + np.arange(len(perm))) % k
        offset = (offset + len(perm)) % k
    all_idx = np.arange(len(ds))
    return [(all_idx[fold_of != f], all_idx[fold_of == f]) for f in range(k)]


def subsample_balanced(ds: LabeledDataset, per_class: int, seed: int) -> LabeledDataset:
    counts = ds.class_counts()
    if per_class < 1:
        raise DatasetError(f"per_class must be >= 1, got {per_class}")
    short = {ds.class_names[c]: int(n) for c, n in enumerate(counts) if n < per_class}
    if short:
        raise DatasetError(f"insufficient samples for per_class={per_class}: {short}")
    rng = _rng(seed, 3)
    picked = [rng.choice(np.flatnonzero(ds.labels == c), per_class, replace=False)
              for c in range(ds.n_classes)]
    return ds.subset(np.sort(np.concatenate(picked)))


def merge_equal_parts(a: LabeledDataset, b: LabeledDataset, seed: int) -> LabeledDataset:
    """Per class, take ``min(count_a, count_b)`` samples from each input.

    Selected rows keep their original relative order, so merging a dataset
    with itself yields the two copies concatenated.
    """
    if a.scheme != b.scheme or a.class_names != b.class_names:
        raise DatasetError("merge_equal_parts needs identical scheme and class names")
    ca, cb = a.class_counts(), b.class_counts()
    rng = _rng(seed, 4)
    pick_a, pick_b = [], []
    for c in range(a.n_classes):
        m = int(min(ca[c], cb[c]))
        if m == 0:
            raise DatasetError(
                f"class {a.class_names[c]!r} is empty in one input ({ca[c]} vs {cb[c]}); cannot merge equal parts")
        pick_a.append(rng.choice(np.flatnonzero(a.labels == c), m, replace=False))
        pick_b.append(rng.choice(np.flatnonzero(b.labels == c), m, replace=False))
    return concat([a.subset(np.sort(np.concatenate(pick_a))), b.subset(np.sort(np.concatenate(pick_b)))])


def relabel_twelve_class(a: LabeledDataset, b: LabeledDataset) -> LabeledDataset:
    """Turn two single-mode six-class datasets into one client x mode dataset.

    Class ``2*i`` is client ``i`` under ``a``'s mode, ``2*i + 1`` under ``b``'s.
    """
    if len(a) == 0 or len(b) == 0:
        raise DatasetError("relabel_twelve_class needs two non-empty datasets")
    if a.scheme != "six_class" or b.scheme != "six_class":
        raise DatasetError("relabel_twelve_class needs six_class inputs")
    if a.class_names != b.class_names:
        raise DatasetError(f"client registry mismatch: {a.class_names} vs {b.class_names}")
    mode_a, mode_b = _single_mode(a), _single_mode(b)
    if mode_a == mode_b:
        raise DatasetError(f"both inputs carry mode {mode_a!r}; need two distinct modes")
    names = tuple(twelve_class_name(c, m) for c in a.class_names for m in (mode_a, mode_b))
    return LabeledDataset(
        np.concatenate([a.vectors, b.vectors]),
        np.concatenate([2 * a.labels, 2 * b.labels + 1]),
        a.modes + b.modes,
        "twelve_class", names)


def collapse_labels(labels: np.ndarray, class_names: Sequence[str]) -> tuple[np.ndarray, tuple[str, ...]]:
    """Map twelve-class indices onto client indices, preserving client order."""
    clients: list[str] = []
    for n in class_names:
        c = collapse_name(n)
        if c not in clients:
            clients.append(c)
    mapping = np.array([clients.index(collapse_name(n)) for n in class_names], dtype=np.int64)
    return mapping[np.asarray(labels, dtype=np.int64)], tuple(clients)


def _single_mode(ds: LabeledDataset) -> str:
    modes = set(ds.modes)
    if len(modes) != 1:
        raise DatasetError(f"expected a single-mode dataset, found modes {sorted(modes)}")
    return modes.pop()


def from_client_names(vectors, clients: Sequence[str], modes: Optional[Sequence[str]] = None) -> LabeledDataset:
    labels = [client_index(c) for c in clients]
    if modes is None:
        modes = ["default"] * len(labels)
    return LabeledDataset(np.asarray(vectors, dtype=np.float64), np.array(labels, dtype=np.int64), tuple(modes))
