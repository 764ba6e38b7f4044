import dataclasses
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clientprint import experiments as ex
from clientprint import knn, synth
from clientprint.dataset import LabeledDataset, concat, train_test_split


@dataclasses.dataclass
class FixedModel:
    """Stub classifier: predicts a constant, or memorized labels for exact training rows."""
    class_names: tuple
    constant: int = 0
    memory: dict = dataclasses.field(default_factory=dict)
    kind = "stub"

    def predict_batch(self, x):
        preds = np.array([self.memory.get(tuple(v), self.constant) for v in x], dtype=np.int64)
        return preds, np.eye(len(self.class_names))[preds]

    def describe(self):
        return {"kind": "stub"}


@pytest.fixture(scope="module")
def small():
    return synth.generate(synth.default_config(per_class=40, seed=1, separation=1.0))


def exact_accuracy(rep):
    c = rep.confusion.counts
    return Fraction(int(np.trace(c)), int(c.sum()))


def test_perfect_predictor(small):
    model = FixedModel(small.class_names, memory={tuple(v): int(y) for v, y in zip(small.vectors, small.labels)})
    rep = ex.evaluate(model, small)
    assert rep.accuracy == 1.0
    assert np.count_nonzero(rep.confusion.counts - np.diag(np.diag(rep.confusion.counts))) == 0


def test_constant_predictor(small):
    rep = ex.evaluate(FixedModel(small.class_names), small)
    assert exact_accuracy(rep) == Fraction(1, 6)
    assert rep.per_class_recall.tolist() == [1, 0, 0, 0, 0, 0]
    assert rep.confusion.counts.sum(axis=1).tolist() == small.class_counts().tolist()


def test_absent_class_flagged(small):
    sub = small.subset(np.flatnonzero(small.labels != 2))
    rep = ex.evaluate(FixedModel(small.class_names), sub)
    assert rep.to_dict()["absent_classes"] == ["lodestar"]
    assert rep.per_class_recall[2] == 0


def test_class_mismatch(small):
    with pytest.raises(ValueError):
        ex.evaluate(FixedModel(("a", "b")), small)


def test_cv_memorizer_scores_chance(small):
    # a memorizer that never saw the test rows falls back to class 0
    def fit(config, train, seed=0, val_fraction=0.1):
        return FixedModel(train.class_names, memory={tuple(v): int(y) for v, y in zip(train.vectors, train.labels)})
    orig = ex.fit_classifier
    ex.fit_classifier = fit
    try:
        mean, std, folds = ex.cross_validate(small, None, 5, 0)
    finally:
        ex.fit_classifier = orig
    assert all(exact_accuracy(r) == Fraction(1, 6) for r in folds)
    assert mean == pytest.approx(1 / 6) and std == pytest.approx(0, abs=1e-15)


def test_cv_duplicated_points_1nn(monkeypatch):
    # every point appears twice, once per fold, so each test row's twin is in training
    rng = np.random.default_rng(0)
    base = LabeledDataset(rng.random((30, 7)), np.repeat(np.arange(6), 5), ("default",) * 30)
    doubled = concat([base, base])
    first, second = np.arange(30), np.arange(30, 60)
    monkeypatch.setattr(ex, "stratified_kfold", lambda ds, k, seed: [(first, second), (second, first)])
    mean, std, folds = ex.cross_validate(doubled, knn.KnnConfig(1), 2, 0)
    assert mean == 1.0 and std == 0.0
    assert [r.confusion.total for r in folds] == [30, 30]


def test_cv_fold_discipline(small):
    rep = ex.cv_report(small, knn.KnnConfig(3), 4, 2)
    for train, test in rep.indices:
        assert not set(train.tolist()) & set(test.tolist())
    assert sorted(np.concatenate([te for _, te in rep.indices]).tolist()) == list(range(len(small)))
    assert exact_accuracy(rep) == Fraction(rep.confusion.correct, rep.confusion.total)


def test_scaler_refit_per_fold(small, monkeypatch):
    seen = []
    orig = knn.fit_scaler

    def spy(x):
        seen.append(len(x))
        return orig(x)
    monkeypatch.setattr(knn, "fit_scaler", spy)
    ex.cross_validate(small, knn.KnnConfig(3), 4, 0)
    assert seen == [len(small) * 3 // 4] * 4


def test_k_sweep_matches_individual_cv(small):
    rep = ex.k_sweep(small, [1, 5, 9], 3, 4)
    for point in rep.curve:
        mean, std, _ = ex.cross_validate(small, knn.KnnConfig(point["x"]), 3, 4)
        assert point["mean"] == mean and point["std"] == std
    assert len(ex.k_sweep(small, [9], 3, 4).curve) == 1
    with pytest.raises(ValueError):
        ex.k_sweep(small, [], 3, 4)


def test_size_sweep(small):
    rep = ex.size_sweep(small, [40], knn.KnnConfig(3), 4, 0)
    mean, _, _ = ex.cross_validate(small, knn.KnnConfig(3), 4, 0)
    assert rep.curve[0]["mean"] == mean
    with pytest.raises(ValueError):
        ex.size_sweep(small, [20, 20], knn.KnnConfig(3), 4, 0)
    with pytest.raises(Exception):
        ex.size_sweep(small, [41], knn.KnnConfig(3), 4, 0)


def test_mode_transfer_identical_tests(small):
    train, test = train_test_split(small, 0.25, 0)
    a, b = ex.mode_transfer(train, test, test, knn.KnnConfig(5), 0)
    assert a.to_dict() | {"kind": ""} == b.to_dict() | {"kind": ""}


def test_mode_transfer_zero_shift_gap():
    cfg = synth.default_config(per_class=600, seed=42, separation=1.0, shifts=False)
    default = synth.generate(cfg, "default")
    other = synth.generate(dataclasses.replace(cfg, seed=43), "proposer_flags")
    train, test = train_test_split(default, 0.2, 0)
    _, test_other = train_test_split(other, 0.2, 0)
    same, diff = ex.mode_transfer(train, test, test_other, knn.KnnConfig(9), 0)
    assert abs(same.accuracy - diff.accuracy) < 0.01


def test_mode_transfer_shifted_class_drops_most():
    profiles = [synth.ClientProfile(p.client, p.feature_means, p.feature_stds,
                                    {"all_subnets": (0.08, 0.08, -0.03)} if p.client == "nimbus" else {})
                for p in synth.DEFAULT_PROFILES]
    cfg = synth.GeneratorConfig(profiles, 1.5, 400, 42)
    train, test = train_test_split(synth.generate(cfg), 0.2, 0)
    _, other = train_test_split(synth.generate(dataclasses.replace(cfg, seed=43), "all_subnets"), 0.2, 0)
    same, diff = ex.mode_transfer(train, test, other, knn.KnnConfig(9), 0)
    drops = same.per_class_recall - diff.per_class_recall
    assert int(np.argmax(drops)) == 3


def test_merged_identical_inputs_equals_doubled_cv(small):
    cv, _, _ = ex.merged_training(small, small, knn.KnnConfig(3), 0, 4)
    doubled = concat([small, small])
    mean, _, _ = ex.cross_validate(doubled, knn.KnnConfig(3), 4, 0)
    assert cv.metrics["cv_mean"] == mean


def test_merged_beats_transfer_and_is_balanced():
    cfg = synth.default_config(per_class=400, seed=42, separation=1.5)
    default = synth.generate(cfg)
    other = synth.generate(dataclasses.replace(cfg, seed=43), "all_subnets")
    train, test = train_test_split(default, 0.2, 42)
    _, test_other = train_test_split(other, 0.2, 42)
    _, transfer = ex.mode_transfer(train, test, test_other, knn.KnnConfig(9), 42)
    cv, _, merged_other = ex.merged_training(default, other, knn.KnnConfig(9), 42)
    assert merged_other.accuracy >= transfer.accuracy
    assert cv.metrics["mode_balance"] == {"default": 2400, "all_subnets": 2400}


def test_twelve_class_structure(small):
    other = LabeledDataset(small.vectors + 0.001, small.labels, ("all_subnets",) * len(small))
    rep = ex.twelve_class_experiment(small, other, knn.KnnConfig(3), 0, 4)
    assert rep.confusion.counts.shape == (12, 12)
    assert rep.metrics["collapsed_accuracy"] >= rep.accuracy


@settings(max_examples=200)
@given(st.lists(st.integers(0, 11), min_size=1, max_size=200), st.data())
def test_collapse_never_lowers_accuracy(truth, data):
    preds = data.draw(st.lists(st.integers(0, 11), min_size=len(truth), max_size=len(truth)))
    names = tuple(f"{c}_{m}" for c in ("grandine", "lighthouse", "lodestar", "nimbus", "prysm", "teku")
                  for m in ("default", "all_subnets"))
    cm = ex.ConfusionMatrix.from_predictions(truth, preds, names)
    col = cm.collapse()
    assert col.total == cm.total
    assert col.counts.shape == (6, 6)
    assert col.correct >= cm.correct
    assert Fraction(col.correct, col.total) >= Fraction(cm.correct, cm.total)


def test_report_serialization(small, tmp_path):
    rep = ex.k_sweep(small, [1, 3], 3, 0)
    doc = json.loads(rep.to_json())
    assert doc["accuracy"] == doc["correct"] / doc["total"]
    assert [p["x"] for p in doc["curve"]] == [1, 3]
    table = rep.to_table()
    assert "k_sweep" in table and "lighthouse" in table
    svg = tmp_path / "curve.svg"
    ex.plot_curve(rep, svg, "k")
    first = svg.read_bytes()
    ex.plot_curve(rep, svg, "k")
    assert first.startswith(b"<?xml") and svg.read_bytes() == first
