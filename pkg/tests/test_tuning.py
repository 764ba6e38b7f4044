import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clientprint import experiments as ex
from clientprint import knn, mlp, synth, tuning
from clientprint.dataset import stratified_kfold


@pytest.fixture(scope="module")
def ds():
    return synth.generate(synth.default_config(per_class=60, seed=3, separation=0.6))


def test_single_k(ds):
    trials = tuning.grid_search_knn(ds, [9], 5, 0)
    assert len(trials) == 1 and trials[0].params["k"] == 9


def test_best_k_matches_independent_evaluation(ds):
    ks = range(1, 21)
    trials = tuning.grid_search_knn(ds, ks, 5, 7)
    folds = stratified_kfold(ds, 5, 7)
    independent = {}
    for k in ks:
        accs = []
        for tr, te in folds:
            m = knn.fit(ds.subset(tr), knn.KnnConfig(k))
            accs.append(np.mean(m.predict_batch(ds.vectors[te])[0] == ds.labels[te]))
        independent[k] = np.mean(accs)
    best = max(independent.values())
    assert trials[0].params["k"] == min(k for k, v in independent.items() if v == best)
    for t in trials:
        assert t.mean_accuracy == pytest.approx(independent[t.params["k"]], abs=1e-12)
    assert sorted(t.params["k"] for t in trials) == list(ks)


def test_tie_keeps_smaller_k():
    # two well separated classes: every k scores 1.0
    ds = synth.generate(synth.GeneratorConfig(synth.DEFAULT_PROFILES[:2], 2.0, 30, 0))
    trials = tuning.grid_search_knn(ds, [7, 3, 5], 3, 0)
    assert [t.mean_accuracy for t in trials] == [1.0] * 3
    assert [t.params["k"] for t in trials] == [3, 5, 7]


def test_invalid_k_named(ds):
    with pytest.raises(ValueError, match="k=10000"):
        tuning.grid_search_knn(ds, [3, 10_000], 5, 0)


def test_mean_recomputable(ds):
    for t in tuning.grid_search_knn(ds, [1, 5], 4, 0):
        assert t.mean_accuracy == sum(t.fold_accuracies) / len(t.fold_accuracies)
        assert len(t.fold_accuracies) == 4


def test_architecture_sampling_deterministic_and_in_range():
    space = tuning.SearchSpace(n_trials=200, seed=5)
    archs = tuning.sample_architectures(space)
    assert archs == tuning.sample_architectures(space)
    assert all(1 <= len(a) <= 10 for a in archs)
    assert all(100 <= h <= 2000 for a in archs for h in a)
    assert {len(a) for a in archs} == set(range(1, 11))


@given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 100))
def test_more_trials_never_perturb_earlier(n, m, seed):
    a = tuning.sample_architectures(tuning.SearchSpace(n_trials=n, seed=seed))
    b = tuning.sample_architectures(tuning.SearchSpace(n_trials=m, seed=seed))
    k = min(n, m)
    assert a[:k] == b[:k]


@settings(max_examples=30)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 50), st.integers(1, 50), st.integers(0, 1000))
def test_sampled_configs_stay_in_space(l1, l2, s1, s2, seed):
    space = tuning.SearchSpace((min(l1, l2), max(l1, l2)), (min(s1, s2), max(s1, s2)), 10, 2, seed)
    assert all(space.contains(a) for a in tuning.sample_architectures(space))


def test_random_search_small(ds):
    space = tuning.SearchSpace((1, 2), (4, 12), n_trials=3, cv_folds=3, seed=1)
    base = mlp.MlpConfig(max_epochs=5, seed=0)
    trials = tuning.random_search_mlp(ds, space, base)
    assert len(trials) == 3
    assert sorted(t.params["trial"] for t in trials) == [0, 1, 2]
    archs = tuning.sample_architectures(space)
    for t in trials:
        assert tuple(t.params["hidden_sizes"]) == archs[t.params["trial"]]
    means = [t.mean_accuracy for t in trials]
    assert means == sorted(means, reverse=True)


def test_random_search_single_trial(ds):
    space = tuning.SearchSpace((1, 1), (4, 6), n_trials=1, cv_folds=2, seed=0)
    trials = tuning.random_search_mlp(ds, space, mlp.MlpConfig(max_epochs=3))
    assert len(trials) == 1
    mean, _, _ = ex.cross_validate(ds, mlp.MlpConfig(hidden_sizes=trials[0].params["hidden_sizes"],
                                                     max_epochs=3), 2, 0)
    assert trials[0].mean_accuracy == pytest.approx(mean, abs=1e-12)
