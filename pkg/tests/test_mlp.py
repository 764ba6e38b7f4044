import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from clientprint import mlp
from clientprint.dataset import LabeledDataset


def finite_difference(model, x, y, h=1e-5):
    """Central differences over every parameter, perturbing the model in place."""
    grads = []
    for p in model.params():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = mlp.loss_grad(model, x, y)[0]
            p[idx] = orig - h
            down = mlp.loss_grad(model, x, y)[0]
            p[idx] = orig
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def small_model(hidden, seed=0, n_classes=6, l2=0.0):
    return mlp.init(mlp.MlpConfig(hidden_sizes=hidden, seed=seed, l2=l2), 7, n_classes)


def test_init_shapes_default_architecture():
    m = mlp.init(mlp.MlpConfig(), 7, 6)
    assert [w.shape for w in m.weights] == [(7, 391), (391, 870), (870, 6)]
    assert all(np.all(b == 0) for b in m.biases)
    for w in m.weights:
        assert np.max(np.abs(w)) <= math.sqrt(6 / w.shape[0])


def test_init_deterministic():
    a, b = small_model((13, 11), seed=4), small_model((13, 11), seed=4)
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))


def test_init_errors():
    with pytest.raises(ValueError):
        mlp.MlpConfig(hidden_sizes=())
    with pytest.raises(ValueError):
        mlp.init(mlp.MlpConfig(hidden_sizes=(4,)), 7, 1)


def zeroed(model):
    for p in model.params():
        p[...] = 0
    return model


def test_zero_model_is_uniform_and_loss_ln6(rng):
    m = zeroed(small_model((5,)))
    x = rng.normal(size=(10, 7))
    assert np.allclose(mlp.forward(m, x), 1 / 6, atol=1e-15)
    loss, _ = mlp.loss_grad(m, x, rng.integers(0, 6, 10))
    assert abs(loss - math.log(6)) < 1e-9


def test_forward_rows_normalized(rng):
    m = small_model((20, 9))
    p = mlp.forward(m, rng.normal(scale=50, size=(100, 7)))
    assert np.all(np.abs(p.sum(axis=1) - 1) < 1e-12)
    assert np.all((p >= 0) & (p <= 1))


def test_softmax_shift_invariance(rng):
    z = rng.normal(size=(5, 6))
    assert np.allclose(mlp.softmax(z), mlp.softmax(z + 123.4), atol=1e-13, rtol=0)


def test_forward_dim_mismatch():
    with pytest.raises(ValueError):
        mlp.forward(small_model((3,)), np.zeros((2, 6)))


def test_gradient_check_reference_net(rng):
    m = small_model((13, 11), seed=1)
    x = rng.normal(size=(5, 7))
    y = rng.integers(0, 6, 5)
    _, analytic = mlp.loss_grad(m, x, y)
    assert max_rel_error(analytic, finite_difference(m, x, y)) < 1e-5


def test_gradient_check_with_l2(rng):
    m = small_model((6,), seed=2, l2=0.3)
    x = rng.normal(size=(4, 7))
    y = rng.integers(0, 6, 4)
    _, analytic = mlp.loss_grad(m, x, y)
    assert max_rel_error(analytic, finite_difference(m, x, y)) < 1e-5


@settings(max_examples=15, deadline=None)
@given(st.lists(st.integers(3, 20), min_size=1, max_size=3), st.integers(0, 10_000))
def test_gradient_check_random_nets(hidden, seed):
    rng = np.random.default_rng(seed)
    m = small_model(tuple(hidden), seed=seed)
    for b in m.biases:
        b[...] = rng.normal(scale=0.1, size=b.shape)
    x = rng.normal(size=(5, 7))
    y = rng.integers(0, 6, 5)
    # central differences are meaningless within h of a ReLU kink
    h = x
    for w, b in zip(m.weights[:-1], m.biases[:-1]):
        pre = h @ w + b
        assume(np.min(np.abs(pre)) > 1e-3)
        h = np.maximum(pre, 0)
    _, analytic = mlp.loss_grad(m, x, y)
    assert max_rel_error(analytic, finite_difference(m, x, y)) < 1e-5


def test_loss_grad_is_pure_and_duplicate_rows(rng):
    m = small_model((8,))
    before = [p.copy() for p in m.params()]
    x1 = rng.normal(size=(1, 7))
    _, g1 = mlp.loss_grad(m, x1, [3])
    _, g3 = mlp.loss_grad(m, np.repeat(x1, 3, axis=0), [3, 3, 3])
    assert all(np.array_equal(a, b) for a, b in zip(before, m.params()))
    assert all(np.allclose(a, b, rtol=1e-12, atol=1e-15) for a, b in zip(g1, g3))


# ---- training

def blobs(rng, per_class=100, gap=10.0):
    labels = np.repeat([0, 1], per_class)
    centres = np.zeros((2, 7))
    centres[1] = gap
    x = centres[labels] + rng.normal(size=(2 * per_class, 7))
    return LabeledDataset(x, labels, ("default",) * len(labels), "six_class")


def test_single_sample_learns_its_label():
    ds = LabeledDataset(np.full((1, 7), 0.5), [3], ("default",))
    m = mlp.train(ds, None, mlp.MlpConfig(hidden_sizes=(8,), max_epochs=50, seed=1))
    assert mlp.predict(m, np.full(7, 0.5))[0] == 3
    assert len(m.train_history) == 50


def test_separable_blobs_reach_full_accuracy():
    ds = blobs(np.random.default_rng(42))
    m = mlp.train(ds, None, mlp.MlpConfig(hidden_sizes=(16,), max_epochs=50, seed=42))
    preds, _ = m.predict_batch(ds.vectors)
    assert np.mean(preds == ds.labels) == 1.0
    losses = [h["loss"] for h in m.train_history]
    for prev, cur in zip(losses[4:], losses[5:]):
        assert cur <= prev * 1.05


def test_training_deterministic(rng):
    ds = blobs(rng, 40, gap=2.0)
    cfg = mlp.MlpConfig(hidden_sizes=(12, 7), max_epochs=15, seed=9)
    a, b = mlp.train(ds, None, cfg), mlp.train(ds, None, cfg)
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))


def test_early_stopping_restores_best(rng):
    train = blobs(rng, 60, gap=1.0)
    val = blobs(rng, 30, gap=1.0)
    m = mlp.train(train, val, mlp.MlpConfig(hidden_sizes=(32,), max_epochs=60, patience=5, seed=3,
                                            learning_rate=1e-2))
    best = max(h["val_accuracy"] for h in m.train_history)
    preds, _ = m.predict_batch(val.vectors)
    assert np.mean(preds == val.labels) == best
    assert m.meta["best_val_accuracy"] == best
    assert len(m.train_history) <= 60


def test_nan_loss_aborts_naming_epoch(rng):
    # the l2 penalty overflows to inf on the first batch
    cfg = mlp.MlpConfig(hidden_sizes=(4,), max_epochs=3, l2=1e308)
    with pytest.raises(mlp.NumericError, match="epoch 1"):
        mlp.train(blobs(rng, 20), None, cfg)


def test_uniform_model_predicts_class_zero(rng):
    m = zeroed(small_model((4,)))
    pred, probs = mlp.predict(m, rng.random(7))
    assert pred == 0
    assert abs(probs.sum() - 1) < 1e-12


def test_predict_agrees_with_forward(rng):
    m = small_model((10, 10), seed=5)
    m.scaler = mlp.Scaler(rng.random(7), rng.random(7) + 0.5)
    x = rng.random((1000, 7))
    preds, _ = m.predict_batch(x)
    expected = np.argmax(mlp.forward(m, m.scaler.transform(x)), axis=1)
    assert np.array_equal(preds, expected)
    singles = [mlp.predict(m, v)[0] for v in x[:50]]
    assert singles == expected[:50].tolist()
