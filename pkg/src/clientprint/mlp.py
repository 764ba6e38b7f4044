"""Multi-layer perceptron: ReLU hidden layers, softmax output, Adam training.

All arithmetic is float64. Weights are stored input-major, i.e. layer ``i``
maps a row vector ``h`` to ``h @ weights[i] + biases[i]``.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .dataset import LabeledDataset
from .features import Scaler, fit_scaler

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    pass


@dataclass(frozen=True)
class MlpConfig:
    hidden_sizes: tuple[int, ...] = (391, 870)
    activation: str = "relu"
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    l2: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ValueError(f"hidden_sizes must be non-empty with sizes >= 1, got {self.hidden_sizes}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if not self.learning_rate > 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("learning_rate, batch_size, max_epochs and patience must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")

    def describe(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return {"kind": "mlp", **d, "optimizer": "adam(0.9, 0.999, 1e-8)", "init": "he_uniform"}


@dataclass
class MlpModel:
    config: MlpConfig
    scaler: Scaler
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    class_names: tuple[str, ...]
    train_history: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    kind = "mlp"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or len(self.weights) != len(self.config.hidden_sizes) + 1:
            raise ValueError("layer count does not match hidden_sizes")
        dims = [self.weights[0].shape[0], *self.config.hidden_sizes, len(self.class_names)]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ValueError(f"layer {i} has shape {w.shape}/{b.shape}, expected {(dims[i], dims[i + 1])}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite parameters")
        if dims[0] != self.scaler.dim:
            raise ValueError("input layer width does not match scaler dimension")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def predict_batch(self, vectors) -> tuple[np.ndarray, np.ndarray]:
        return predict_batch(self, vectors)

    def describe(self) -> dict:
        return self.config.describe()


def init(config: MlpConfig, input_dim: int, n_classes: int, scaler: Optional[Scaler] = None,
         class_names: Optional[tuple[str, ...]] = None) -> MlpModel:
    """He-uniform weights (bound sqrt(6 / fan_in)) and zero biases."""
    if input_dim < 1 or n_classes < 2:
        raise ValueError(f"need input_dim >= 1 and n_classes >= 2, got {input_dim}, {n_classes}")
    rng = np.random.default_rng([config.seed, 11])
    dims = [input_dim, *config.hidden_sizes, n_classes]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    if scaler is None:
        scaler = Scaler(np.zeros(input_dim), np.ones(input_dim))
    if class_names is None:
        class_names = tuple(f"class_{i}" for i in range(n_classes))
    return MlpModel(config, scaler, weights, biases, tuple(class_names))


def _logits(weights, biases, x) -> tuple[np.ndarray, list[np.ndarray]]:
    activations = [x]
    h = x
    for w, b in zip(weights[:-1], biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
        activations.append(h)
    return h @ weights[-1] + biases[-1], activations


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _check_batch(model: MlpModel, batch) -> np.ndarray:
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if x.shape[1] != model.weights[0].shape[0]:
        raise ValueError(f"dimension mismatch: model expects {model.weights[0].shape[0]}, got {x.shape[1]}")
    return x


def forward(model: MlpModel, batch) -> np.ndarray:
    """Class probabilities for already-scaled rows."""
    logits, _ = _logits(model.weights, model.biases, _check_batch(model, batch))
    return softmax(logits)


def loss_grad(model: MlpModel, batch, labels) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy (+ l2/2 * sum of squared weights) and its gradients.

    Gradients come back in :meth:`MlpModel.params` order: W0, b0, W1, b1, ...
    """
    x = _check_batch(model, batch)
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (len(x),) or (len(y) and (y.min() < 0 or y.max() >= model.n_classes)):
        raise ValueError("labels must be valid class indices, one per row")
    return _loss_grad(model.weights, model.biases, x, y, model.config.l2)


def _loss_grad(weights, biases, x, y, l2):
    n = len(x)
    logits, acts = _logits(weights, biases, x)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - shifted[rows, y]))
    if l2:
        loss += 0.5 * l2 * sum(float(np.sum(w * w)) for w in weights)

    delta = np.exp(shifted - log_norm[:, None])
    delta[rows, y] -= 1.0
    delta /= n
    grads: list[np.ndarray] = [None] * (2 * len(weights))
    for i in range(len(weights) - 1, -1, -1):
        grads[2 * i] = acts[i].T @ delta + l2 * weights[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i:
            delta = (delta @ weights[i].T) * (acts[i] > 0)
    return loss, grads


def predict_batch(model: MlpModel, vectors) -> tuple[np.ndarray, np.ndarray]:
    """Scale raw feature rows, run the network, argmax (ties -> lower index)."""
    x = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    probs = forward(model, model.scaler.transform(x))
    return np.argmax(probs, axis=1), probs


def predict(model: MlpModel, v) -> tuple[int, np.ndarray]:
    preds, probs = predict_batch(model, np.asarray(v, dtype=np.float64)[None, :])
    return int(preds[0]), probs[0]


def _accuracy(weights, biases, x, y) -> float:
    if len(y) == 0:
        return float("nan")
    logits, _ = _logits(weights, biases, x)
    return float(np.mean(np.argmax(logits, axis=1) == y))


def train(train_ds: LabeledDataset, val_ds: Optional[LabeledDataset], config: MlpConfig = MlpConfig()) -> MlpModel:
    """Minibatch Adam with early stopping on validation accuracy.

    With an empty (or missing) validation set the run lasts ``max_epochs`` and
    the final parameters are kept; otherwise the best-validation parameters are
    restored once ``patience`` epochs pass without strict improvement.
    """
    if len(train_ds) == 0:
        raise ValueError("training set is empty")
    scaler = fit_scaler(train_ds.vectors)
    model = init(config, train_ds.vectors.shape[1], train_ds.n_classes, scaler, train_ds.class_names)
    x = scaler.transform(train_ds.vectors)
    y = train_ds.labels
    has_val = val_ds is not None and len(val_ds) > 0
    if has_val:
        if val_ds.class_names != train_ds.class_names:
            raise ValueError("validation classes differ from training classes")
        xv, yv = scaler.transform(val_ds.vectors), val_ds.labels

    beta1, beta2, eps = 0.9, 0.999, 1e-8
    params = model.params()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0
    rng = np.random.default_rng([config.seed, 12])
    n_layers = len(model.weights)

    best_acc, best_params, best_epoch, stale = -1.0, None, 0, 0
    history = []
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(x))
        total_loss, correct = 0.0, 0
        for start in range(0, len(x), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = _loss_grad(params[0::2], params[1::2], x[idx], y[idx], config.l2)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch} (batch starting {start})")
            total_loss += loss * len(idx)
            step += 1
            c1, c2 = 1 - beta1 ** step, 1 - beta2 ** step
            for p, g, mp, vp in zip(params, grads, m, v):
                mp *= beta1
                mp += (1 - beta1) * g
                vp *= beta2
                vp += (1 - beta2) * (g * g)
                p -= config.learning_rate * (mp / c1) / (np.sqrt(vp / c2) + eps)
        train_loss = total_loss / len(x)
        if not all(np.all(np.isfinite(p)) for p in params):
            raise NumericError(f"non-finite parameters after epoch {epoch}")
        record = {"epoch": epoch, "loss": train_loss,
                  "train_accuracy": _accuracy(params[0::2], params[1::2], x, y)}
        if has_val:
            val_acc = _accuracy(params[0::2], params[1::2], xv, yv)
            record["val_accuracy"] = val_acc
            if val_acc > best_acc:
                best_acc, best_epoch, stale = val_acc, epoch, 0
                best_params = [p.copy() for p in params]
            else:
                stale += 1
        history.append(record)
        log.debug("epoch %d loss %.6f %s", epoch, train_loss, record.get("val_accuracy", ""))
        if has_val and stale >= config.patience:
            break

    if has_val:
        params = best_params
    model.weights = [params[2 * i] for i in range(n_layers)]
    model.biases = [params[2 * i + 1] for i in range(n_layers)]
    model.train_history = history
    model.meta = {"best_epoch": best_epoch if has_val else len(history),
                  "best_val_accuracy": best_acc if has_val else None,
                  "epochs_run": len(history)}
    return model
