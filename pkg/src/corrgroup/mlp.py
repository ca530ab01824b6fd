"""Small MLP over compatibility features, trained from scratch with SGD.

Architecture: affine + ReLU hidden layers, affine + 2-way softmax head;
class 1 is "inlier". Cross-entropy and focal loss are supported. Saving uses
a little-endian binary format (magic "CFMLP"); see docs/formats.md.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    DivergenceError,
    InvalidParameterError,
    ModelCorruptError,
    ModelShapeError,
    ModelVersionError,
    SingleClassError,
)

MODEL_MAGIC = b"CFMLP"
MODEL_FORMAT_VERSION = 1
DEFAULT_HIDDEN = (128, 128, 64, 32)
N_CLASSES = 2
INLIER_CLASS = 1
PROB_EPS = 1e-7  # probabilities are clamped to [eps, 1-eps] before any log

LOSSES = ("focal", "cross_entropy")


@dataclass
class MlpModel:
    """Layer weights (in, out) and biases (out,). `seed` records the init seed
    for provenance; it is not persisted in the model file."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int | None = None

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise InvalidParameterError("weights and biases must be non-empty and of equal length")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise InvalidParameterError(f"layer {i}: weight {w.shape} and bias {b.shape} do not line up")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise InvalidParameterError(
                    f"layer {i} input width {w.shape[0]} != previous output {self.weights[i - 1].shape[1]}")
        if not all(np.all(np.isfinite(w)) for w in self.weights + self.biases):
            raise InvalidParameterError("model parameters must be finite")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_input(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpModel":
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.seed)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.02
    loss: str = "focal"
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    epochs: int = 100
    batch_size: int = 256
    neg_pos_ratio: float | None = None  # None = keep the raw imbalance
    seed: int = 0
    momentum: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise InvalidParameterError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidParameterError("epochs and batch_size must be >= 1")
        if self.loss not in LOSSES:
            raise InvalidParameterError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if not 0.0 < self.focal_alpha < 1.0:
            raise InvalidParameterError("focal_alpha must be in (0, 1)")
        if self.focal_gamma < 0.0:
            raise InvalidParameterError("focal_gamma must be >= 0")
        if self.neg_pos_ratio is not None and self.neg_pos_ratio <= 0.0:
            raise InvalidParameterError("neg_pos_ratio must be positive (or None for raw)")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidParameterError("momentum must be in [0, 1)")


@dataclass(frozen=True)
class Prediction:
    prob_inlier: float
    label: bool


def init_model(n_input: int, seed: int, hidden: tuple[int, ...] = DEFAULT_HIDDEN) -> MlpModel:
    """Fan-in-scaled uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    if n_input < 1:
        raise InvalidParameterError(f"n_input must be >= 1, got {n_input}")
    rng = np.random.default_rng(seed)
    sizes = [n_input, *hidden, N_CLASSES]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights, biases, seed=seed)


def _as_batch(features: np.ndarray, n_input: int) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != n_input:
        raise DimensionMismatchError(f"feature width {x.shape[-1]} != model input width {n_input}")
    return x


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cached(model: MlpModel, x: np.ndarray) -> list[np.ndarray]:
    """Activations per layer; last entry is the softmax output."""
    acts = [x]
    a = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        a = np.maximum(a @ w + b, 0.0)
        acts.append(a)
    acts.append(_softmax(a @ model.weights[-1] + model.biases[-1]))
    return acts


def forward(model: MlpModel, features: np.ndarray) -> np.ndarray:
    """Class probabilities, shape (B, 2); accepts a single feature vector too."""
    x = _as_batch(features, model.n_input)
    return _forward_cached(model, x)[-1]


def predict_proba(model: MlpModel, features: np.ndarray) -> np.ndarray:
    """Inlier-class probability per row."""
    return forward(model, features)[:, INLIER_CLASS]


def predict(model: MlpModel, features: np.ndarray, threshold: float = 0.5):
    """(probabilities, boolean labels) with label = prob >= threshold."""
    probs = predict_proba(model, features)
    return probs, probs >= threshold


def predict_one(model: MlpModel, feature: np.ndarray, threshold: float = 0.5) -> Prediction:
    p = float(predict_proba(model, feature)[0])
    return Prediction(p, p >= threshold)


def loss_value(config: TrainConfig, prob_inlier, gt_label) -> np.ndarray:
    """Per-sample loss from the inlier probability and the true label.

    cross_entropy: -log p_t;  focal: -alpha_t (1 - p_t)^gamma log p_t,
    where p_t is the probability assigned to the true class and
    alpha_t = focal_alpha for positives, 1 - focal_alpha for negatives.
    """
    p = np.asarray(prob_inlier, dtype=np.float64)
    y = np.asarray(gt_label, dtype=bool)
    p_t = np.clip(np.where(y, p, 1.0 - p), PROB_EPS, 1.0 - PROB_EPS)
    if config.loss == "cross_entropy":
        return -np.log(p_t)
    alpha_t = np.where(y, config.focal_alpha, 1.0 - config.focal_alpha)
    return -alpha_t * (1.0 - p_t) ** config.focal_gamma * np.log(p_t)


def _loss_and_dlogits(config: TrainConfig, probs: np.ndarray, y: np.ndarray):
    """Per-sample losses and gradient of the summed loss w.r.t. the two logits."""
    true_col = y.astype(np.intp)
    p_t = np.clip(probs[np.arange(len(y)), true_col], PROB_EPS, 1.0 - PROB_EPS)
    one_minus = 1.0 - p_t
    log_pt = np.log(p_t)
    if config.loss == "cross_entropy":
        losses = -log_pt
        dlogits = probs.copy()
        dlogits[np.arange(len(y)), true_col] -= 1.0
        return losses, dlogits
    alpha_t = np.where(y, config.focal_alpha, 1.0 - config.focal_alpha)
    gamma = config.focal_gamma
    losses = -alpha_t * one_minus**gamma * log_pt
    # dL/dp_t, then through the 2-class softmax: dp_t/dz_t = p_t (1 - p_t)
    dl_dpt = alpha_t * (gamma * one_minus ** (gamma - 1.0) * log_pt - one_minus**gamma / p_t)
    g = dl_dpt * p_t * one_minus
    dlogits = np.zeros_like(probs)
    dlogits[np.arange(len(y)), true_col] = g
    dlogits[np.arange(len(y)), 1 - true_col] = -g
    return losses, dlogits


def loss_and_gradients(model: MlpModel, features: np.ndarray, labels: np.ndarray,
                       config: TrainConfig):
    """Mean loss over the batch and the matching parameter gradients."""
    x = _as_batch(features, model.n_input)
    y = np.asarray(labels, dtype=bool)
    if y.shape != (x.shape[0],):
        raise DimensionMismatchError("labels length must match feature rows")
    acts = _forward_cached(model, x)
    losses, delta = _loss_and_dlogits(config, acts[-1], y)
    delta = delta / x.shape[0]
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    for layer in range(len(model.weights) - 1, -1, -1):
        grads_w[layer] = acts[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if layer:
            delta = (delta @ model.weights[layer].T) * (acts[layer] > 0.0)
    return float(losses.mean()), grads_w, grads_b


def train(model: MlpModel, features: np.ndarray, labels: np.ndarray,
          config: TrainConfig):
    """Minibatch SGD; returns (trained model, per-epoch mean loss history).

    Shuffling and the optional per-epoch negative subsampling are driven by
    config.seed, so runs are bit-reproducible. The input model is not mutated.
    """
    x = _as_batch(features, model.n_input)
    y = np.asarray(labels, dtype=bool)
    if y.shape != (x.shape[0],):
        raise DimensionMismatchError("labels length must match feature rows")
    if x.shape[0] < config.batch_size:
        raise InvalidParameterError(
            f"need at least batch_size={config.batch_size} samples, got {x.shape[0]}")
    pos_idx = np.flatnonzero(y)
    neg_idx = np.flatnonzero(~y)
    if len(pos_idx) == 0 or len(neg_idx) == 0:
        raise SingleClassError("training data must contain both classes")

    out = model.copy()
    rng = np.random.default_rng(config.seed)
    vel_w = [np.zeros_like(w) for w in out.weights]
    vel_b = [np.zeros_like(b) for b in out.biases]
    history = []
    for _ in range(config.epochs):
        if config.neg_pos_ratio is None:
            pool = np.arange(x.shape[0])
        else:
            n_neg = min(len(neg_idx), max(1, round(config.neg_pos_ratio * len(pos_idx))))
            picked = rng.choice(neg_idx, size=n_neg, replace=False)
            pool = np.concatenate([pos_idx, picked])
        order = pool[rng.permutation(len(pool))]
        loss_sum = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo:lo + config.batch_size]
            xb, yb = x[batch], y[batch]
            acts = _forward_cached(out, xb)
            losses, delta = _loss_and_dlogits(config, acts[-1], yb)
            loss_sum += float(losses.sum())
            delta = delta / len(batch)
            for layer in range(len(out.weights) - 1, -1, -1):
                gw = acts[layer].T @ delta
                gb = delta.sum(axis=0)
                if layer:
                    delta = (delta @ out.weights[layer].T) * (acts[layer] > 0.0)
                if config.momentum > 0.0:
                    vel_w[layer] = config.momentum * vel_w[layer] - config.learning_rate * gw
                    vel_b[layer] = config.momentum * vel_b[layer] - config.learning_rate * gb
                    out.weights[layer] += vel_w[layer]
                    out.biases[layer] += vel_b[layer]
                else:
                    out.weights[layer] -= config.learning_rate * gw
                    out.biases[layer] -= config.learning_rate * gb
        epoch_loss = loss_sum / len(order)
        if not np.isfinite(epoch_loss):
            raise DivergenceError(f"training loss became non-finite at epoch {len(history) + 1}")
        history.append(epoch_loss)
    return out, history


def epochs_to_converge(history: list[float], rel_tol: float = 1e-4, window: int = 5):
    """First epoch count after which relative improvement over `window` epochs
    drops below rel_tol; None if the plateau is never reached."""
    for i in range(window, len(history)):
        base = history[i - window]
        if (base - history[i]) / max(abs(base), 1e-300) < rel_tol:
            return i + 1
    return None


def model_to_bytes(model: MlpModel) -> bytes:
    """Serialize to the CFMLP binary format (see docs/formats.md)."""
    chunks = [MODEL_MAGIC, struct.pack("<II", MODEL_FORMAT_VERSION, len(model.weights))]
    for w, b in zip(model.weights, model.biases):
        chunks.append(struct.pack("<II", w.shape[0], w.shape[1]))
        chunks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(chunks)


def save_model(model: MlpModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def model_from_bytes(blob: bytes) -> MlpModel:
    view = memoryview(blob)
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(view):
            raise ModelCorruptError(f"model data truncated while reading {what} "
                                    f"(need {n} bytes at offset {pos}, have {len(view) - pos})")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(len(MODEL_MAGIC), "magic")) != MODEL_MAGIC:
        raise ModelCorruptError("bad magic string; not a CFMLP model file")
    version, n_layers = struct.unpack("<II", take(8, "header"))
    if version != MODEL_FORMAT_VERSION:
        raise ModelVersionError(f"unsupported model format version {version}, expected {MODEL_FORMAT_VERSION}")
    if n_layers == 0 or n_layers > 1024:
        raise ModelShapeError(f"implausible layer count {n_layers}")
    weights, biases = [], []
    for i in range(n_layers):
        rows, cols = struct.unpack("<II", take(8, f"layer {i} dims"))
        if rows == 0 or cols == 0:
            raise ModelShapeError(f"layer {i} has zero dimension ({rows}x{cols})")
        if weights and weights[-1].shape[1] != rows:
            raise ModelShapeError(
                f"layer {i} input width {rows} does not chain with previous output {weights[-1].shape[1]}")
        w = np.frombuffer(take(rows * cols * 8, f"layer {i} weights"), dtype="<f8").reshape(rows, cols)
        b = np.frombuffer(take(cols * 8, f"layer {i} biases"), dtype="<f8")
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    if pos != len(view):
        raise ModelCorruptError(f"{len(view) - pos} unexpected trailing bytes")
    if weights[-1].shape[1] != N_CLASSES:
        raise ModelShapeError(f"final layer must have {N_CLASSES} outputs, got {weights[-1].shape[1]}")
    return MlpModel(weights, biases)


def load_model(path) -> MlpModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
