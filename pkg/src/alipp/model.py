"""Per-pixel Bayesian classifier with Monte-Carlo dropout.

The network sees a ``window x window`` neighbourhood of appearance vectors
around each pixel (edge-replicated at image borders), passes it through one
tanh hidden layer with dropout, and emits class logits. Dropout uses inverted
scaling, so the deterministic forward pass is the dropout expectation.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from .terrain import ImageSample


class ModelError(ValueError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, message: str, last_finite_loss: float | None):
        super().__init__(message)
        self.last_finite_loss = last_finite_loss


WEIGHT_NAMES = ("w1", "b1", "w2", "b2")


@dataclass(frozen=True, eq=False)
class ModelState:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    dropout: float
    num_classes: int
    input_dim: int
    window: int = 3
    checkpoint: tuple | None = None

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.w1.shape != (self.feature_dim, self.hidden):
            raise ModelError(f"w1 shape {self.w1.shape} does not match feature_dim {self.feature_dim}")
        if self.w2.shape != (self.hidden, self.num_classes):
            raise ModelError("w2 shape does not match hidden/num_classes")
        if not all(np.isfinite(w).all() for w in self.weights):
            raise ModelError("non-finite weights")

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.input_dim * self.window * self.window

    @property
    def weights(self) -> tuple:
        return self.w1, self.b1, self.w2, self.b2

    def with_weights(self, weights) -> "ModelState":
        return replace(self, **{name: np.array(w, dtype=np.float64) for name, w in zip(WEIGHT_NAMES, weights)})


def init_model(input_dim: int, num_classes: int, hidden: int = 32, window: int = 3,
               dropout: float = 0.5, seed=None) -> ModelState:
    """Glorot-uniform weights, zero biases; the initial weights become the checkpoint."""
    if window < 1 or window % 2 == 0:
        raise ModelError("window must be a positive odd integer")
    rng = np.random.default_rng(seed)
    fan_in = input_dim * window * window
    lim1 = math.sqrt(6.0 / (fan_in + hidden))
    lim2 = math.sqrt(6.0 / (hidden + num_classes))
    weights = (rng.uniform(-lim1, lim1, (fan_in, hidden)), np.zeros(hidden),
               rng.uniform(-lim2, lim2, (hidden, num_classes)), np.zeros(num_classes))
    model = ModelState(*weights, dropout=dropout, num_classes=num_classes, input_dim=input_dim, window=window)
    return make_checkpoint(model)


def make_checkpoint(model: ModelState) -> ModelState:
    """Freeze the current weights as the model's checkpoint."""
    return replace(model, checkpoint=tuple(w.copy() for w in model.weights))


def reset_to_checkpoint(model: ModelState) -> ModelState:
    if model.checkpoint is None:
        raise ModelError("model has no checkpoint")
    return model.with_weights(tuple(w.copy() for w in model.checkpoint))


def weights_digest(weights) -> str:
    h = hashlib.sha256()
    for w in weights:
        h.update(np.ascontiguousarray(w, dtype="<f8").tobytes())
    return h.hexdigest()


def weight_decay_for(dropout: float, num_images: int) -> float:
    """``(1 - p) / 2N`` for ``N`` labelled images."""
    if num_images < 1:
        raise ModelError("need at least one image")
    return (1.0 - dropout) / (2.0 * num_images)


# -- features ----------------------------------------------------------------

def window_features(features: np.ndarray, window: int = 3) -> np.ndarray:
    """(h, w, D) image -> (h*w, D*window^2) rows of flattened neighbourhoods."""
    h, w, d = features.shape
    r = window // 2
    padded = np.pad(features, ((r, r), (r, r), (0, 0)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (window, window), axis=(0, 1))
    # win: (h, w, D, window, window)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(h * w, d * window * window)


# -- forward / loss ----------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def dropout_masks(model: ModelState, n_pixels: int, samples: int, rng_seed):
    """Yield ``samples`` independent keep-masks of shape (n_pixels, hidden), or None if p = 0."""
    rng = np.random.default_rng(rng_seed)
    for _ in range(samples):
        if model.dropout == 0.0:
            yield None
        else:
            yield rng.random((n_pixels, model.hidden)) >= model.dropout


def forward_probs(weights, x: np.ndarray, mask, dropout: float) -> np.ndarray:
    """Softmax output of one (optionally dropout-masked) pass; ``mask=None`` is the mean network."""
    w1, b1, w2, b2 = weights
    hidden = np.tanh(x @ w1 + b1)
    if mask is not None:
        hidden = hidden * mask / (1.0 - dropout)
    return softmax(hidden @ w2 + b2)


def loss_and_grad(weights, x: np.ndarray, y: np.ndarray, mask, dropout: float, weight_decay: float):
    """Mean cross-entropy of a masked pass plus ``weight_decay * ||W||^2`` over the two weight matrices.

    Returns ``(loss, grads)`` with grads in ``WEIGHT_NAMES`` order.
    """
    w1, b1, w2, b2 = weights
    n = x.shape[0]
    pre = x @ w1 + b1
    act = np.tanh(pre)
    scale = np.ones_like(act) if mask is None else mask / (1.0 - dropout)
    hidden = act * scale
    logits = hidden @ w2 + b2
    z = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1))
    nll = np.mean(logz - z[np.arange(n), y])
    loss = nll + weight_decay * (np.sum(w1 * w1) + np.sum(w2 * w2))

    d_logits = np.exp(z - logz[:, None])
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n
    g_w2 = hidden.T @ d_logits + 2.0 * weight_decay * w2
    g_b2 = d_logits.sum(axis=0)
    d_pre = (d_logits @ w2.T) * scale * (1.0 - act * act)
    g_w1 = x.T @ d_pre + 2.0 * weight_decay * w1
    g_b1 = d_pre.sum(axis=0)
    return float(loss), (g_w1, g_b1, g_w2, g_b2)


def mean_nll(weights, x, y, dropout) -> float:
    p = forward_probs(weights, x, None, dropout)
    return float(-np.mean(np.log(np.clip(p[np.arange(len(y)), y], 1e-300, None))))


# -- training ----------------------------------------------------------------

@dataclass
class TrainSet:
    images: list
    labels: list

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ModelError("images and labels differ in length")

    def __len__(self) -> int:
        return len(self.images)

    def extend(self, images, labels) -> None:
        images, labels = list(images), list(labels)
        if len(images) != len(labels):
            raise ModelError("images and labels differ in length")
        self.images.extend(images)
        self.labels.extend(labels)


def _stack(data: TrainSet, window: int):
    xs, ys, owner = [], [], []
    for i, (img, lab) in enumerate(zip(data.images, data.labels)):
        feats = img.features if isinstance(img, ImageSample) else np.asarray(img)
        xs.append(window_features(feats, window))
        ys.append(np.asarray(lab, dtype=np.int64).ravel())
        owner.append(np.full(ys[-1].shape[0], i))
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(owner)


def train(model: ModelState, data: TrainSet, epochs: int = 60, batch_size: int = 8,
          weight_decay: float = 0.0, rng_seed=None, learning_rate: float = 0.5,
          patience: int = 8, val_fraction: float = 0.1) -> ModelState:
    """Mini-batch gradient descent on dropout-masked cross-entropy.

    Batches are groups of ``batch_size`` images; every pixel of the group is a
    sample. A random ``val_fraction`` of all pixels is held out, and training
    stops once its loss has not improved for ``patience`` epochs. The weights
    with the best held-out loss are returned.
    """
    if len(data) == 0:
        raise ModelError("empty training set")
    if weight_decay < 0:
        raise ModelError("weight_decay must be >= 0")
    if batch_size < 1 or epochs < 0:
        raise ModelError("batch_size must be >= 1 and epochs >= 0")
    rng = np.random.default_rng(rng_seed)
    x, y, owner = _stack(data, model.window)
    if y.min() < 0 or y.max() >= model.num_classes:
        raise ModelError("labels outside the model's class range")
    is_val = rng.random(y.shape[0]) < val_fraction
    if is_val.all():
        is_val[:] = False
    x_val, y_val = x[is_val], y[is_val]
    train_idx = [np.flatnonzero((owner == i) & ~is_val) for i in range(len(data))]

    weights = [w.copy() for w in model.weights]
    best = [w.copy() for w in weights]
    best_val = mean_nll(weights, x_val, y_val, model.dropout) if len(y_val) else math.inf
    stale = 0
    last_finite = None
    for _ in range(epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(order), batch_size):
            idx = np.concatenate([train_idx[i] for i in order[start:start + batch_size]])
            if idx.size == 0:
                continue
            mask = None if model.dropout == 0.0 else rng.random((idx.size, model.hidden)) >= model.dropout
            loss, grads = loss_and_grad(weights, x[idx], y[idx], mask, model.dropout, weight_decay)
            if not math.isfinite(loss):
                raise TrainingError("training diverged", last_finite)
            last_finite = loss
            for w, g in zip(weights, grads):
                w -= learning_rate * g
        if len(y_val) == 0:
            best = [w.copy() for w in weights]
            continue
        val = mean_nll(weights, x_val, y_val, model.dropout)
        if not math.isfinite(val):
            raise TrainingError("validation loss diverged", last_finite)
        if val < best_val - 1e-9:
            best_val, best, stale = val, [w.copy() for w in weights], 0
        else:
            stale += 1
            if stale >= patience:
                break
    return model.with_weights(best)


# -- inference ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PredictiveOutput:
    probs: np.ndarray  # (h, w, C)
    mi: np.ndarray  # (h, w), normalised to [0, 1]
    mc_variance: np.ndarray  # (h, w, C)

    @property
    def acquisition_score(self) -> float:
        """Image-level score used for ranking: mean per-pixel mutual information."""
        return float(self.mi.mean())


def entropy(p: np.ndarray, axis: int = -1) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=axis)


def bald_from_samples(samples: np.ndarray) -> np.ndarray:
    """Normalised mutual information from (T, ..., C) softmax samples."""
    c = samples.shape[-1]
    mean = samples.mean(axis=0)
    mi = (entropy(mean) - entropy(samples).mean(axis=0)) / math.log(c)
    identical = (samples.max(axis=0) == samples.min(axis=0)).all(axis=-1)
    return np.where(identical, 0.0, np.clip(mi, 0.0, 1.0))


def predict_mc(model: ModelState, image_features: np.ndarray, T: int, rng_seed=None) -> PredictiveOutput:
    """Average of ``T`` dropout passes plus normalised BALD and per-class sample variance."""
    if T < 1:
        raise ModelError("T must be >= 1")
    feats = np.asarray(image_features, dtype=np.float64)
    if not np.isfinite(feats).all():
        raise ModelError("non-finite image features")
    h, w, _ = feats.shape
    x = window_features(feats, model.window)
    n = x.shape[0]
    c = model.num_classes
    if model.dropout == 0.0:
        p = forward_probs(model.weights, x, None, 0.0).reshape(h, w, c)
        return PredictiveOutput(p, np.zeros((h, w)), np.zeros((h, w, c)))

    total = np.zeros((n, c))
    total_sq = np.zeros((n, c))
    total_ent = np.zeros(n)
    lo = np.full((n, c), np.inf)
    hi = np.full((n, c), -np.inf)
    # the hidden pre-activation does not depend on the mask
    act = np.tanh(x @ model.w1 + model.b1)
    scale = 1.0 / (1.0 - model.dropout)
    for mask in dropout_masks(model, n, T, rng_seed):
        p = softmax((act * mask * scale) @ model.w2 + model.b2)
        total += p
        total_sq += p * p
        total_ent += entropy(p)
        np.minimum(lo, p, out=lo)
        np.maximum(hi, p, out=hi)
    mean = total / T
    var = np.clip(total_sq / T - mean * mean, 0.0, None)
    mi = (entropy(mean) - total_ent / T) / math.log(c)
    identical = (lo == hi).all(axis=1)
    mi = np.where(identical, 0.0, np.clip(mi, 0.0, 1.0))
    return PredictiveOutput(mean.reshape(h, w, c), mi.reshape(h, w), var.reshape(h, w, c))


# -- metrics -----------------------------------------------------------------

def accuracy(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = np.ravel(pred), np.ravel(truth)
    if pred.size == 0:
        raise ModelError("no pixels to score")
    return float(np.mean(pred == truth))


def mean_iou(pred: np.ndarray, truth: np.ndarray, num_classes: int) -> float:
    """Classes absent from both prediction and truth are skipped."""
    pred, truth = np.ravel(pred), np.ravel(truth)
    conf = np.bincount(truth * num_classes + pred, minlength=num_classes ** 2).reshape(num_classes, num_classes)
    tp = np.diag(conf).astype(np.float64)
    union = conf.sum(axis=0) + conf.sum(axis=1) - tp
    present = union > 0
    if not present.any():
        raise ModelError("no pixels to score")
    return float(np.mean(tp[present] / union[present]))


def expected_calibration_error(confidence: np.ndarray, correct: np.ndarray, num_bins: int = 10) -> float:
    confidence = np.ravel(confidence).astype(np.float64)
    correct = np.ravel(correct).astype(np.float64)
    if num_bins < 2:
        raise ModelError("num_bins must be >= 2")
    if confidence.size == 0:
        raise ModelError("no pixels to score")
    bins = np.minimum((confidence * num_bins).astype(np.int64), num_bins - 1)
    n_b = np.bincount(bins, minlength=num_bins)
    acc_b = np.bincount(bins, weights=correct, minlength=num_bins)
    conf_b = np.bincount(bins, weights=confidence, minlength=num_bins)
    used = n_b > 0
    gaps = np.abs(acc_b[used] - conf_b[used]) / n_b[used]
    return float(np.sum(n_b[used] / confidence.size * gaps))


def evaluate(model: ModelState, test_images, T: int = 20, num_ece_bins: int = 10, rng_seed=None) -> dict:
    """Pixel accuracy, mIoU and ECE of the MC-averaged prediction over all test pixels."""
    if len(test_images) == 0:
        raise ModelError("empty test set")
    seeds = np.random.SeedSequence(rng_seed).spawn(len(test_images))
    preds, truths, confs = [], [], []
    for img, ss in zip(test_images, seeds):
        out = predict_mc(model, img.features, T, ss)
        preds.append(out.probs.argmax(axis=-1).ravel())
        confs.append(out.probs.max(axis=-1).ravel())
        truths.append(img.gt_labels.ravel())
    pred, truth, conf = np.concatenate(preds), np.concatenate(truths), np.concatenate(confs)
    return {
        "accuracy": accuracy(pred, truth),
        "miou": mean_iou(pred, truth, model.num_classes),
        "ece": expected_calibration_error(conf, pred == truth, num_ece_bins),
    }


# -- serialisation -----------------------------------------------------------

MODEL_MAGIC = b"ALIPPMDL"
MODEL_VERSION = 1
_HEADER = struct.Struct("<8sIIIIIId")


def save_model(path, model: ModelState) -> None:
    """Binary checkpoint: header, then little-endian float64 weights (and checkpoint copy if present)."""
    has_ckpt = model.checkpoint is not None
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, model.input_dim, model.window, model.hidden,
                              model.num_classes, int(has_ckpt), model.dropout))
        for w in model.weights + (model.checkpoint if has_ckpt else ()):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


def load_model(path) -> ModelState:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise ModelError(f"{path}: truncated model file")
    magic, version, d, window, hidden, c, has_ckpt, p = _HEADER.unpack_from(blob)
    if magic != MODEL_MAGIC:
        raise ModelError(f"{path}: bad magic")
    if version != MODEL_VERSION:
        raise ModelError(f"{path}: unsupported version {version}")
    f = d * window * window
    shapes = [(f, hidden), (hidden,), (hidden, c), (c,)]
    count = sum(int(np.prod(s)) for s in shapes) * (2 if has_ckpt else 1)
    flat = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    if flat.size != count:
        raise ModelError(f"{path}: expected {count} weights, found {flat.size}")
    arrays, pos = [], 0
    for s in shapes * (2 if has_ckpt else 1):
        k = int(np.prod(s))
        arrays.append(flat[pos:pos + k].reshape(s).astype(np.float64))
        pos += k
    return ModelState(*arrays[:4], dropout=p, num_classes=c, input_dim=d, window=window,
                      checkpoint=tuple(arrays[4:]) if has_ckpt else None)
