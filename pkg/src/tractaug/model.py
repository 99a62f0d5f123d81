"""Voxelwise segmenter: one tanh hidden layer and a sigmoid head.

The parameter split mirrors the transfer protocol: the hidden layer
(w1, b1) is the shared feature extractor, the output layer (w2, b2) is
the task-specific head that gets swapped and retrained per tract set.
Loss is mean binary cross entropy over (voxel, tract) cells; the
optimizer is Adamax with bias correction; training is bit reproducible
given the config seed.

Checkpoints are JSON with base64-encoded little-endian float64 arrays,
feature and head sections separately addressable.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .features import FEATURE_NAMES, extract_features
from .rng import make_rng
from .volume import BinaryMask3D, TractLabelMap, Volume3D

CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    pass


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SegmenterModel:
    w1: np.ndarray  # (F, H)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H, T)
    b2: np.ndarray  # (T,)
    tract_names: tuple[str, ...]
    feature_names: tuple[str, ...] = FEATURE_NAMES

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        f, h = self.w1.shape
        if h < 1:
            raise ValueError("hidden size must be >= 1")
        if self.b1.shape != (h,):
            raise ValueError("b1 shape mismatch")
        if self.w2.shape[0] != h:
            raise ValueError("w2 must have one row per hidden unit")
        t = self.w2.shape[1]
        if self.b2.shape != (t,):
            raise ValueError("b2 shape mismatch")
        if len(self.tract_names) != t:
            raise ValueError("one tract name per head output required")
        if f != len(self.feature_names):
            raise ValueError("one feature name per input required")
        for name in ("w1", "b1", "w2", "b2"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"non-finite values in {name}")

    @property
    def hidden_size(self) -> int:
        return self.w1.shape[1]

    def feature_bytes(self) -> bytes:
        """Canonical bytes of the feature-extractor parameters."""
        return (
            self.w1.astype("<f8").tobytes()
            + self.b1.astype("<f8").tobytes()
        )


def init_model(
    hidden: int,
    tract_names,
    rng: np.random.Generator,
    feature_names=FEATURE_NAMES,
) -> SegmenterModel:
    """Zero-mean uniform init, bound sqrt(6 / (fan_in + fan_out))."""
    tract_names = tuple(tract_names)
    f = len(feature_names)
    t = len(tract_names)
    s1 = math.sqrt(6.0 / (f + hidden))
    w1 = rng.uniform(-s1, s1, size=(f, hidden))
    s2 = math.sqrt(6.0 / (hidden + t))
    w2 = rng.uniform(-s2, s2, size=(hidden, t))
    return SegmenterModel(
        w1=w1,
        b1=np.zeros(hidden),
        w2=w2,
        b2=np.zeros(t),
        tract_names=tract_names,
        feature_names=tuple(feature_names),
    )


def reinit_head(
    model: SegmenterModel, tract_names, rng: np.random.Generator
) -> SegmenterModel:
    """Fresh random head for a new tract set; features untouched."""
    tract_names = tuple(tract_names)
    h = model.hidden_size
    t = len(tract_names)
    s2 = math.sqrt(6.0 / (h + t))
    return replace(
        model,
        w2=rng.uniform(-s2, s2, size=(h, t)),
        b2=np.zeros(t),
        tract_names=tract_names,
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_parts(model, features):
    z1 = features @ model.w1 + model.b1
    h = np.tanh(z1)
    z2 = h @ model.w2 + model.b2
    return h, z2


def forward(model: SegmenterModel, features: np.ndarray) -> np.ndarray:
    """(V, T) per-voxel per-tract probabilities."""
    if features.ndim != 2 or features.shape[1] != model.w1.shape[0]:
        raise ValueError(
            f"features must be (V, {model.w1.shape[0]}), got {features.shape}"
        )
    _, z2 = _forward_parts(model, features)
    return _sigmoid(z2)


def bce_loss(model, features, targets) -> float:
    _, z2 = _forward_parts(model, features)
    # mean over cells of softplus(z) - y*z, the stable BCE-from-logits form
    return float(np.mean(np.logaddexp(0.0, z2) - targets * z2))


def _loss_and_grads_arrays(w1, b1, w2, b2, features, targets, trainable):
    h = np.tanh(features @ w1 + b1)
    z2 = h @ w2 + b2
    loss = float(np.mean(np.logaddexp(0.0, z2) - targets * z2))
    p = _sigmoid(z2)
    dz2 = (p - targets) / targets.size
    grads = {
        "w2": h.T @ dz2,
        "b2": dz2.sum(axis=0),
    }
    if trainable == "all":
        dh = dz2 @ w2.T
        dz1 = dh * (1.0 - h * h)
        grads["w1"] = features.T @ dz1
        grads["b1"] = dz1.sum(axis=0)
    return loss, grads


def bce_loss_and_grads(model, features, targets, trainable: str = "all"):
    """Loss plus analytic gradients for the selected parameter set."""
    if trainable not in ("all", "head_only"):
        raise ValueError(f"trainable must be all|head_only, got {trainable!r}")
    return _loss_and_grads_arrays(
        model.w1, model.b1, model.w2, model.b2, features, targets, trainable
    )


class Adamax:
    """Adamax with bias-corrected first moment.

    step: m <- b1*m + (1-b1)*g; u <- max(b2*u, |g|);
    p <- p - lr/(1-b1^t) * m/(u+eps). The infinity-norm denominator
    bounds each update by roughly lr (factor (1-b1)/(1-b1/b2), about
    1.0091 for the defaults).
    """

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.u = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads):
        self.t += 1
        correction = 1.0 - self.beta1**self.t
        for name, g in grads.items():
            m = self.m[name]
            u = self.u[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            np.maximum(self.beta2 * u, np.abs(g), out=u)
            self.params[name] -= (self.lr / correction) * m / (u + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    lr: float = 0.001
    batch_size: int = 4096
    steps_per_volume: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    trainable: str = "all"  # "all" | "head_only"
    transforms: bool = False
    fg_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1 or self.steps_per_volume < 1:
            raise ValueError("batch_size and steps_per_volume must be >= 1")
        if self.trainable not in ("all", "head_only"):
            raise ValueError("trainable must be 'all' or 'head_only'")
        if not 0.0 <= self.fg_fraction <= 1.0:
            raise ValueError("fg_fraction must lie in [0,1]")


@dataclass(frozen=True)
class TrainingExample:
    features: np.ndarray  # (V, F) float64
    targets: np.ndarray  # (V, T) float64 in {0,1}
    fg_indices: np.ndarray  # voxels where any tract is present

    @classmethod
    def from_volume(cls, x: Volume3D, y: TractLabelMap) -> "TrainingExample":
        if x.geometry != y.geometry:
            raise ValueError("image and labels must share geometry")
        features = extract_features(x)
        stacked = y.stacked()  # (T, X, Y, Z)
        targets = stacked.reshape(len(y), -1).T.astype(np.float64)
        fg = np.flatnonzero(targets.any(axis=1))
        return cls(features=features, targets=targets, fg_indices=fg)


@dataclass(frozen=True)
class TrainResult:
    model: SegmenterModel
    loss_curve: tuple[float, ...]
    val_curve: tuple[float, ...]
    best_epoch: int | None


# intensity-like feature columns by role, used by the online transforms
_SCALED_COLS = (0, 1, 2, 3)  # intensity, mean, std, gradient magnitude
_SHIFTED_COLS = (0, 1)  # intensity, mean
_COORD_COLS = (4, 5, 6)

_SCALE_RANGE = (0.9, 1.1)
_SHIFT_RANGE = (-0.1, 0.1)


def _draw_transform(rng):
    flips = tuple(bool(rng.random() < 0.5) for _ in range(3))
    scale = float(rng.uniform(*_SCALE_RANGE))
    shift = float(rng.uniform(*_SHIFT_RANGE))
    return flips, scale, shift


def _transform_batch(feat, flips, scale, shift):
    out = feat.copy()
    out[:, _SCALED_COLS] *= scale
    out[:, _SHIFTED_COLS] += shift
    for ax, col in enumerate(_COORD_COLS):
        if flips[ax]:
            out[:, col] = 1.0 - out[:, col]
    return out


def apply_flips(
    x: Volume3D, y: TractLabelMap, flips
) -> tuple[Volume3D, TractLabelMap]:
    """Mirror image and labels along the chosen axes."""
    axes = tuple(ax for ax in range(3) if flips[ax])
    if not axes:
        return x, y
    img = np.flip(x.data, axis=axes)
    channels = tuple(
        (name, BinaryMask3D(y.geometry, np.flip(m.data, axis=axes).copy()))
        for name, m in y.channels
    )
    return (
        Volume3D(x.geometry, img.copy()),
        TractLabelMap(y.geometry, channels),
    )


def online_transform(
    x: Volume3D, y: TractLabelMap, rng: np.random.Generator,
    noise_sigma: float = 0.0,
) -> tuple[Volume3D, TractLabelMap]:
    """Random flips plus intensity scale/shift (and optional noise).

    Flips apply to image and labels together; intensity changes touch
    the image only. Draw order: flip bits, scale, shift, noise field.
    """
    flips, scale, shift = _draw_transform(rng)
    x2, y2 = apply_flips(x, y, flips)
    img = x2.data * scale + shift
    if noise_sigma > 0:
        img = img + noise_sigma * rng.standard_normal(img.shape)
    return Volume3D(x2.geometry, img.astype(np.float32)), y2


def _batch_indices(example, rng, batch_size, fg_fraction):
    v = example.features.shape[0]
    n_fg = int(round(batch_size * fg_fraction))
    fg = example.fg_indices
    if fg.size == 0:
        n_fg = 0
    idx = np.empty(batch_size, dtype=np.int64)
    if n_fg > 0:
        idx[:n_fg] = fg[rng.integers(0, fg.size, size=n_fg)]
    if batch_size - n_fg > 0:
        idx[n_fg:] = rng.integers(0, v, size=batch_size - n_fg)
    return idx


def _mean_dice_arrays(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean Dice over tract columns of two (V, T) binary arrays."""
    scores = []
    for t in range(truth.shape[1]):
        a = pred[:, t]
        b = truth[:, t]
        na = int(a.sum())
        nb = int(b.sum())
        if na == 0 and nb == 0:
            scores.append(1.0)
        else:
            inter = float((a * b).sum())
            scores.append(2.0 * inter / (na + nb))
    return float(np.mean(scores))


def evaluate_dice(model, example: TrainingExample) -> float:
    probs = forward(model, example.features)
    return _mean_dice_arrays(probs >= 0.5, example.targets)


def train(
    model: SegmenterModel,
    examples,
    config: TrainConfig,
    validation: TrainingExample | None = None,
) -> TrainResult:
    """Adamax training with optional best-epoch selection.

    Per epoch: visit examples in a seeded random order, taking
    steps_per_volume batches from each; batches are fg_fraction
    foreground-boosted voxel draws (the loss itself stays plain BCE).
    When a validation example is given, the returned model is the epoch
    snapshot with the best validation Dice (earliest on ties);
    otherwise it is the final state. With trainable="head_only" the
    optimizer never sees w1/b1, so they stay bit-identical.
    """
    examples = list(examples)
    if not examples:
        raise ValueError("need at least one training example")
    for e in examples:
        if e.features.shape[1] != model.w1.shape[0]:
            raise ValueError("example feature width does not match model")
        if e.targets.shape[1] != len(model.tract_names):
            raise ValueError("example target width does not match model")

    params = {"w2": model.w2.copy(), "b2": model.b2.copy()}
    if config.trainable == "all":
        params["w1"] = model.w1.copy()
        params["b1"] = model.b1.copy()

    def snapshot() -> SegmenterModel:
        return replace(
            model,
            w1=params.get("w1", model.w1),
            b1=params.get("b1", model.b1),
            w2=params["w2"],
            b2=params["b2"],
        )

    opt = Adamax(
        params,
        lr=config.lr,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
    )
    rng = make_rng(config.seed, "train")
    loss_curve: list[float] = []
    val_curve: list[float] = []
    best: tuple[float, int, SegmenterModel] | None = None
    w1 = params.get("w1", model.w1)
    b1 = params.get("b1", model.b1)

    for epoch in range(config.epochs):
        order = rng.permutation(len(examples))
        epoch_losses = []
        for ei in order:
            example = examples[int(ei)]
            transform = (
                _draw_transform(rng) if config.transforms else None
            )
            for _ in range(config.steps_per_volume):
                idx = _batch_indices(
                    example, rng, config.batch_size, config.fg_fraction
                )
                feat = example.features[idx]
                if transform is not None:
                    feat = _transform_batch(feat, *transform)
                loss, grads = _loss_and_grads_arrays(
                    w1, b1, params["w2"], params["b2"],
                    feat, example.targets[idx], config.trainable,
                )
                if not math.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss {loss} at epoch {epoch}"
                    )
                opt.step(grads)
                if not all(
                    np.isfinite(v).all() for v in params.values()
                ):
                    raise TrainingDivergedError(
                        f"non-finite parameters at epoch {epoch}"
                    )
                epoch_losses.append(loss)
        loss_curve.append(float(np.mean(epoch_losses)))
        if validation is not None:
            score = evaluate_dice(snapshot(), validation)
            val_curve.append(score)
            if best is None or score > best[0]:
                best = (score, epoch, snapshot())

    if validation is not None and best is not None:
        final = best[2]
        best_epoch = best[1]
    else:
        final = snapshot()
        best_epoch = None
    return TrainResult(
        model=final,
        loss_curve=tuple(loss_curve),
        val_curve=tuple(val_curve),
        best_epoch=best_epoch,
    )


def predict(model: SegmenterModel, x: Volume3D) -> TractLabelMap:
    """Threshold per-voxel probabilities at 0.5 (0.5 itself maps to 1)."""
    probs = forward(model, extract_features(x))
    dims = x.geometry.dims
    channels = []
    for t, name in enumerate(model.tract_names):
        lab = (probs[:, t] >= 0.5).astype(np.uint8).reshape(dims)
        channels.append((name, BinaryMask3D(x.geometry, lab)))
    return TractLabelMap(x.geometry, tuple(channels))


def _encode_array(arr: np.ndarray) -> dict:
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii"),
    }


def _decode_array(obj, expect_ndim) -> np.ndarray:
    data = np.frombuffer(base64.b64decode(obj["data"]), dtype="<f8")
    arr = data.reshape(obj["shape"])
    if arr.ndim != expect_ndim:
        raise ValueError(f"bad checkpoint array rank {arr.ndim}")
    return arr


def save_model(model: SegmenterModel, path) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "hidden_size": model.hidden_size,
        "feature_names": list(model.feature_names),
        "tract_names": list(model.tract_names),
        "features": {
            "w1": _encode_array(model.w1),
            "b1": _encode_array(model.b1),
        },
        "head": {
            "w2": _encode_array(model.w2),
            "b2": _encode_array(model.b2),
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_model(path) -> SegmenterModel:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"unsupported checkpoint version {doc.get('format_version')!r}"
        )
    return SegmenterModel(
        w1=_decode_array(doc["features"]["w1"], 2),
        b1=_decode_array(doc["features"]["b1"], 1),
        w2=_decode_array(doc["head"]["w2"], 2),
        b2=_decode_array(doc["head"]["b2"], 1),
        tract_names=tuple(doc["tract_names"]),
        feature_names=tuple(doc["feature_names"]),
    )
