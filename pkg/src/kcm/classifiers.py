"""Supervised bootstrap training and a uniform classifier handle for KAN/MLP."""

import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .data import Dataset, Split
from .kan import KanNetwork, MlpNetwork, NumericalError
from .serialize import ModelFormatError, load_network, save_network

__all__ = [
    "ModelKind",
    "ArchSpec",
    "ClassifierHandle",
    "softmax",
    "train_supervised",
    "clone_model",
    "save_handle",
    "load_handle",
]

log = logging.getLogger("kcm.classifiers")

META_FORMAT_VERSION = 1


class ModelKind(str, Enum):
    KAN = "kan"
    MLP = "mlp"


@dataclass(frozen=True)
class ArchSpec:
    """Network family and shape for a classifier.

    The input range covers two standard deviations of the standardized
    features; clipping at one loses too much of the class signal.
    """

    kind: ModelKind = ModelKind.KAN
    hidden: tuple = (16, 16)
    order: int = 3
    num_intervals: int = 5
    input_range: tuple = (-2.0, 2.0)

    def with_kind(self, kind: ModelKind, hidden=None) -> "ArchSpec":
        return replace(self, kind=kind, hidden=tuple(hidden) if hidden is not None else self.hidden)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for overflow safety."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ClassifierHandle:
    """A trained network plus the frozen feature normalization it expects."""

    kind: ModelKind
    network: object
    label_count: int
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    clip_range: tuple = (-1.0, 1.0)
    loss_curve: list = field(default_factory=list, repr=False)

    def normalize(self, X: np.ndarray) -> np.ndarray:
        Z = (np.asarray(X, dtype=np.float64) - self.feature_mean) / self.feature_scale
        return np.clip(Z, self.clip_range[0], self.clip_range[1])

    def predict_logits(self, X) -> np.ndarray:
        return self.network.forward(self.normalize(X))

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.predict_logits(X))

    def predict_label(self, X) -> np.ndarray:
        return np.argmax(self.predict_logits(X), axis=-1)

    def accuracy(self, X, y) -> float:
        if len(y) == 0:
            raise ValueError("accuracy needs at least one sample")
        return float(np.mean(self.predict_label(X) == np.asarray(y)))


def _build_network(arch: ArchSpec, in_dim: int, out_dim: int, rng) -> object:
    dims = [in_dim, *arch.hidden, out_dim]
    if arch.kind == ModelKind.KAN:
        return KanNetwork.create(
            dims,
            order=arch.order,
            num_intervals=arch.num_intervals,
            input_range=arch.input_range,
            rng=rng,
        )
    return MlpNetwork.create(dims, rng=rng)


def train_supervised(
    dataset: Dataset,
    arch: ArchSpec,
    seed: int,
    *,
    epochs: int = 100,
    learning_rate: float = 0.5,
    batch_size: int = 32,
    split: Split = Split.TRAIN,
) -> ClassifierHandle:
    """Cross-entropy SGD bootstrap; deterministic under a fixed seed.

    Features are standardized with statistics from the training split, then
    clipped into the model's input range; both are frozen into the handle.
    """
    X = dataset.features_of(split)
    y = dataset.labels_of(split)
    if len(X) == 0:
        raise ValueError(f"no samples in split {split.value!r}")
    label_count = dataset.num_classes
    if y.min() < 0 or y.max() >= label_count:
        raise ValueError(f"labels outside [0, {label_count}) in split {split.value!r}")

    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-8] = 1.0

    rng = np.random.default_rng(seed)
    network = _build_network(arch, X.shape[1], label_count, rng)
    handle = ClassifierHandle(
        kind=arch.kind,
        network=network,
        label_count=label_count,
        feature_mean=mean,
        feature_scale=scale,
        clip_range=arch.input_range,
    )

    Z = handle.normalize(X)
    onehot = np.eye(label_count)[y]
    for epoch in range(epochs):
        order = rng.permutation(len(Z))
        total = 0.0
        for start in range(0, len(Z), batch_size):
            idx = order[start : start + batch_size]
            logits, cache = network.forward_with_cache(Z[idx])
            probs = softmax(logits)
            eps = 1e-12
            total += -float(np.sum(np.log(probs[np.arange(len(idx)), y[idx]] + eps)))
            upstream = (probs - onehot[idx]) / len(idx)
            network.apply_gradients(network.backward(cache, upstream), learning_rate)
        mean_loss = total / len(Z)
        if not np.isfinite(mean_loss):
            raise NumericalError(f"training loss diverged at epoch {epoch}")
        handle.loss_curve.append(mean_loss)
    network.validate_finite()
    return handle


def clone_model(handle: ClassifierHandle) -> ClassifierHandle:
    """Deep, independent copy: training the clone never touches the original."""
    return ClassifierHandle(
        kind=handle.kind,
        network=handle.network.copy(),
        label_count=handle.label_count,
        feature_mean=handle.feature_mean.copy(),
        feature_scale=handle.feature_scale.copy(),
        clip_range=handle.clip_range,
        loss_curve=list(handle.loss_curve),
    )


def _meta_path(path) -> Path:
    return Path(str(path) + ".meta.json")


def save_handle(handle: ClassifierHandle, path):
    """Write the network file plus a sidecar metadata record."""
    save_network(handle.network, path)
    meta = {
        "format_version": META_FORMAT_VERSION,
        "kind": handle.kind.value,
        "label_count": handle.label_count,
        "feature_mean": [float(v) for v in handle.feature_mean],
        "feature_scale": [float(v) for v in handle.feature_scale],
        "clip_range": [handle.clip_range[0], handle.clip_range[1]],
    }
    _meta_path(path).write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n",
                                encoding="utf-8")


def load_handle(path) -> ClassifierHandle:
    network = load_network(path)
    mpath = _meta_path(path)
    if not mpath.exists():
        raise ModelFormatError(f"{mpath}: missing sidecar metadata")
    meta = json.loads(mpath.read_text(encoding="utf-8"))
    if meta.get("format_version") != META_FORMAT_VERSION:
        raise ModelFormatError(f"{mpath}: unsupported metadata version")
    return ClassifierHandle(
        kind=ModelKind(meta["kind"]),
        network=network,
        label_count=int(meta["label_count"]),
        feature_mean=np.array(meta["feature_mean"], dtype=np.float64),
        feature_scale=np.array(meta["feature_scale"], dtype=np.float64),
        clip_range=(meta["clip_range"][0], meta["clip_range"][1]),
    )
