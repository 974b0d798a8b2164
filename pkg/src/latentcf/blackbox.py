"""Differentiable black-box classifier: a small ReLU MLP with one target-class logit."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import CheckpointError, load_into, read_checkpoint, write_checkpoint


class DegenerateDataError(ValueError):
    pass


@dataclass
class ClassifierConfig:
    hidden: tuple[int, ...] = (32, 32)
    epochs: int = 100
    learning_rate: float = 0.1
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)


class Classifier:
    def __init__(self, width: int, cfg: ClassifierConfig, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.width = width
        self.cfg = cfg
        sizes = (width, *cfg.hidden, 1)
        self.weights, self.biases = [], []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            # He-uniform for the ReLU layers
            bound = np.sqrt(6.0 / fan_in)
            self.weights.append(ad.parameter(rng.uniform(-bound, bound, (fan_in, fan_out)), f"W{i}"))
            self.biases.append(ad.parameter(np.zeros(fan_out), f"b{i}"))

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = w
            out[f"b{i}"] = b
        return out

    def logit(self, x) -> Tensor:
        """Differentiable target-class logit, shape ``(B,)`` for input ``(B, k)``."""
        x = ad.as_tensor(x)
        if x.ndim == 1:
            x = ad.reshape(x, (1, x.shape[0]))
        if x.shape[-1] != self.width:
            raise ad.ShapeError(f"classifier expects width {self.width}, got {x.shape[-1]}")
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = ad.relu(h)
        return ad.reshape(h, (h.shape[0],))

    def predict_logit(self, X: np.ndarray) -> np.ndarray:
        """Plain numpy forward pass (no graph)."""
        h = np.atleast_2d(np.asarray(X, dtype=np.float64))
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.values + b.values
            if i < last:
                h = np.maximum(h, 0.0)
        return h[:, 0]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.predict_logit(X)))

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Class decisions; 1 iff P(y=1|x) >= 0.5, i.e. logit >= 0."""
        return (self.predict_logit(X) >= 0.0).astype(np.int64)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in sorted(self.parameters().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.values).tobytes())
        return h.hexdigest()

    def freeze(self) -> None:
        for p in self.parameters().values():
            p.requires_grad = False
            p.grad = None

    def save(self, path, schema_hash: str = "", extra: dict | None = None) -> None:
        header = {"kind": "classifier", "schema_hash": schema_hash, "width": self.width,
                  "config": asdict(self.cfg), **(extra or {})}
        write_checkpoint(path, header, {"classifier/" + k: v.values for k, v in self.parameters().items()})

    @classmethod
    def load(cls, path, schema_hash: str | None = None) -> "Classifier":
        header, blocks = read_checkpoint(path)
        if header.get("kind") != "classifier":
            raise CheckpointError(f"{path}: not a classifier checkpoint")
        if schema_hash is not None and header.get("schema_hash") != schema_hash:
            raise CheckpointError(f"{path}: schema hash {header.get('schema_hash')} != {schema_hash}")
        clf = cls(header["width"], ClassifierConfig(**header["config"]))
        load_into(clf.parameters(), blocks, "classifier/")
        clf.freeze()
        return clf


def bce_with_logits(logit: Tensor, y: np.ndarray) -> Tensor:
    """Mean binary cross-entropy: softplus(l) - y * l."""
    y = np.asarray(y, dtype=np.float64)
    return ad.mean(ad.softplus(logit) - logit * y)


def train_classifier(X: np.ndarray, y: np.ndarray, cfg: ClassifierConfig,
                     X_val: np.ndarray | None = None, y_val: np.ndarray | None = None):
    """Minibatch SGD on binary cross-entropy; returns ``(classifier, held_out_accuracy)``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if len(np.unique(y)) < 2:
        raise DegenerateDataError("training labels contain a single class")
    if np.all(X.std(axis=0) == 0):
        raise DegenerateDataError("all features are constant; nothing to learn")
    rng = np.random.default_rng(cfg.seed)
    clf = Classifier(X.shape[1], cfg, rng)
    params = list(clf.parameters().values())
    n = len(X)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss = bce_with_logits(clf.logit(X[idx]), y[idx])
            ad.backward(loss)
            ad.sgd_step(params, cfg.learning_rate)
    clf.freeze()
    acc = None
    if X_val is not None and y_val is not None and len(y_val):
        acc = float(np.mean(clf.predict(X_val) == np.asarray(y_val)))
    return clf, acc
