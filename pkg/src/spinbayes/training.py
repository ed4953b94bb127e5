"""Datasets and a straight-through-estimator trainer for the binarized MLP."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import IngestionError, TrainingError
from .faults import FaultContext
from .inference import run_passes, streams_for
from .network import (
    BN_EPS,
    BinaryNetwork,
    DropoutBank,
    Layer,
    Method,
    Sharing,
    crossbar_mac,
    sample_masks,
)
from .rng import RngStream, sign_pm1

DATASET_FORMAT = "spinbayes.dataset"
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    X_train: np.ndarray
    y_train: np.ndarray
    X_eval: np.ndarray
    y_eval: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.X_train = np.asarray(self.X_train, dtype=np.float64).reshape(len(self.y_train), -1)
        self.X_eval = np.asarray(self.X_eval, dtype=np.float64).reshape(len(self.y_eval), -1)
        self.y_train = np.asarray(self.y_train, dtype=np.int64)
        self.y_eval = np.asarray(self.y_eval, dtype=np.int64)
        if len(self.X_train) and len(self.X_eval) and self.X_train.shape[1] != self.X_eval.shape[1]:
            raise ValueError("train and eval inputs differ in dimension")
        for y in (self.y_train, self.y_eval):
            if y.size and (y.min() < 0 or y.max() >= self.n_classes):
                raise ValueError("labels out of range")

    @property
    def dim(self) -> int:
        return self.X_train.shape[1]

    def classes_in_both_splits(self) -> bool:
        want = set(range(self.n_classes))
        return set(self.y_train.tolist()) == want and set(self.y_eval.tolist()) == want

    def to_dict(self) -> dict:
        return {
            "format": DATASET_FORMAT,
            "version": 1,
            "n_classes": self.n_classes,
            "train": {"inputs": self.X_train.astype(int).tolist(), "labels": self.y_train.tolist()},
            "eval": {"inputs": self.X_eval.astype(int).tolist(), "labels": self.y_eval.tolist()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Dataset":
        if d.get("format") != DATASET_FORMAT:
            raise ValueError(f"not a {DATASET_FORMAT} document")
        return cls(
            np.array(d["train"]["inputs"], dtype=np.float64),
            np.array(d["train"]["labels"], dtype=np.int64),
            np.array(d["eval"]["inputs"], dtype=np.float64),
            np.array(d["eval"]["labels"], dtype=np.int64),
            int(d["n_classes"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "Dataset":
        return cls.from_dict(json.loads(Path(path).read_text()))


def stratified_split(labels: np.ndarray, eval_fraction: float, rng: np.random.Generator):
    """Per-class random split; both index arrays are returned in ascending order."""
    train_idx, eval_idx = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        k = int(round(eval_fraction * len(idx)))
        eval_idx.append(idx[:k])
        train_idx.append(idx[k:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(eval_idx))


def synth_clusters(n_per_class: int, n_classes: int, dim: int, seed: int,
                   center_norm: float = 2.0, min_distance: float = 2.0,
                   within_std: float = 0.6):
    """Real-valued Gaussian clusters before binarization: ``(X, labels, centers)``."""
    if n_per_class <= 0 or n_classes <= 0:
        raise ValueError("n_per_class and n_classes must be positive")
    if dim < n_classes:
        raise ValueError(f"dim ({dim}) must be >= n_classes ({n_classes})")
    rng = RngStream(seed).derive(0).generator()
    for _ in range(1000):
        c = rng.standard_normal((n_classes, dim))
        c *= center_norm / np.linalg.norm(c, axis=1, keepdims=True)
        d = np.linalg.norm(c[:, None] - c[None], axis=-1)
        if n_classes == 1 or d[np.triu_indices(n_classes, 1)].min() >= min_distance:
            break
    else:
        raise ValueError("could not place cluster centers; raise center_norm")
    labels = np.repeat(np.arange(n_classes), n_per_class)
    X = c[labels] + within_std * rng.standard_normal((len(labels), dim))
    return X, labels, c


def synth_dataset(n_per_class: int, n_classes: int = 4, dim: int = 32, seed: int = 0,
                  **cluster_kw) -> Dataset:
    """Binarized Gaussian-cluster data with a stratified 80/20 split."""
    X, labels, _ = synth_clusters(n_per_class, n_classes, dim, seed, **cluster_kw)
    rng = RngStream(seed).derive(1).generator()
    tr, ev = stratified_split(labels, 0.2, rng)
    Xb = sign_pm1(X)
    return Dataset(Xb[tr], labels[tr], Xb[ev], labels[ev], n_classes)


def _read_idx(path, magic: int) -> tuple[tuple[int, ...], np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise IngestionError(f"{path}: too short for an IDX header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise IngestionError(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    body = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim)
    if body.size != int(np.prod(dims)):
        raise IngestionError(f"{path}: payload has {body.size} bytes, header promises {np.prod(dims)}")
    return dims, body.reshape(dims)


def read_idx_arrays(images_path, labels_path, binarize_threshold: float = 0.5):
    """Binarized ``(n, rows*cols)`` inputs and integer labels from an IDX pair."""
    _, images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    _, labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if len(images) != len(labels):
        raise IngestionError(f"{len(images)} images but {len(labels)} labels")
    X = sign_pm1(images.reshape(len(images), -1) / 255.0 - binarize_threshold)
    return X, labels.astype(np.int64)


def load_idx(images_path, labels_path, binarize_threshold: float = 0.5,
             eval_fraction: float = 0.2, seed: int = 0) -> Dataset:
    X, labels = read_idx_arrays(images_path, labels_path, binarize_threshold)
    n_classes = int(labels.max()) + 1 if labels.size else 0
    if eval_fraction > 0:
        tr, ev = stratified_split(labels, eval_fraction, RngStream(seed).generator())
    else:
        tr, ev = np.arange(len(labels)), np.zeros(0, dtype=np.intp)
    return Dataset(X[tr], labels[tr], X[ev], labels[ev], n_classes)


@dataclass(frozen=True)
class DropoutConfig:
    method: str = Method.SPINDROP.value
    p: float = 0.25
    sharing: str = Sharing.PER_COLUMN.value
    group_size: int = 4
    scale_gamma: float = 0.5


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 0.1
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")


def _keep_factor(mask: Optional[np.ndarray], method: Method, scale_gamma: float):
    if mask is None:
        return 1.0
    if method is Method.SCALEDROP:
        return np.where(mask, scale_gamma, 1.0)
    return np.where(mask, 0.0, 1.0)


def _assemble(latent, gamma, beta, mean, var, dims, drop: DropoutConfig) -> BinaryNetwork:
    n = len(latent)
    layers = [
        Layer(sign_pm1(latent[i]), gamma[i], beta[i], mean[i], np.maximum(var[i], BN_EPS),
              has_dropout=i < n - 1)
        for i in range(n)
    ]
    return BinaryNetwork(layers, Method(drop.method), drop.p, drop.group_size,
                         drop.scale_gamma, Sharing(drop.sharing))


def freeze_batch_norm(net: BinaryNetwork, X: np.ndarray, source, bank: Optional[DropoutBank] = None) -> BinaryNetwork:
    """Replace bn mean/var by population statistics over ``X`` with dropout live.

    Layers are frozen front to back, so each layer's statistics are taken
    over inputs produced by the already-frozen layers before it.
    """
    if bank is None:
        bank = DropoutBank.healthy(net)
    masks = sample_masks(bank, net, source, n=len(X))
    a = np.asarray(X, dtype=np.float64)
    layers = []
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        y = crossbar_mac(layer.weights, a, masks[i], method=net.method, scale_gamma=net.scale_gamma)
        frozen = Layer(layer.weights, layer.bn_gamma, layer.bn_beta, y.mean(axis=0),
                       np.maximum(y.var(axis=0), BN_EPS), layer.has_dropout)
        layers.append(frozen)
        if i < last:
            a = np.where(frozen.batch_norm(y) >= 0, 1.0, -1.0)
    return BinaryNetwork(layers, net.method, net.p, net.group_size, net.scale_gamma, net.sharing)


def train(layer_dims: Sequence[int], method_cfg: DropoutConfig, data: Dataset,
          cfg: TrainConfig = TrainConfig()) -> BinaryNetwork:
    """Train a binarized MLP with dropout live, via the straight-through estimator.

    Latent real weights are clipped to [-1, 1]; the forward pass uses their
    signs. Hidden binarization passes gradient where |z| <= 1. Batch-norm
    uses batch statistics while training and is frozen to population
    statistics at the end.
    """
    dims = list(layer_dims)
    if dims[0] != data.dim or dims[-1] != data.n_classes:
        raise ValueError(f"layer dims {dims} incompatible with data ({data.dim} -> {data.n_classes})")
    root = RngStream(cfg.seed)
    init = root.derive(0).generator()
    n = len(dims) - 1
    latent = [np.clip(init.normal(0.0, 0.3, (i, o)), -1, 1) for i, o in zip(dims, dims[1:])]
    gamma = [np.ones(o) for o in dims[1:]]
    beta = [np.zeros(o) for o in dims[1:]]
    params = latent + gamma + beta
    velocity = [np.zeros_like(p) for p in params]

    shape_net = _assemble(latent, gamma, beta, [np.zeros(o) for o in dims[1:]],
                          [np.ones(o) for o in dims[1:]], dims, method_cfg)
    bank = DropoutBank.healthy(shape_net)
    method = shape_net.method
    X, y = data.X_train, data.y_train
    onehot = np.eye(data.n_classes)[y]
    order_gen = root.derive(1).generator()
    mask_stream = root.derive(2)
    step = 0

    for epoch in range(cfg.epochs):
        perm = order_gen.permutation(len(X))
        for start in range(0, len(X), cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            B = len(idx)
            if B < 2:
                continue
            masks = sample_masks(bank, shape_net, mask_stream.derive(step), n=B)
            step += 1
            acts, keeps, yhats, inv_stds, zs = [X[idx]], [], [], [], []
            for i in range(n):
                w = sign_pm1(latent[i])
                keep = _keep_factor(masks[i], method, method_cfg.scale_gamma)
                yv = (acts[-1] @ w) * keep
                mu, var = yv.mean(axis=0), yv.var(axis=0)
                inv_std = 1.0 / np.sqrt(var + BN_EPS)
                yhat = (yv - mu) * inv_std
                z = gamma[i] * yhat + beta[i]
                keeps.append(keep); yhats.append(yhat); inv_stds.append(inv_std); zs.append(z)
                if i < n - 1:
                    acts.append(np.where(z >= 0, 1.0, -1.0))
            logits = zs[-1]
            shifted = logits - logits.max(axis=1, keepdims=True)
            logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
            loss = -(onehot[idx] * logp).sum() / B
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")

            grads_w, grads_g, grads_b = [None] * n, [None] * n, [None] * n
            dz = (np.exp(logp) - onehot[idx]) / B
            for i in reversed(range(n)):
                yhat = yhats[i]
                grads_g[i] = (dz * yhat).sum(axis=0)
                grads_b[i] = dz.sum(axis=0)
                dyhat = dz * gamma[i]
                dyv = inv_stds[i] / B * (B * dyhat - dyhat.sum(axis=0) - yhat * (dyhat * yhat).sum(axis=0))
                dy = dyv * keeps[i]
                w = sign_pm1(latent[i])
                grads_w[i] = (acts[i].T @ dy) * (np.abs(latent[i]) <= 1.0)
                if i > 0:
                    da = dy @ w.T
                    dz = da * (np.abs(zs[i - 1]) <= 1.0)

            for k, g in enumerate(grads_w + grads_g + grads_b):
                velocity[k] = cfg.momentum * velocity[k] - cfg.learning_rate * g
                params[k] += velocity[k]
            for w in latent:
                np.clip(w, -1.0, 1.0, out=w)
            if not all(np.all(np.isfinite(q)) for q in params):
                raise TrainingError(f"parameters diverged at epoch {epoch}")

    net = _assemble(latent, gamma, beta, [np.zeros(o) for o in dims[1:]],
                    [np.ones(o) for o in dims[1:]], dims, method_cfg)
    return freeze_batch_norm(net, X, root.derive(3))


def evaluate_accuracy(net: BinaryNetwork, X: np.ndarray, labels: np.ndarray, T: int,
                      stream: RngStream, bank: Optional[DropoutBank] = None,
                      ctx: Optional[FaultContext] = None) -> float:
    """Accuracy of the argmax of the ``T``-pass mean softmax."""
    if T < 1:
        raise ValueError("T must be at least 1")
    X = np.atleast_2d(X)
    if len(X) == 0:
        return float("nan")
    probs = run_passes(net, X, T, bank, ctx, streams_for(stream, len(X)))
    pred = probs.mean(axis=1).argmax(axis=1)
    return float(np.mean(pred == np.asarray(labels)))


def config_dict(cfg) -> dict:
    return asdict(cfg)
