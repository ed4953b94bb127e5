"""Binarized MLP on a crossbar abstraction with pluggable dropout.

Each layer is one crossbar tile: rows are word-lines (inputs), columns are
bit-lines (outputs). A forward pass computes the bit-line MAC, applies the
dropout mechanism to the digitized column sums, runs frozen batch-norm and
binarizes hidden activations with sign(0) = +1. The last layer returns
batch-normalized logits.

Fault hooks are duck-typed: ``forward`` accepts any context object that
provides ``weights(net)``, ``mac_hook(layer_index, noise)`` and
``buffer_hook(layer_index, noise)``; ``None`` means fault-free.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum, IntEnum
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .rng import RandomSource, as_generator, check_bits

BN_EPS = 1e-5
FORMAT_NAME = "spinbayes.network"
FORMAT_VERSION = 1


class Method(str, Enum):
    SPINDROP = "spindrop"
    SPATIAL_SPINDROP = "spatial_spindrop"
    SCALEDROP = "scaledrop"


class Sharing(str, Enum):
    PER_COLUMN = "per_column"
    LAYER_SHARED = "layer_shared"
    GLOBAL_SHARED = "global_shared"


class GenState(IntEnum):
    HEALTHY = 0
    STUCK_DROP = 1
    STUCK_PASS = 2
    BIT_FLIP = 3


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    has_dropout: bool
    is_output: bool


@dataclass
class Layer:
    """One crossbar tile plus its frozen batch-norm parameters."""

    weights: np.ndarray
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_mean: np.ndarray
    bn_var: np.ndarray
    has_dropout: bool = False

    def __post_init__(self):
        self.weights = check_bits(self.weights, "weights")
        if self.weights.ndim != 2:
            raise ValueError("weights must be a 2-D (in_dim x out_dim) matrix")
        out_dim = self.weights.shape[1]
        for name in ("bn_gamma", "bn_beta", "bn_mean", "bn_var"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.shape != (out_dim,):
                raise ValueError(f"{name} must have shape ({out_dim},), got {v.shape}")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite")
            setattr(self, name, v)
        if np.any(self.bn_var < BN_EPS):
            raise ValueError("bn_var must be >= BN_EPS elementwise")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    def batch_norm(self, y: np.ndarray) -> np.ndarray:
        return self.bn_gamma * (y - self.bn_mean) / np.sqrt(self.bn_var + BN_EPS) + self.bn_beta


@dataclass
class BinaryNetwork:
    layers: list[Layer]
    method: Method = Method.SPINDROP
    p: float = 0.25
    group_size: int = 4
    scale_gamma: float = 0.5
    sharing: Sharing = Sharing.PER_COLUMN

    def __post_init__(self):
        self.method = Method(self.method)
        self.sharing = Sharing(self.sharing)
        if not self.layers:
            raise ValueError("network needs at least one layer")
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"dropout p must lie in (0, 1), got {self.p}")
        if not 0.0 < self.scale_gamma <= 1.0:
            raise ValueError(f"scale_gamma must lie in (0, 1], got {self.scale_gamma}")
        if self.group_size < 1:
            raise ValueError("group_size must be positive")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer width mismatch: {a.out_dim} -> {b.in_dim}")
        if self.layers[-1].has_dropout:
            raise ValueError("the output layer cannot carry dropout")
        if self.method is Method.SPATIAL_SPINDROP:
            for layer in self.layers:
                if layer.has_dropout and layer.out_dim % self.group_size:
                    raise ValueError(
                        f"group_size {self.group_size} does not divide layer width {layer.out_dim}"
                    )

    @property
    def specs(self) -> list[LayerSpec]:
        last = len(self.layers) - 1
        return [
            LayerSpec(l.in_dim, l.out_dim, l.has_dropout, i == last)
            for i, l in enumerate(self.layers)
        ]

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def n_classes(self) -> int:
        return self.layers[-1].out_dim

    @property
    def n_weight_cells(self) -> int:
        return sum(l.weights.size for l in self.layers)

    @property
    def hidden_widths(self) -> list[int]:
        return [l.out_dim for l in self.layers[:-1]]

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "dims": [self.in_dim] + [l.out_dim for l in self.layers],
            "dropout": {
                "method": self.method.value,
                "p": self.p,
                "sharing": self.sharing.value,
                "group_size": self.group_size,
                "scale_gamma": self.scale_gamma,
            },
            "layers": [
                {
                    "has_dropout": bool(l.has_dropout),
                    "weights": l.weights.astype(int).tolist(),
                    "bn_gamma": l.bn_gamma.tolist(),
                    "bn_beta": l.bn_beta.tolist(),
                    "bn_mean": l.bn_mean.tolist(),
                    "bn_var": l.bn_var.tolist(),
                }
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BinaryNetwork":
        if d.get("format") != FORMAT_NAME:
            raise ValueError(f"not a {FORMAT_NAME} document")
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported network version {d.get('version')}")
        layers = [
            Layer(
                weights=np.array(ld["weights"], dtype=np.float64),
                bn_gamma=ld["bn_gamma"],
                bn_beta=ld["bn_beta"],
                bn_mean=ld["bn_mean"],
                bn_var=ld["bn_var"],
                has_dropout=bool(ld["has_dropout"]),
            )
            for ld in d["layers"]
        ]
        dims = [layers[0].in_dim] + [l.out_dim for l in layers]
        if dims != list(d["dims"]):
            raise ValueError(f"declared dims {d['dims']} disagree with weights {dims}")
        drop = d["dropout"]
        return cls(
            layers=layers,
            method=Method(drop["method"]),
            p=float(drop["p"]),
            sharing=Sharing(drop["sharing"]),
            group_size=int(drop["group_size"]),
            scale_gamma=float(drop["scale_gamma"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "BinaryNetwork":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- dropout modules ---------------------------------------------------


def _column_maps(net: BinaryNetwork) -> tuple[tuple[Optional[np.ndarray], ...], int]:
    """Map every dropout-bearing column to the index of the generator driving it."""
    maps: list[Optional[np.ndarray]] = []
    next_gen = 0
    for layer in net.layers:
        if not layer.has_dropout:
            maps.append(None)
            continue
        cols = np.arange(layer.out_dim)
        if net.sharing is Sharing.GLOBAL_SHARED:
            maps.append(np.zeros(layer.out_dim, dtype=np.intp))
            next_gen = 1
        elif net.sharing is Sharing.LAYER_SHARED:
            maps.append(np.full(layer.out_dim, next_gen, dtype=np.intp))
            next_gen += 1
        elif net.method is Method.SPATIAL_SPINDROP:
            maps.append(next_gen + cols // net.group_size)
            next_gen += layer.out_dim // net.group_size
        else:
            maps.append(next_gen + cols)
            next_gen += layer.out_dim
    return tuple(maps), next_gen


@dataclass(frozen=True)
class DropoutBank:
    """Stochastic bit generators feeding the dropout masks, with fault state.

    Generators are stored flat; ``column_maps[l][j]`` names the generator
    driving bit-line ``j`` of layer ``l`` (``None`` for layers without
    dropout). ``flip_rate`` only matters for generators in ``BIT_FLIP``.
    """

    p_effective: np.ndarray
    state: np.ndarray
    flip_rate: np.ndarray
    column_maps: tuple

    @classmethod
    def healthy(cls, net: BinaryNetwork) -> "DropoutBank":
        maps, n = _column_maps(net)
        return cls(
            p_effective=np.full(n, net.p),
            state=np.zeros(n, dtype=np.int8),
            flip_rate=np.zeros(n),
            column_maps=maps,
        )

    @property
    def n_generators(self) -> int:
        return len(self.p_effective)

    def replace(self, *, p_effective=None, state=None, flip_rate=None) -> "DropoutBank":
        p = self.p_effective if p_effective is None else np.asarray(p_effective, dtype=np.float64)
        s = self.state if state is None else np.asarray(state, dtype=np.int8)
        f = self.flip_rate if flip_rate is None else np.asarray(flip_rate, dtype=np.float64)
        if np.any((p < 0) | (p > 1)) or np.any((f < 0) | (f > 1)):
            raise ValueError("generator probabilities must lie in [0, 1]")
        return DropoutBank(p, s, f, self.column_maps)

    def all_stuck(self, state: GenState) -> "DropoutBank":
        return self.replace(state=np.full(self.n_generators, int(state), dtype=np.int8))

    def is_consistent_with(self, net: BinaryNetwork) -> bool:
        maps, n = _column_maps(net)
        return n == self.n_generators and all(
            (a is None and b is None) or (a is not None and b is not None and np.array_equal(a, b))
            for a, b in zip(maps, self.column_maps)
        )


@dataclass(frozen=True)
class MaskSet:
    """Per-layer drop masks (True = bit-line dropped / scaled); ``None`` = no dropout."""

    masks: tuple

    def __getitem__(self, i):
        return self.masks[i]

    def __len__(self):
        return len(self.masks)

    @classmethod
    def none(cls, net: BinaryNetwork) -> "MaskSet":
        return cls(tuple(None for _ in net.layers))


def sample_generator_bits(bank: DropoutBank, source: RandomSource, n: int) -> np.ndarray:
    """Sample every generator ``n`` times; result is ``(n, G)`` bool, True = drop."""
    gen = as_generator(source)
    g = bank.n_generators
    bits = gen.random((n, g)) < bank.p_effective
    state = bank.state
    if np.any(state == GenState.BIT_FLIP):
        flips = (gen.random((n, g)) < bank.flip_rate) & (state == GenState.BIT_FLIP)
        bits ^= flips
    bits[:, state == GenState.STUCK_DROP] = True
    bits[:, state == GenState.STUCK_PASS] = False
    return bits


def sample_masks(bank: DropoutBank, net: BinaryNetwork, source: RandomSource, n: Optional[int] = None) -> MaskSet:
    """Draw drop masks for one pass (``n=None``) or ``n`` passes stacked on axis 0."""
    bits = sample_generator_bits(bank, source, 1 if n is None else n)
    masks = []
    for cmap in bank.column_maps:
        if cmap is None:
            masks.append(None)
        else:
            m = bits[:, cmap]
            masks.append(m[0] if n is None else m)
    return MaskSet(tuple(masks))


# -- crossbar dataflow -------------------------------------------------

Hook = Optional[Callable[[np.ndarray], np.ndarray]]


def crossbar_mac(
    weights: np.ndarray,
    x: np.ndarray,
    drop_mask: Optional[np.ndarray] = None,
    mac_fault: Hook = None,
    *,
    method: Method = Method.SPINDROP,
    scale_gamma: float = 0.5,
) -> np.ndarray:
    """Bit-line sums ``x @ weights`` with dropout and an optional MAC perturbation.

    ``x`` may be one input vector or a stack of them (rows on axis 0).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != weights.shape[0]:
        raise ValueError(f"input length {x.shape[-1]} does not match crossbar rows {weights.shape[0]}")
    y = x @ weights
    if drop_mask is not None:
        if Method(method) is Method.SCALEDROP:
            y = np.where(drop_mask, y * scale_gamma, y)
        else:
            y = np.where(drop_mask, 0.0, y)
    if mac_fault is not None:
        y = mac_fault(y)
    return y


def layer_forward(
    layer: Layer,
    x: np.ndarray,
    mask: Optional[np.ndarray] = None,
    mac_fault: Hook = None,
    buf_fault: Hook = None,
    is_output: bool = False,
    *,
    method: Method = Method.SPINDROP,
    scale_gamma: float = 0.5,
    weights: Optional[np.ndarray] = None,
) -> np.ndarray:
    w = layer.weights if weights is None else weights
    y = crossbar_mac(w, x, mask, mac_fault, method=method, scale_gamma=scale_gamma)
    z = layer.batch_norm(y)
    if is_output:
        return z
    a = np.where(z >= 0, 1.0, -1.0)
    if buf_fault is not None:
        a = buf_fault(a)
    return a


def forward(
    net: BinaryNetwork,
    x: np.ndarray,
    masks: Optional[MaskSet] = None,
    ctx=None,
    source: Optional[RandomSource] = None,
    noise: Optional[Sequence] = None,
) -> np.ndarray:
    """Logits for one input or a stack of inputs under fixed masks and faults.

    Per-pass fault randomness is either supplied precomputed via ``noise``
    (as returned by ``ctx.draw_noise``) or drawn here from ``source``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.in_dim:
        raise ValueError(f"input length {x.shape[-1]} does not match network input {net.in_dim}")
    if masks is None:
        masks = MaskSet.none(net)
    weights = [l.weights for l in net.layers] if ctx is None else ctx.weights(net)
    if ctx is not None and noise is None:
        rows = 1 if x.ndim == 1 else x.shape[0]
        gen = as_generator(source) if source is not None else None
        noise = ctx.draw_noise(net, gen, rows)
        if x.ndim == 1:
            noise = [None if n is None else {k: v[0] for k, v in n.items()} for n in noise]
    last = len(net.layers) - 1
    a = x
    for i, layer in enumerate(net.layers):
        mac_fault = buf_fault = None
        if ctx is not None:
            mac_fault = ctx.mac_hook(i, noise[i])
            buf_fault = ctx.buffer_hook(i, noise[i])
        a = layer_forward(
            layer, a, masks[i], mac_fault, buf_fault, i == last,
            method=net.method, scale_gamma=net.scale_gamma, weights=weights[i],
        )
    return a


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def init_network(
    dims: Sequence[int],
    rng: np.random.Generator,
    *,
    method: Method = Method.SPINDROP,
    p: float = 0.25,
    sharing: Sharing = Sharing.PER_COLUMN,
    group_size: int = 4,
    scale_gamma: float = 0.5,
) -> BinaryNetwork:
    """Random ±1 network with identity batch-norm; dropout on every hidden layer."""
    layers = []
    for k, (i, o) in enumerate(zip(dims, dims[1:])):
        layers.append(
            Layer(
                weights=np.where(rng.random((i, o)) < 0.5, -1.0, 1.0),
                bn_gamma=np.ones(o),
                bn_beta=np.zeros(o),
                bn_mean=np.zeros(o),
                bn_var=np.ones(o),
                has_dropout=k < len(dims) - 2,
            )
        )
    return BinaryNetwork(layers, Method(method), p, group_size, scale_gamma, Sharing(sharing))
