"""Monte Carlo dropout prediction.

Every input gets its own random source, which drives all ``T`` passes for
that input (masks first, then per-layer transient fault noise). Inputs can
therefore be batched freely without changing any individual prediction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .faults import FaultContext
from .network import BinaryNetwork, DropoutBank, MaskSet, forward, sample_masks, softmax
from .rng import RandomSource, RngStream, as_generator

# rows per vectorized forward call
_CHUNK_ROWS = 1 << 15


@dataclass(frozen=True)
class PredictiveResult:
    mean_probs: np.ndarray
    predicted_class: int
    uncertainty: float
    prob_samples: np.ndarray


@dataclass(frozen=True)
class BatchPrediction:
    mean_probs: np.ndarray      # (n, C)
    predicted_class: np.ndarray  # (n,)
    uncertainty: np.ndarray     # (n,)
    prob_samples: np.ndarray    # (n, T, C)

    def __len__(self):
        return len(self.uncertainty)

    def __getitem__(self, i) -> PredictiveResult:
        return PredictiveResult(
            self.mean_probs[i], int(self.predicted_class[i]),
            float(self.uncertainty[i]), self.prob_samples[i],
        )


def uncertainty_of(prob_samples: np.ndarray) -> np.ndarray | float:
    """Class-averaged population variance across passes.

    ``prob_samples`` has passes on axis -2 and classes on axis -1; leading
    axes are treated as a batch.
    """
    ps = np.asarray(prob_samples, dtype=np.float64)
    if ps.shape[-2] < 2:
        raise ValueError("uncertainty needs at least two passes")
    # shift by the first pass so identical passes give exactly zero
    d = ps - ps[..., :1, :]
    u = d.var(axis=-2).mean(axis=-1)
    return float(u) if u.ndim == 0 else u


def _stack_noise(parts: list[list]) -> list:
    stacked = []
    for per_layer in zip(*parts):
        if per_layer[0] is None:
            stacked.append(None)
        else:
            stacked.append({k: np.concatenate([p[k] for p in per_layer]) for k in per_layer[0]})
    return stacked


def run_passes(
    net: BinaryNetwork,
    X: np.ndarray,
    T: int,
    bank: Optional[DropoutBank],
    ctx: Optional[FaultContext],
    sources: Sequence[RandomSource],
) -> np.ndarray:
    """Softmax outputs of ``T`` stochastic passes per input, shape ``(n, T, C)``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if T < 1:
        raise ValueError("T must be at least 1")
    if len(sources) != len(X):
        raise ValueError("need exactly one random source per input")
    if bank is None:
        bank = DropoutBank.healthy(net)
    if ctx is not None:
        bank = ctx.bank_for(bank)
        if ctx.is_clean:
            ctx = None
    n = len(X)
    per_chunk = max(1, _CHUNK_ROWS // T)
    out = np.empty((n, T, net.n_classes))
    for start in range(0, n, per_chunk):
        stop = min(n, start + per_chunk)
        mask_parts, noise_parts = [], []
        for src in sources[start:stop]:
            gen = as_generator(src)
            mask_parts.append(sample_masks(bank, net, gen, n=T))
            if ctx is not None:
                noise_parts.append(ctx.draw_noise(net, gen, T))
        masks = MaskSet(tuple(
            None if parts[0] is None else np.concatenate(parts)
            for parts in zip(*(m.masks for m in mask_parts))
        ))
        noise = _stack_noise(noise_parts) if ctx is not None else None
        rows = np.repeat(X[start:stop], T, axis=0)
        logits = forward(net, rows, masks, ctx, noise=noise)
        out[start:stop] = softmax(logits).reshape(stop - start, T, -1)
    return out


def predict_batch(
    net: BinaryNetwork,
    X: np.ndarray,
    T: int,
    bank: Optional[DropoutBank] = None,
    ctx: Optional[FaultContext] = None,
    sources: Sequence[RandomSource] = (),
) -> BatchPrediction:
    if T < 2:
        raise ValueError(f"Bayesian prediction needs T >= 2, got {T}")
    probs = run_passes(net, X, T, bank, ctx, sources)
    mean = probs.mean(axis=1)
    return BatchPrediction(mean, mean.argmax(axis=1), uncertainty_of(probs), probs)


def predict(
    net: BinaryNetwork,
    x: np.ndarray,
    T: int = 20,
    bank: Optional[DropoutBank] = None,
    ctx: Optional[FaultContext] = None,
    stream: RandomSource = RngStream(0),
) -> PredictiveResult:
    """``T``-pass Monte Carlo dropout prediction for a single input."""
    return predict_batch(net, np.asarray(x)[None, :], T, bank, ctx, [stream])[0]


def blocked_uncertainties(
    net: BinaryNetwork,
    X: np.ndarray,
    R: int,
    T: int,
    bank: Optional[DropoutBank] = None,
    ctx: Optional[FaultContext] = None,
    sources: Sequence[RandomSource] = (),
) -> np.ndarray:
    """``R`` independent ``T``-pass uncertainties per input, shape ``(n, R)``.

    Repetition ``r`` of input ``i`` is the block of passes ``r*T .. r*T+T-1``
    drawn from input ``i``'s source.
    """
    if T < 2 or R < 1:
        raise ValueError("need T >= 2 and R >= 1")
    probs = run_passes(net, X, R * T, bank, ctx, sources)
    return uncertainty_of(probs.reshape(len(probs), R, T, -1))


def streams_for(stream: RngStream, n: int, offset: int = 0) -> list[RngStream]:
    return [stream.derive(offset + i) for i in range(n)]
