"""Repeatability-ranked test-vector generation.

Each candidate input is run through ``R`` independent Bayesian inferences
of ``T`` passes; its score is the population variance of the ``R``
resulting uncertainties. The ``N`` lowest-scoring inputs become the test
vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import SpecificationError
from .faults import FaultContext
from .inference import blocked_uncertainties
from .network import BinaryNetwork, DropoutBank
from .rng import RngStream

TVS_FORMAT = "spinbayes.test_vectors"


@dataclass
class TestVectorSet:
    __test__ = False  # keep pytest from collecting this

    inputs: np.ndarray
    scores: np.ndarray
    indices: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if not (len(self.inputs) == len(self.scores) == len(self.indices)):
            raise ValueError("inputs, scores and indices must have equal length")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")
        if np.any(np.diff(self.scores) < 0):
            raise ValueError("test vectors must be sorted by ascending score")

    def __len__(self):
        return len(self.scores)

    def to_dict(self) -> dict:
        return {
            "format": TVS_FORMAT,
            "version": 1,
            "params": self.params,
            "vectors": [
                {"index": int(i), "score": float(s), "input": x.astype(int).tolist()}
                for i, s, x in zip(self.indices, self.scores, self.inputs)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TestVectorSet":
        if d.get("format") != TVS_FORMAT:
            raise ValueError(f"not a {TVS_FORMAT} document")
        vecs = d["vectors"]
        if not vecs:
            raise ValueError("test vector set is empty")
        return cls(
            np.array([v["input"] for v in vecs], dtype=np.float64),
            np.array([v["score"] for v in vecs]),
            np.array([v["index"] for v in vecs]),
            dict(d.get("params", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "TestVectorSet":
        return cls.from_dict(json.loads(Path(path).read_text()))


def repeatability_score(net: BinaryNetwork, bank: Optional[DropoutBank], x: np.ndarray,
                        R: int = 200, T: int = 20, stream: RngStream = RngStream(0),
                        ctx: Optional[FaultContext] = None) -> float:
    """Population variance of one input's uncertainty over ``R`` inferences."""
    if R < 2 or T < 2:
        raise ValueError("repeatability needs R >= 2 and T >= 2")
    x = np.asarray(x, dtype=np.float64)[None, :]
    u = blocked_uncertainties(net, x, R, T, bank, ctx, [stream])[0]
    return float(np.var(u))


def score_inputs(net: BinaryNetwork, bank: Optional[DropoutBank], X: np.ndarray, keys,
                 R: int, T: int, stream: RngStream) -> np.ndarray:
    """Repeatability scores for rows of ``X``; row ``j`` draws from ``stream/keys[j]``."""
    sources = [stream.derive(int(k)) for k in keys]
    u = blocked_uncertainties(net, X, R, T, bank, None, sources)
    return u.var(axis=1)


def generate_test_vectors(net: BinaryNetwork, bank: Optional[DropoutBank], train_X: np.ndarray,
                          R: int = 200, T: int = 20, N: int = 100,
                          stream: RngStream = RngStream(0),
                          pool_size: Optional[int] = None) -> TestVectorSet:
    """Score training inputs and keep the ``N`` most repeatable ones.

    Training input ``i`` is scored from ``stream/0/i`` whatever order or
    subset it arrives in. With ``pool_size`` set, only a uniformly drawn
    subset of that many training inputs is scored. Ties go to the lower
    training-set index.
    """
    train_X = np.atleast_2d(np.asarray(train_X, dtype=np.float64))
    n_train = len(train_X)
    if N < 1 or N > n_train:
        raise SpecificationError(f"cannot select N={N} test vectors from {n_train} training inputs")
    if R < 2 or T < 2:
        raise ValueError("repeatability needs R >= 2 and T >= 2")
    if pool_size is not None and pool_size < n_train:
        if pool_size < N:
            raise SpecificationError(f"pool_size {pool_size} smaller than N={N}")
        pool_gen = stream.derive(1).generator()
        pool = np.sort(pool_gen.choice(n_train, size=pool_size, replace=False))
    else:
        pool = np.arange(n_train)
    scores = score_inputs(net, bank, train_X[pool], pool, R, T, stream.derive(0))
    order = np.argsort(scores, kind="stable")[:N]
    return TestVectorSet(
        inputs=train_X[pool[order]],
        scores=scores[order],
        indices=pool[order],
        params={"R": R, "T": T, "N": N, "seed": stream.seed, "path": list(stream.path),
                "pool_size": None if pool_size is None else int(pool_size),
                "n_train": n_train},
    )
