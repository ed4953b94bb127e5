"""Uncertainty profiling and the online vote-based test session."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .atpg import TestVectorSet
from .errors import SpecificationError
from .faults import FaultContext
from .inference import blocked_uncertainties
from .network import BinaryNetwork, DropoutBank
from .rng import RngStream

SIGMA_FLOOR = 1e-12
PROFILE_FORMAT = "spinbayes.profile"
DOMAINS = ("log", "linear")
# largest share of exact-zero samples a log-domain fit may leave out
ZERO_ATOM_LIMIT = 0.01
# queries evaluated per vectorized step in live sessions
_LIVE_CHUNK = 8


@dataclass(frozen=True)
class UncertaintyProfile:
    """Gaussian fit of fault-free query uncertainties and its 3-sigma bounds.

    ``mu`` and ``sigma`` live in the fit domain: plain uncertainty for
    ``"linear"``, natural log of uncertainty for ``"log"``. The bounds are
    always in uncertainty units.
    """

    mu: float
    sigma: float
    b_upper: float
    b_lower: float
    n_samples: int
    domain: str = "log"
    inferences_per_query: int = 1

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown profile domain {self.domain!r}")
        if self.sigma < SIGMA_FLOOR:
            raise ValueError("sigma below floor")
        if not self.b_lower <= self.center <= self.b_upper:
            raise ValueError("inconsistent profile bounds")

    @property
    def center(self) -> float:
        """Fitted centre in uncertainty units."""
        return math.exp(self.mu) if self.domain == "log" else self.mu

    @classmethod
    def from_samples(cls, samples, domain: str = "log",
                     inferences_per_query: int = 1) -> "UncertaintyProfile":
        """Fit mu/sigma (population std) and place bounds at mu +- 3 sigma.

        The log-domain fit ignores exact zeros as long as they make up at
        most ``ZERO_ATOM_LIMIT`` of the samples; such zeros then fall below
        ``b_lower`` and count as positives. With more zeros, or fewer than
        two positive samples, the fit falls back to linear.
        """
        s = np.asarray(samples, dtype=np.float64).ravel()
        if s.size == 0:
            raise SpecificationError("cannot fit a profile to zero samples")
        if domain not in DOMAINS:
            raise ValueError(f"unknown profile domain {domain!r}")
        pos = s[s > 0]
        if domain == "log" and len(pos) >= 2 and 1 - len(pos) / s.size <= ZERO_ATOM_LIMIT:
            y = np.log(pos)
            mu = float(y.mean())
            sigma = max(float(y.std()), SIGMA_FLOOR)
            return cls(mu, sigma, math.exp(mu + 3 * sigma), math.exp(mu - 3 * sigma),
                       int(s.size), "log", inferences_per_query)
        mu = float(s.mean())
        sigma = max(float(s.std()), SIGMA_FLOOR)
        return cls(mu, sigma, mu + 3 * sigma, max(0.0, mu - 3 * sigma), int(s.size),
                   "linear", inferences_per_query)

    def to_dict(self) -> dict:
        return {"format": PROFILE_FORMAT, "version": 1, "domain": self.domain,
                "mu": self.mu, "sigma": self.sigma,
                "b_upper": self.b_upper, "b_lower": self.b_lower,
                "n_samples": self.n_samples, "inferences_per_query": self.inferences_per_query}

    @classmethod
    def from_dict(cls, d: dict) -> "UncertaintyProfile":
        if d.get("format") != PROFILE_FORMAT:
            raise ValueError(f"not a {PROFILE_FORMAT} document")
        return cls(float(d["mu"]), float(d["sigma"]), float(d["b_upper"]), float(d["b_lower"]),
                   int(d["n_samples"]), str(d["domain"]), int(d.get("inferences_per_query", 1)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "UncertaintyProfile":
        return cls.from_dict(json.loads(Path(path).read_text()))


def is_positive(u, profile: UncertaintyProfile):
    """True where ``u`` leaves the closed interval [b_lower, b_upper]."""
    u = np.asarray(u)
    pos = (u > profile.b_upper) | (u < profile.b_lower)
    return bool(pos) if pos.ndim == 0 else pos


@dataclass(frozen=True)
class Verdict:
    faulty: bool
    positives: int
    queries_used: int
    uncertainties: tuple = ()
    flags: tuple = ()
    passes_used: int = 0

    @property
    def decision(self) -> str:
        return "Faulty" if self.faulty else "Healthy"

    def to_dict(self) -> dict:
        return {"decision": self.decision, "positives": self.positives,
                "queries_used": self.queries_used, "passes_used": self.passes_used,
                "queries": [{"uncertainty": u, "positive": f}
                            for u, f in zip(self.uncertainties, self.flags)]}


def query_uncertainties(net: BinaryNetwork, bank: Optional[DropoutBank], inputs: np.ndarray,
                        T: int, stream: RngStream, ctx: Optional[FaultContext] = None,
                        offset: int = 0, inferences_per_query: int = 1) -> np.ndarray:
    """One uncertainty per query; query ``q`` draws from ``stream/(offset+q)``.

    With ``inferences_per_query = k > 1`` the query value is the mean of
    ``k`` consecutive ``T``-pass inferences from that stream.
    """
    inputs = np.atleast_2d(inputs)
    sources = [stream.derive(offset + q) for q in range(len(inputs))]
    return blocked_uncertainties(net, inputs, inferences_per_query, T, bank, ctx,
                                 sources).mean(axis=1)


def fit_profile(net: BinaryNetwork, bank: Optional[DropoutBank], tvs: TestVectorSet,
                R_fit: int = 20, T: int = 20, stream: RngStream = RngStream(0),
                inferences_per_query: int = 1, domain: str = "log") -> UncertaintyProfile:
    """Fit the fault-free profile over raw run-level uncertainties of the test vectors.

    Test vector ``i`` contributes ``R_fit`` values drawn from ``stream/i``.
    """
    if len(tvs) < 2:
        raise SpecificationError("profile fitting needs at least two test vectors")
    if R_fit < 1:
        raise ValueError("R_fit must be at least 1")
    k = inferences_per_query
    sources = [stream.derive(i) for i in range(len(tvs))]
    u = blocked_uncertainties(net, tvs.inputs, R_fit * k, T, bank, None, sources)
    pooled = u.reshape(len(tvs), R_fit, k).mean(axis=2)
    return UncertaintyProfile.from_samples(pooled, domain, k)


def verdict_from_flags(flags, L: int, uncertainties=None, passes_per_query: int = 0) -> Verdict:
    """Early-stop vote over a recorded positive/negative query sequence."""
    flags = np.asarray(flags, dtype=bool)
    if L < 1:
        raise SpecificationError("L must be at least 1")
    hits = np.flatnonzero(flags)
    if len(hits) >= L:
        used = int(hits[L - 1]) + 1
        faulty = True
    else:
        used = len(flags)
        faulty = False
    us = () if uncertainties is None else tuple(float(u) for u in uncertainties[:used])
    return Verdict(faulty, int(flags[:used].sum()), used, us,
                   tuple(bool(f) for f in flags[:used]), used * passes_per_query)


def run_test_session(net_under_test: BinaryNetwork, bank: Optional[DropoutBank],
                     tvs: TestVectorSet, profile: UncertaintyProfile, L: int = 4,
                     T: int = 20, stream: RngStream = RngStream(0),
                     ctx: Optional[FaultContext] = None, record_all: bool = False,
                     inferences_per_query: Optional[int] = None) -> Verdict:
    """Query the test vectors in ranked order; Faulty once ``L`` positives are seen.

    Only query uncertainties are inspected. With ``record_all`` every vector
    is queried and the verdict is replayed from the full record, which gives
    the same answer as the live early-stopping session.
    """
    if not 1 <= L <= len(tvs):
        raise SpecificationError(f"L={L} must lie in [1, {len(tvs)}]")
    k = profile.inferences_per_query if inferences_per_query is None else inferences_per_query
    per_query = k * T
    if record_all:
        u = query_uncertainties(net_under_test, bank, tvs.inputs, T, stream, ctx,
                                inferences_per_query=k)
        v = verdict_from_flags(is_positive(u, profile), L, u, per_query)
        return v
    us: list = []
    flags: list = []
    positives = 0
    for start in range(0, len(tvs), _LIVE_CHUNK):
        block = tvs.inputs[start:start + _LIVE_CHUNK]
        u = query_uncertainties(net_under_test, bank, block, T, stream, ctx,
                                offset=start, inferences_per_query=k)
        for val in u:
            pos = is_positive(val, profile)
            us.append(float(val))
            flags.append(pos)
            positives += pos
            if positives >= L:
                return Verdict(True, positives, len(flags), tuple(us), tuple(flags),
                               len(flags) * per_query)
    return Verdict(False, positives, len(flags), tuple(us), tuple(flags), len(flags) * per_query)


def session_records(net: BinaryNetwork, bank: Optional[DropoutBank], tvs: TestVectorSet,
                    profile: UncertaintyProfile, T: int, streams, ctx=None):
    """Full query records for several sessions: ``(flags, uncertainties)``, each ``(sessions, |tvs|)``.

    Session ``s`` reproduces ``run_test_session(..., stream=streams[s], record_all=True)``.
    """
    k = profile.inferences_per_query
    n = len(tvs)
    rows = np.tile(tvs.inputs, (len(streams), 1))
    sources = [s.derive(q) for s in streams for q in range(n)]
    u = blocked_uncertainties(net, rows, k, T, bank, ctx, sources).mean(axis=1)
    u = u.reshape(len(streams), n)
    return is_positive(u, profile), u
