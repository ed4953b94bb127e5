"""Fault specifications and their materialization into a fault context.

Logic values map onto the binary alphabet as stuck-at-0 -> -1 and
stuck-at-1 -> +1, for weight cells and activation buffers alike. In the
dropout module a stuck-at-0 generator never drops (mask bit 0) and a
stuck-at-1 generator always drops.

Weight faults are persistent for the lifetime of an injection. Buffer
bit-flips and MAC variations are transient: they are redrawn on every
forward pass from the pass's random source.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import CalibrationError, SpecificationError
from .network import (
    BinaryNetwork,
    DropoutBank,
    GenState,
    crossbar_mac,
    sample_masks,
)
from .rng import RandomSource, as_generator

STUCK_AT_0 = -1.0
STUCK_AT_1 = 1.0


class Location(str, Enum):
    WEIGHT_CELLS = "weight_cells"
    BUFFER_MEMORY = "buffer_memory"
    DROPOUT_MODULE = "dropout_module"
    MAC_CONDUCTANCE = "mac_conductance"


class Kind(str, Enum):
    STUCK_AT_0 = "stuck_at_0"
    STUCK_AT_1 = "stuck_at_1"
    BIT_FLIP = "bit_flip"
    ADDITIVE_GAUSSIAN = "additive_gaussian"
    MULTIPLICATIVE_GAUSSIAN = "multiplicative_gaussian"
    DROP_PROB_VARIATION = "drop_prob_variation"


_CELL_KINDS = {Kind.STUCK_AT_0, Kind.STUCK_AT_1, Kind.BIT_FLIP}
LEGAL_KINDS = {
    Location.WEIGHT_CELLS: _CELL_KINDS,
    Location.BUFFER_MEMORY: _CELL_KINDS,
    Location.DROPOUT_MODULE: _CELL_KINDS | {Kind.DROP_PROB_VARIATION},
    Location.MAC_CONDUCTANCE: {Kind.ADDITIVE_GAUSSIAN, Kind.MULTIPLICATIVE_GAUSSIAN},
}
GAUSSIAN_KINDS = {Kind.ADDITIVE_GAUSSIAN, Kind.MULTIPLICATIVE_GAUSSIAN, Kind.DROP_PROB_VARIATION}


@dataclass(frozen=True)
class FaultSpec:
    """What to corrupt, where, and how much.

    ``rate`` is the affected fraction for stuck-at and bit-flip kinds;
    ``sigma`` is the standard deviation for the Gaussian kinds.
    """

    location: Location
    kind: Kind
    rate: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "location", Location(self.location))
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind not in LEGAL_KINDS[self.location]:
            raise SpecificationError(
                f"fault kind {self.kind.value} is not defined for {self.location.value}"
            )
        if not 0.0 <= self.rate <= 1.0:
            raise SpecificationError(f"fault rate must lie in [0, 1], got {self.rate}")
        if self.sigma < 0:
            raise SpecificationError(f"sigma must be non-negative, got {self.sigma}")

    @property
    def is_gaussian(self) -> bool:
        return self.kind in GAUSSIAN_KINDS

    def with_value(self, value: float) -> "FaultSpec":
        """Same fault with its magnitude (rate or sigma, per kind) set to ``value``."""
        if self.is_gaussian:
            return FaultSpec(self.location, self.kind, 0.0, value)
        return FaultSpec(self.location, self.kind, value, 0.0)

    def to_dict(self) -> dict:
        d = {"location": self.location.value, "kind": self.kind.value}
        if self.is_gaussian:
            d["sigma"] = self.sigma
        else:
            d["rate"] = self.rate
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FaultSpec":
        unknown = set(d) - {"location", "kind", "rate", "sigma"}
        if unknown:
            raise SpecificationError(f"unknown fault fields: {sorted(unknown)}")
        try:
            return cls(Location(d["location"]), Kind(d["kind"]),
                       float(d.get("rate", 0.0)), float(d.get("sigma", 0.0)))
        except (KeyError, ValueError) as e:
            if isinstance(e, SpecificationError):
                raise
            raise SpecificationError(f"bad fault spec {d!r}: {e}") from e


@dataclass(frozen=True)
class MacVariation:
    sigma_a: float = 0.0
    sigma_m: float = 0.0


@dataclass(frozen=True)
class BufferPlan:
    stuck_idx: np.ndarray
    stuck_val: np.ndarray
    flip_rate: float = 0.0

    @classmethod
    def empty(cls) -> "BufferPlan":
        return cls(np.zeros(0, dtype=np.intp), np.zeros(0), 0.0)

    @property
    def is_empty(self) -> bool:
        return self.stuck_idx.size == 0 and self.flip_rate == 0.0


def cell_count(rate: float, n: int) -> int:
    """Number of cells hit at ``rate``: ceil(rate * n), robust to float fuzz."""
    if rate <= 0:
        return 0
    return min(n, math.ceil(rate * n - 1e-9))


def perturb_mac(
    y: np.ndarray,
    variation: Optional[MacVariation],
    layer_calibration_std: float,
    source: Optional[RandomSource] = None,
    *,
    eps_m: Optional[np.ndarray] = None,
    eps_a: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Apply y' = y * (1 + eps_m) + eps_a * calibration_std columnwise.

    Noise is drawn from ``source`` unless passed in precomputed.
    """
    if variation is None or (variation.sigma_a == 0 and variation.sigma_m == 0):
        return y
    if variation.sigma_a > 0 and not layer_calibration_std > 0:
        raise CalibrationError("additive MAC variation needs a positive calibration std")
    if eps_m is None or eps_a is None:
        gen = as_generator(source)
        eps_m = gen.normal(0.0, variation.sigma_m, np.shape(y))
        eps_a = gen.normal(0.0, variation.sigma_a, np.shape(y))
    return y * (1.0 + eps_m) + eps_a * layer_calibration_std


def apply_buffer_faults(
    a: np.ndarray,
    plan: Optional[BufferPlan],
    source: Optional[RandomSource] = None,
    *,
    flip: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Stuck overrides first, then independent per-position flips on the rest."""
    if plan is None or plan.is_empty:
        return a
    out = np.array(a, dtype=np.float64, copy=True)
    if plan.stuck_idx.size:
        out[..., plan.stuck_idx] = plan.stuck_val
    if plan.flip_rate > 0:
        if flip is None:
            flip = as_generator(source).random(out.shape) < plan.flip_rate
        else:
            flip = np.array(flip, dtype=bool, copy=True)
        flip[..., plan.stuck_idx] = False
        out = np.where(flip, -out, out)
    return out


@dataclass(frozen=True)
class FaultContext:
    """A materialized corruption plan for one injection.

    ``weight_overrides[l]`` is ``(flat_indices, values)`` into layer ``l``'s
    weight matrix or ``None``. ``dropout_bank`` replaces the healthy bank
    when dropout-module faults are present. ``noise_seed``, when set, keys
    the transient per-pass noise separately from the dropout masks, so two
    injections of the same transient fault see the same masks but different
    noise.
    """

    weight_overrides: tuple = ()
    buffer_plans: tuple = ()
    mac_variation: Optional[MacVariation] = None
    calibration_std: Optional[tuple] = None
    dropout_bank: Optional[DropoutBank] = None
    noise_seed: Optional[int] = None

    @classmethod
    def clean(cls) -> "FaultContext":
        return cls()

    @property
    def is_clean(self) -> bool:
        return (
            all(w is None for w in self.weight_overrides)
            and all(b is None or b.is_empty for b in self.buffer_plans)
            and (self.mac_variation is None
                 or (self.mac_variation.sigma_a == 0 and self.mac_variation.sigma_m == 0))
            and self.dropout_bank is None
        )

    def bank_for(self, bank: DropoutBank) -> DropoutBank:
        return bank if self.dropout_bank is None else self.dropout_bank

    def _plan(self, i: int) -> Optional[BufferPlan]:
        if i < len(self.buffer_plans):
            return self.buffer_plans[i]
        return None

    @cached_property
    def _weights_cache(self) -> dict:
        return {}

    def weights(self, net: BinaryNetwork) -> list[np.ndarray]:
        key = id(net)
        cached = self._weights_cache.get(key)
        if cached is not None and cached[0] is net:
            return cached[1]
        out = []
        for i, layer in enumerate(net.layers):
            ov = self.weight_overrides[i] if i < len(self.weight_overrides) else None
            if ov is None:
                out.append(layer.weights)
            else:
                w = layer.weights.copy()
                w.flat[ov[0]] = ov[1]
                out.append(w)
        self._weights_cache[key] = (net, out)
        return out

    def _mac_active(self) -> bool:
        v = self.mac_variation
        return v is not None and (v.sigma_a > 0 or v.sigma_m > 0)

    def draw_noise(self, net: BinaryNetwork, gen: Optional[np.random.Generator], rows: int) -> list:
        """Per-layer transient randomness for ``rows`` passes, in a fixed draw order."""
        noise: list = []
        mac = self._mac_active()
        needs = mac or any(p is not None and p.flip_rate > 0 for p in self.buffer_plans)
        if needs and gen is not None and self.noise_seed is not None:
            gen = np.random.default_rng([self.noise_seed, int(gen.integers(2**63))])
        for i, layer in enumerate(net.layers):
            plan = self._plan(i)
            flips = plan is not None and plan.flip_rate > 0
            if not (mac or flips):
                noise.append(None)
                continue
            if gen is None:
                raise ValueError("this fault context needs a random source for each pass")
            n: dict = {}
            shape = (rows, layer.out_dim)
            if mac:
                n["eps_m"] = gen.normal(0.0, self.mac_variation.sigma_m, shape)
                n["eps_a"] = gen.normal(0.0, self.mac_variation.sigma_a, shape)
            if flips:
                n["flip"] = gen.random(shape) < plan.flip_rate
            noise.append(n)
        return noise

    def mac_hook(self, i: int, noise):
        if not self._mac_active():
            return None
        std = self.calibration_std[i] if self.calibration_std is not None else 0.0
        var = self.mac_variation
        return lambda y: perturb_mac(y, var, std, eps_m=noise["eps_m"], eps_a=noise["eps_a"])

    def buffer_hook(self, i: int, noise):
        plan = self._plan(i)
        if plan is None or plan.is_empty:
            return None
        flip = None if noise is None else noise.get("flip")
        return lambda a: apply_buffer_faults(a, plan, flip=flip)


def inject(
    net: BinaryNetwork,
    bank: DropoutBank,
    spec: FaultSpec,
    source: RandomSource,
    calibration_std: Optional[Sequence[float]] = None,
) -> FaultContext:
    """Materialize ``spec`` against ``net``/``bank`` using randomness from ``source``."""
    gen = as_generator(source)
    n_layers = len(net.layers)
    loc, kind = spec.location, spec.kind

    if loc is Location.WEIGHT_CELLS:
        sizes = [l.weights.size for l in net.layers]
        k = cell_count(spec.rate, sum(sizes))
        if k == 0:
            return FaultContext.clean()
        picked = np.sort(gen.choice(sum(sizes), size=k, replace=False))
        offsets = np.cumsum([0] + sizes)
        overrides = []
        for i, layer in enumerate(net.layers):
            sel = picked[(picked >= offsets[i]) & (picked < offsets[i + 1])] - offsets[i]
            if sel.size == 0:
                overrides.append(None)
                continue
            if kind is Kind.STUCK_AT_0:
                vals = np.full(sel.size, STUCK_AT_0)
            elif kind is Kind.STUCK_AT_1:
                vals = np.full(sel.size, STUCK_AT_1)
            else:
                vals = -layer.weights.flat[sel]
            overrides.append((sel, vals))
        return FaultContext(weight_overrides=tuple(overrides))

    if loc is Location.BUFFER_MEMORY:
        widths = net.hidden_widths
        plans: list = [None] * n_layers
        if kind is Kind.BIT_FLIP:
            if spec.rate == 0:
                return FaultContext.clean()
            for i in range(len(widths)):
                plans[i] = BufferPlan(np.zeros(0, dtype=np.intp), np.zeros(0), spec.rate)
            return FaultContext(buffer_plans=tuple(plans), noise_seed=_noise_seed(gen))
        k = cell_count(spec.rate, sum(widths))
        if k == 0:
            return FaultContext.clean()
        picked = np.sort(gen.choice(sum(widths), size=k, replace=False))
        value = STUCK_AT_0 if kind is Kind.STUCK_AT_0 else STUCK_AT_1
        offsets = np.cumsum([0] + widths)
        for i in range(len(widths)):
            sel = picked[(picked >= offsets[i]) & (picked < offsets[i + 1])] - offsets[i]
            if sel.size:
                plans[i] = BufferPlan(sel.astype(np.intp), np.full(sel.size, value))
        return FaultContext(buffer_plans=tuple(plans))

    if loc is Location.DROPOUT_MODULE:
        g = bank.n_generators
        if kind is Kind.DROP_PROB_VARIATION:
            if spec.sigma == 0:
                return FaultContext.clean()
            p = np.clip(gen.normal(bank.p_effective, spec.sigma), 0.0, 1.0)
            return FaultContext(dropout_bank=bank.replace(p_effective=p))
        k = cell_count(spec.rate, g)
        if k == 0:
            return FaultContext.clean()
        picked = np.sort(gen.choice(g, size=k, replace=False))
        state = bank.state.copy()
        flip_rate = bank.flip_rate.copy()
        if kind is Kind.STUCK_AT_0:
            state[picked] = GenState.STUCK_PASS
        elif kind is Kind.STUCK_AT_1:
            state[picked] = GenState.STUCK_DROP
        else:
            state[picked] = GenState.BIT_FLIP
            flip_rate[picked] = spec.rate
        return FaultContext(dropout_bank=bank.replace(state=state, flip_rate=flip_rate))

    # MAC conductance variation
    if kind is Kind.ADDITIVE_GAUSSIAN:
        variation = MacVariation(sigma_a=spec.sigma)
    else:
        variation = MacVariation(sigma_m=spec.sigma)
    if spec.sigma == 0:
        return FaultContext.clean()
    if variation.sigma_a > 0:
        if calibration_std is None:
            raise CalibrationError("additive MAC variation requires per-layer calibration std")
        if len(calibration_std) != n_layers:
            raise SpecificationError("calibration std must have one entry per layer")
    cal = None if calibration_std is None else tuple(float(s) for s in calibration_std)
    return FaultContext(mac_variation=variation, calibration_std=cal, noise_seed=_noise_seed(gen))


def _noise_seed(gen: np.random.Generator) -> int:
    return int(gen.integers(2**63))


def calibrate_layer_std(
    net: BinaryNetwork,
    inputs: np.ndarray,
    n_inputs: int,
    source: RandomSource,
    bank: Optional[DropoutBank] = None,
) -> list[float]:
    """Population std of clean, dropout-live MAC outputs per layer.

    Uses the first ``n_inputs`` rows of ``inputs`` and one dropout sample each.
    """
    if n_inputs < 30:
        raise ValueError(f"calibration needs at least 30 inputs, got {n_inputs}")
    inputs = np.asarray(inputs, dtype=np.float64)
    if len(inputs) < n_inputs:
        raise ValueError(f"only {len(inputs)} inputs available, {n_inputs} requested")
    if bank is None:
        bank = DropoutBank.healthy(net)
    gen = as_generator(source)
    masks = sample_masks(bank, net, gen, n=n_inputs)
    a = inputs[:n_inputs]
    stds = []
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        y = crossbar_mac(layer.weights, a, masks[i], method=net.method, scale_gamma=net.scale_gamma)
        s = float(np.std(y))
        if not s > 0:
            raise CalibrationError(f"layer {i} MAC outputs are constant; cannot calibrate")
        stds.append(s)
        if i < last:
            z = layer.batch_norm(y)
            a = np.where(z >= 0, 1.0, -1.0)
    return stds
