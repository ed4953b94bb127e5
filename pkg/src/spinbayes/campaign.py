"""Monte Carlo fault-injection campaigns and their reports.

For every sweep point, ``M`` injections are drawn. Each injection measures
faulty Bayesian accuracy on a fixed evaluation subset, is classified benign
or critical against the clean accuracy, and runs one recorded test session
(all queries evaluated) so that verdicts at any vote threshold ``L`` can be
replayed exactly. A separate set of fault-free control sessions gives the
false-positive rate.

Stream layout under the master seed: ``/1`` evaluation passes (shared by
the clean and every faulty evaluation), ``/2/c`` control session ``c``,
``/3`` MAC calibration, ``/4`` evaluation-subset choice, ``/5/s/v/m``
injection ``m`` of value ``v`` in sweep ``s`` (``/0`` materializes the
fault, ``/1`` drives its test session).
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .atpg import TestVectorSet
from .detector import UncertaintyProfile, run_test_session, session_records
from .errors import ConfigurationError, SpecificationError
from .faults import FaultSpec, Kind, Location, calibrate_layer_std, inject
from .network import BinaryNetwork, DropoutBank
from .rng import RngStream
from .training import evaluate_accuracy

EVAL, CONTROL, CALIB, SUBSET, SWEEPS = 1, 2, 3, 4, 5


@dataclass(frozen=True)
class Sweep:
    name: str
    fault: FaultSpec
    values: tuple

    def to_dict(self) -> dict:
        d = self.fault.to_dict()
        d.pop("rate", None)
        d.pop("sigma", None)
        return {"name": self.name, **d, "values": list(self.values)}

    @classmethod
    def from_dict(cls, d: dict) -> "Sweep":
        try:
            fault = FaultSpec(Location(d["location"]), Kind(d["kind"]))
            return cls(str(d["name"]), fault, tuple(float(v) for v in d["values"]))
        except (KeyError, ValueError) as e:
            raise ConfigurationError(f"bad sweep entry {d!r}: {e}") from e


def _sweep(name, location, kind, values) -> Sweep:
    return Sweep(name, FaultSpec(location, kind), tuple(values))


RATE_GRID = (0.0, 0.05, 0.10, 0.20, 0.30)
SIGMA_GRID = (0.0, 0.05, 0.1, 0.2, 0.3)

DEFAULT_SWEEPS = (
    _sweep("weight_bit_flip", Location.WEIGHT_CELLS, Kind.BIT_FLIP, RATE_GRID),
    _sweep("weight_stuck_at_0", Location.WEIGHT_CELLS, Kind.STUCK_AT_0, RATE_GRID),
    _sweep("weight_stuck_at_1", Location.WEIGHT_CELLS, Kind.STUCK_AT_1, RATE_GRID),
    _sweep("buffer_bit_flip", Location.BUFFER_MEMORY, Kind.BIT_FLIP, RATE_GRID),
    _sweep("buffer_stuck_at_0", Location.BUFFER_MEMORY, Kind.STUCK_AT_0, RATE_GRID),
    _sweep("buffer_stuck_at_1", Location.BUFFER_MEMORY, Kind.STUCK_AT_1, RATE_GRID),
    _sweep("mac_additive", Location.MAC_CONDUCTANCE, Kind.ADDITIVE_GAUSSIAN, SIGMA_GRID),
    _sweep("mac_multiplicative", Location.MAC_CONDUCTANCE, Kind.MULTIPLICATIVE_GAUSSIAN, SIGMA_GRID),
    _sweep("dropout_stuck_at_0", Location.DROPOUT_MODULE, Kind.STUCK_AT_0, (0.0, 0.05, 0.10, 0.20)),
    _sweep("dropout_stuck_at_1", Location.DROPOUT_MODULE, Kind.STUCK_AT_1, (0.0, 0.05, 0.10, 0.20)),
    _sweep("dropout_bit_flip", Location.DROPOUT_MODULE, Kind.BIT_FLIP, (0.0, 0.05, 0.10, 0.20)),
    _sweep("dropout_p_variation", Location.DROPOUT_MODULE, Kind.DROP_PROB_VARIATION,
           (0.0, 0.05, 0.10, 0.20)),
)


@dataclass(frozen=True)
class CampaignConfig:
    sweeps: tuple = DEFAULT_SWEEPS
    injections: int = 100
    eval_size: int = 200
    T_acc: int = 20
    T: int = 20
    delta_acc: float = 0.01
    L: int = 4
    L_values: tuple = tuple(range(1, 11))
    control_sessions: Optional[int] = None
    calibration_inputs: int = 256
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.injections < 1:
            raise ConfigurationError("injections (M) must be at least 1")
        if not self.delta_acc > 0:
            raise ConfigurationError("delta_acc must be positive")
        if self.L < 1 or any(l < 1 for l in self.L_values):
            raise ConfigurationError("vote thresholds must be at least 1")
        if self.threads < 1:
            raise ConfigurationError("threads must be at least 1")

    @property
    def n_control(self) -> int:
        return self.injections if self.control_sessions is None else self.control_sessions

    def to_dict(self) -> dict:
        return {
            "sweeps": [s.to_dict() for s in self.sweeps],
            "injections": self.injections,
            "eval_size": self.eval_size,
            "T_acc": self.T_acc,
            "T": self.T,
            "delta_acc": self.delta_acc,
            "L": self.L,
            "L_values": list(self.L_values),
            "control_sessions": self.control_sessions,
            "calibration_inputs": self.calibration_inputs,
            "seed": self.seed,
            "threads": self.threads,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignConfig":
        known = set(cls().to_dict())
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown campaign config keys: {sorted(unknown)}")
        kw = dict(d)
        if "sweeps" in kw:
            kw["sweeps"] = tuple(Sweep.from_dict(s) for s in kw["sweeps"])
        if "L_values" in kw:
            kw["L_values"] = tuple(int(l) for l in kw["L_values"])
        return cls(**kw)


def classify_fault(acc_clean: float, acc_faulty: float, delta_acc: float) -> str:
    """``"Critical"`` when accuracy drops by strictly more than ``delta_acc``."""
    for a in (acc_clean, acc_faulty):
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"accuracy {a} outside [0, 1]")
    return "Critical" if (acc_clean - acc_faulty) > delta_acc else "Benign"


@dataclass(frozen=True)
class InjectionRecord:
    sweep: str
    value: float
    m: int
    accuracy: float
    critical: bool
    flags: np.ndarray

    def detected(self, L: int) -> bool:
        return int(self.flags.sum()) >= L


@dataclass(frozen=True)
class PointResult:
    sweep: str
    location: str
    kind: str
    value: float
    clean_accuracy: float
    mean_accuracy: float
    std_accuracy: float
    n_benign: int
    n_critical: int
    detected_benign: int
    detected_critical: int
    fpr: float

    @property
    def coverage_critical(self) -> float:
        return self.detected_critical / self.n_critical if self.n_critical else math.nan

    @property
    def coverage_benign(self) -> float:
        return self.detected_benign / self.n_benign if self.n_benign else math.nan


@dataclass(frozen=True)
class RocPoint:
    L: int
    tpr_critical: float
    tpr_benign: float
    fpr: float


def _rate(hits: int, n: int) -> float:
    return hits / n if n else math.nan


def roc_sweep(records: Sequence[InjectionRecord], control_flags: np.ndarray,
              L_values: Sequence[int], n_queries: int) -> list[RocPoint]:
    """Replay recorded query sequences at each vote threshold."""
    control_counts = np.asarray(control_flags, dtype=bool).reshape(-1, n_queries).sum(axis=1)
    crit = np.array([r.flags.sum() for r in records if r.critical], dtype=int)
    benign = np.array([r.flags.sum() for r in records if not r.critical], dtype=int)
    out = []
    for L in L_values:
        if not 1 <= L <= n_queries:
            raise SpecificationError(f"L={L} must lie in [1, {n_queries}]")
        out.append(RocPoint(
            int(L),
            _rate(int((crit >= L).sum()), len(crit)),
            _rate(int((benign >= L).sum()), len(benign)),
            _rate(int((control_counts >= L).sum()), len(control_counts)),
        ))
    return out


@dataclass
class CampaignResult:
    config: CampaignConfig
    clean_accuracy: float
    n_queries: int
    points: list = field(default_factory=list)
    records: list = field(default_factory=list)
    control_flags: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=bool))

    def fpr_at(self, L: int) -> float:
        counts = self.control_flags.sum(axis=1)
        return _rate(int((counts >= L).sum()), len(counts))

    def records_for(self, sweep: str, value: Optional[float] = None) -> list:
        return [r for r in self.records
                if r.sweep == sweep and (value is None or r.value == value)]

    def roc(self, L_values: Optional[Sequence[int]] = None, sweep: Optional[str] = None,
            value: Optional[float] = None) -> list[RocPoint]:
        recs = self.records if sweep is None else self.records_for(sweep, value)
        return roc_sweep(recs, self.control_flags, L_values or self.config.L_values, self.n_queries)


def eval_subset(n_eval: int, size: int, stream: RngStream) -> np.ndarray:
    if size >= n_eval:
        return np.arange(n_eval)
    return np.sort(stream.generator().choice(n_eval, size=size, replace=False))


def run_campaign(net: BinaryNetwork, X_eval: np.ndarray, y_eval: np.ndarray,
                 tvs: TestVectorSet, profile: UncertaintyProfile, cfg: CampaignConfig,
                 bank: Optional[DropoutBank] = None,
                 calibration_X: Optional[np.ndarray] = None,
                 root: Optional[RngStream] = None) -> CampaignResult:
    """Run every sweep point of ``cfg`` and the fault-free control sessions.

    ``calibration_X`` (usually training inputs) feeds the per-layer MAC std
    used by additive variation; it defaults to ``X_eval``. ``root`` replaces
    ``RngStream(cfg.seed)`` as the master stream.
    """
    if cfg.L > len(tvs) or max(cfg.L_values, default=1) > len(tvs):
        raise SpecificationError(f"vote thresholds exceed the {len(tvs)} stored test vectors")
    if bank is None:
        bank = DropoutBank.healthy(net)
    master = RngStream(cfg.seed) if root is None else root
    sub = eval_subset(len(X_eval), cfg.eval_size, master.derive(SUBSET))
    Xe, ye = np.asarray(X_eval)[sub], np.asarray(y_eval)[sub]
    eval_stream = master.derive(EVAL)
    clean_acc = evaluate_accuracy(net, Xe, ye, cfg.T_acc, eval_stream, bank)

    needs_calibration = any(s.fault.kind is Kind.ADDITIVE_GAUSSIAN for s in cfg.sweeps)
    calibration = None
    if needs_calibration:
        cal_X = X_eval if calibration_X is None else calibration_X
        n_cal = min(cfg.calibration_inputs, len(cal_X))
        calibration = calibrate_layer_std(net, cal_X, n_cal, master.derive(CALIB), bank)

    control_streams = [master.derive(CONTROL).derive(c) for c in range(cfg.n_control)]
    control_flags, _ = session_records(net, bank, tvs, profile, cfg.T, control_streams)

    def one(job):
        s_idx, v_idx, m, sweep, value = job
        inj = master.derive(SWEEPS).derive(s_idx).derive(v_idx).derive(m)
        ctx = inject(net, bank, sweep.fault.with_value(value), inj.derive(0), calibration)
        acc = evaluate_accuracy(net, Xe, ye, cfg.T_acc, eval_stream, bank, ctx)
        flags, _ = session_records(net, bank, tvs, profile, cfg.T, [inj.derive(1)], ctx)
        critical = classify_fault(clean_acc, acc, cfg.delta_acc) == "Critical"
        return InjectionRecord(sweep.name, value, m, acc, critical, flags[0])

    jobs = [
        (s_idx, v_idx, m, sweep, value)
        for s_idx, sweep in enumerate(cfg.sweeps)
        for v_idx, value in enumerate(sweep.values)
        for m in range(cfg.injections)
    ]
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            records = list(pool.map(one, jobs))
    else:
        records = [one(j) for j in jobs]

    result = CampaignResult(cfg, clean_acc, len(tvs), [], records, control_flags)
    fpr = result.fpr_at(cfg.L)
    for sweep in cfg.sweeps:
        for value in sweep.values:
            recs = result.records_for(sweep.name, value)
            accs = np.array([r.accuracy for r in recs])
            crit = [r for r in recs if r.critical]
            ben = [r for r in recs if not r.critical]
            result.points.append(PointResult(
                sweep.name, sweep.fault.location.value, sweep.fault.kind.value, value,
                clean_acc, float(accs.mean()), float(accs.std()),
                len(ben), len(crit),
                sum(r.detected(cfg.L) for r in ben), sum(r.detected(cfg.L) for r in crit),
                fpr,
            ))
    return result


def estimate_fpr(net: BinaryNetwork, bank: Optional[DropoutBank], tvs: TestVectorSet,
                 profile: UncertaintyProfile, L: int, trials: int,
                 stream: RngStream, T: int = 20) -> float:
    """Fraction of fault-free live sessions (trial ``k`` on ``stream/k``) declared Faulty."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    faulty = sum(
        run_test_session(net, bank, tvs, profile, L, T, stream.derive(k)).faulty
        for k in range(trials)
    )
    return faulty / trials


# -- reports -------------------------------------------------------------

ACCURACY_HEADER = ["sweep", "location", "kind", "value", "clean_accuracy",
                   "mean_accuracy", "std_accuracy"]
COVERAGE_HEADER = ["sweep", "location", "kind", "value", "n_benign", "n_critical",
                   "detected_benign", "detected_critical", "coverage_critical",
                   "coverage_benign", "fpr", "L"]
FPR_HEADER = ["L", "fpr", "sessions"]
ROC_HEADER = ["scope", "L", "tpr_critical", "tpr_benign", "fpr"]


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def roc_rows(result: CampaignResult, L_values: Optional[Sequence[int]] = None) -> list:
    rows = []
    scopes = [("all", None)] + [(s.name, s.name) for s in result.config.sweeps]
    for scope, sweep in scopes:
        if sweep is not None and not result.records_for(sweep):
            continue
        for p in result.roc(L_values, sweep):
            rows.append([scope, p.L, p.tpr_critical, p.tpr_benign, p.fpr])
    return rows


def records_to_dict(result: CampaignResult) -> dict:
    return {
        "format": "spinbayes.campaign_records",
        "version": 1,
        "n_queries": result.n_queries,
        "L": result.config.L,
        "sweeps": [s.name for s in result.config.sweeps],
        "control": ["".join("1" if f else "0" for f in row) for row in result.control_flags],
        "injections": [
            {"sweep": r.sweep, "value": r.value, "m": r.m, "accuracy": r.accuracy,
             "critical": r.critical, "flags": "".join("1" if f else "0" for f in r.flags)}
            for r in result.records
        ],
    }


def records_from_dict(d: dict):
    """``(records, control_flags, n_queries, sweep_names)`` from a records document."""
    if d.get("format") != "spinbayes.campaign_records":
        raise ValueError("not a campaign records document")
    n = int(d["n_queries"])

    def bits(s):
        if len(s) != n or set(s) - {"0", "1"}:
            raise ValueError("malformed query record")
        return np.array([c == "1" for c in s], dtype=bool)

    control = np.array([bits(s) for s in d["control"]], dtype=bool).reshape(-1, n)
    recs = [InjectionRecord(r["sweep"], float(r["value"]), int(r["m"]), float(r["accuracy"]),
                            bool(r["critical"]), bits(r["flags"])) for r in d["injections"]]
    return recs, control, n, list(d.get("sweeps", []))


def write_reports(result: CampaignResult, out_dir) -> dict:
    """Write the CSV/JSON report set; returns ``{name: path}``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "accuracy_sweep": out / "accuracy_sweep.csv",
        "coverage": out / "coverage.csv",
        "fpr": out / "fpr.csv",
        "roc": out / "roc.csv",
        "summary": out / "summary.json",
        "records": out / "records.json",
    }
    pts = result.points
    write_csv(paths["accuracy_sweep"], ACCURACY_HEADER,
               [[p.sweep, p.location, p.kind, p.value, p.clean_accuracy,
                 p.mean_accuracy, p.std_accuracy] for p in pts])
    write_csv(paths["coverage"], COVERAGE_HEADER,
               [[p.sweep, p.location, p.kind, p.value, p.n_benign, p.n_critical,
                 p.detected_benign, p.detected_critical, p.coverage_critical,
                 p.coverage_benign, p.fpr, result.config.L] for p in pts])
    n_ctrl = len(result.control_flags)
    write_csv(paths["fpr"], FPR_HEADER,
               [[L, result.fpr_at(L), n_ctrl] for L in result.config.L_values])
    write_csv(paths["roc"], ROC_HEADER, roc_rows(result))
    summary = {
        "clean_accuracy": result.clean_accuracy,
        "n_queries": result.n_queries,
        "L": result.config.L,
        "fpr": _json_float(result.fpr_at(result.config.L)) if n_ctrl else None,
        # thread count is an execution knob and never changes results
        "config": {k: v for k, v in result.config.to_dict().items() if k != "threads"},
        "points": [
            {"sweep": p.sweep, "value": p.value, "mean_accuracy": p.mean_accuracy,
             "n_critical": p.n_critical, "n_benign": p.n_benign,
             "coverage_critical": _json_float(p.coverage_critical),
             "coverage_benign": _json_float(p.coverage_benign)}
            for p in pts
        ],
    }
    paths["summary"].write_text(json.dumps(summary, indent=2) + "\n")
    paths["records"].write_text(json.dumps(records_to_dict(result)) + "\n")
    return paths


def _json_float(x: float):
    return None if math.isnan(x) else x
