"""Command-line entry point: ``spinbayes {train,gen-tests,campaign,roc,check}``.

Exit codes: 0 success or Healthy verdict, 1 Faulty verdict, 2 operational
error (bad config, unreadable artifact), 3 specification error.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .atpg import TestVectorSet
from .campaign import (
    FPR_HEADER,
    ROC_HEADER,
    records_from_dict,
    roc_sweep,
    write_csv,
    write_reports,
)
from .config import PipelineConfig, load_config
from .detector import UncertaintyProfile, run_test_session
from .errors import SpecificationError
from .faults import FaultSpec, Kind, calibrate_layer_std, inject
from .network import BinaryNetwork, DropoutBank
from .pipeline import CHECK, EVAL, FAULT, build_dataset, build_kit, campaign, stream, train_model
from .training import Dataset, evaluate_accuracy

MODEL_FILE = "model.json"
DATA_FILE = "dataset.json"
VECTORS_FILE = "test_vectors.json"
PROFILE_FILE = "profile.json"


class CliError(Exception):
    def __init__(self, message: str, code: int = 2):
        super().__init__(message)
        self.code = code


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_manifest(out: Path, command: str, cfg: PipelineConfig, outputs: dict,
                    started: float) -> None:
    _dump(out / "manifest.json", {
        "command": command,
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "versions": {"spinbayes": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "outputs": {k: str(v) for k, v in sorted(outputs.items())},
        "wall_clock_seconds": round(time.time() - started, 3),
    })


def _load(kind: str, loader, path) -> object:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{kind} file not found: {p}")
    try:
        return loader(p)
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as e:
        raise CliError(f"cannot read {kind} file {p}: {e}") from e


def _dataset_for(args, model_path: Path) -> Dataset:
    path = Path(args.data) if args.data else model_path.parent / DATA_FILE
    return _load("dataset", Dataset.load, path)


def _kit(kit_dir) -> tuple[TestVectorSet, UncertaintyProfile]:
    kit = Path(kit_dir)
    tvs = _load("test vector", TestVectorSet.load, kit / VECTORS_FILE)
    prof = _load("profile", UncertaintyProfile.load, kit / PROFILE_FILE)
    return tvs, prof


def cmd_train(args, cfg: PipelineConfig) -> int:
    started = time.time()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = build_dataset(cfg)
    net = train_model(cfg, data)
    ev = stream(cfg, EVAL)
    T = cfg.train.eval_T
    report = {
        "layer_dims": [net.in_dim, *[l.out_dim for l in net.layers]],
        "train_accuracy": evaluate_accuracy(net, data.X_train, data.y_train, T, ev.derive(0)),
        "eval_accuracy": evaluate_accuracy(net, data.X_eval, data.y_eval, T, ev.derive(1)),
        "eval_T": T,
        "eval_seed_path": list(ev.derive(1).path),
        "n_train": len(data.y_train),
        "n_eval": len(data.y_eval),
    }
    paths = {"model": out / MODEL_FILE, "dataset": out / DATA_FILE,
             "report": out / "train_report.json"}
    net.save(paths["model"])
    data.save(paths["dataset"])
    _dump(paths["report"], report)
    _write_manifest(out, "train", cfg, paths, started)
    print(f"eval accuracy {report['eval_accuracy']:.4f} -> {paths['model']}")
    return 0


def cmd_gen_tests(args, cfg: PipelineConfig) -> int:
    started = time.time()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model_path = Path(args.model)
    net = _load("model", BinaryNetwork.load, model_path)
    data = _dataset_for(args, model_path)
    tvs, prof = build_kit(cfg, net, data)
    paths = {"vectors": out / VECTORS_FILE, "profile": out / PROFILE_FILE,
             "report": out / "kit_report.json"}
    tvs.save(paths["vectors"])
    prof.save(paths["profile"])
    # stored bits: one bit per binary input element
    kit_bits = len(tvs) * net.in_dim
    train_bits = len(data.X_train) * data.dim
    report = {
        "n_vectors": len(tvs),
        "kit_bytes_on_disk": sum(paths[k].stat().st_size for k in ("vectors", "profile")),
        "vector_storage_bits": kit_bits,
        "training_storage_bits": train_bits,
        "fraction_of_training_data": kit_bits / train_bits,
        "profile": prof.to_dict(),
    }
    _dump(paths["report"], report)
    _write_manifest(out, "gen-tests", cfg, paths, started)
    print(f"{len(tvs)} test vectors ({100 * report['fraction_of_training_data']:.2f}% of "
          f"training data), bounds [{prof.b_lower:.3e}, {prof.b_upper:.3e}]")
    return 0


def _verdict_line(p) -> str:
    cov = "n/a" if p.n_critical == 0 else f"{p.coverage_critical:.3f}"
    return (f"{p.sweep} value={p.value:g} acc={p.mean_accuracy:.4f} "
            f"critical={p.n_critical}/{p.n_critical + p.n_benign} coverage={cov}")


def cmd_campaign(args, cfg: PipelineConfig) -> int:
    started = time.time()
    model_path = Path(args.model)
    net = _load("model", BinaryNetwork.load, model_path)
    data = _dataset_for(args, model_path)
    tvs, prof = _kit(args.kit)
    camp = cfg.campaign
    if args.threads is not None:
        camp = replace(camp, threads=args.threads)
    result = campaign(cfg, net, data, tvs, prof, camp)
    paths = write_reports(result, args.out_dir)
    _write_manifest(Path(args.out_dir), "campaign", cfg, paths, started)
    for p in result.points:
        print(_verdict_line(p))
    print(f"fpr at L={camp.L}: {result.fpr_at(camp.L):.3f} over {len(result.control_flags)} sessions")
    return 0


def cmd_roc(args, cfg: PipelineConfig) -> int:
    started = time.time()
    path = Path(args.records)
    recs, control, n, sweeps = _load("records", lambda p: records_from_dict(json.loads(p.read_text())), path)
    L_values = args.L or list(cfg.campaign.L_values)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    scopes = [("all", recs)] + [(s, [r for r in recs if r.sweep == s]) for s in sweeps]
    for scope, rs in scopes:
        if scope != "all" and not rs:
            continue
        for p in roc_sweep(rs, control, L_values, n):
            rows.append([scope, p.L, p.tpr_critical, p.tpr_benign, p.fpr])
    paths = {"roc": out / "roc.csv", "fpr": out / "fpr.csv"}
    write_csv(paths["roc"], ROC_HEADER, rows)
    counts = control.sum(axis=1)
    write_csv(paths["fpr"], FPR_HEADER,
               [[L, float((counts >= L).mean()) if len(counts) else float("nan"), len(counts)]
                for L in L_values])
    _write_manifest(out, "roc", cfg, paths, started)
    for row in rows:
        if row[0] == "all":
            print(f"L={row[1]} tpr_critical={row[2]:.3f} fpr={row[4]:.3f}")
    return 0


def _fault_spec(text: str) -> FaultSpec:
    src = text if text.lstrip().startswith("{") else None
    if src is None:
        p = Path(text)
        if not p.is_file():
            raise CliError(f"fault file not found: {p}")
        src = p.read_text()
    try:
        return FaultSpec.from_dict(json.loads(src))
    except (ValueError, KeyError, TypeError) as e:
        raise CliError(f"bad fault spec: {e}") from e


def cmd_check(args, cfg: PipelineConfig) -> int:
    net = _load("model", BinaryNetwork.load, args.model)
    tvs, prof = _kit(args.kit)
    L = args.L if args.L is not None else cfg.check.L
    T = args.T if args.T is not None else cfg.check.T
    bank = DropoutBank.healthy(net)
    ctx = None
    if args.fault:
        spec = _fault_spec(args.fault)
        cal = None
        if spec.kind is Kind.ADDITIVE_GAUSSIAN:
            cal = calibrate_layer_std(net, tvs.inputs, len(tvs), stream(cfg, FAULT).derive(1), bank)
        ctx = inject(net, bank, spec, stream(cfg, FAULT).derive(0), cal)
    v = run_test_session(net, bank, tvs, prof, L, T, stream(cfg, CHECK), ctx)
    payload = {"L": L, "T": T, "seed": cfg.seed, **v.to_dict()}
    print(json.dumps(payload, sort_keys=True))
    return 1 if v.faulty else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spinbayes", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="JSON config file (defaults used when omitted)")
        p.add_argument("--seed", type=int, help="master seed, overrides the config")
        if out:
            p.add_argument("--out-dir", default=".", help="output directory")
        return p

    p = common(sub.add_parser("train", help="train a model and write model.json"))
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("gen-tests", help="generate test vectors and the uncertainty profile"))
    p.add_argument("--model", required=True)
    p.add_argument("--data", help="dataset JSON (default: next to the model)")
    p.set_defaults(func=cmd_gen_tests)

    p = common(sub.add_parser("campaign", help="run a fault-injection campaign"))
    p.add_argument("--model", required=True)
    p.add_argument("--kit", required=True, help="directory holding test_vectors.json and profile.json")
    p.add_argument("--data", help="dataset JSON (default: next to the model)")
    p.add_argument("--threads", type=int, help="concurrent injections")
    p.set_defaults(func=cmd_campaign)

    p = common(sub.add_parser("roc", help="replay ROC/FPR from campaign records"))
    p.add_argument("--records", required=True, help="records.json written by campaign")
    p.add_argument("--L", type=int, nargs="+", help="vote thresholds (default from config)")
    p.set_defaults(func=cmd_roc)

    p = common(sub.add_parser("check", help="run one live test session"), out=False)
    p.add_argument("--model", required=True)
    p.add_argument("--kit", required=True)
    p.add_argument("--L", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--fault", help="fault spec JSON (inline or file) injected before testing")
    p.set_defaults(func=cmd_check)
    return ap


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_seed(args.seed)
        return args.func(args, cfg)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except SpecificationError as e:
        print(f"specification error: {e}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
