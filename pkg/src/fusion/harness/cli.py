"""Command-line entry point: ``fusion <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from ..datagen import SyntheticConfig, gen_lq_toy, gen_synthetic
from ..io import load_dataset, save_dataset
from .config import ExperimentConfig, derive_seed, preset

log = logging.getLogger("fusion")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    level = os.environ.get("FUSION_LOG", "error").lower()
    if level not in LOG_LEVELS:
        raise SystemExit(f"FUSION_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n"


# --- gen-data ----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    kw = {}
    if args.config:
        kw.update(json.loads(Path(args.config).read_text()))
    if args.preset == "benchmark":
        kw.setdefault("n_rct", 1000)
        kw.setdefault("n_obs", 4000)
    if args.dial is not None:
        kw["overlap_dial"] = args.dial
    kw["seed"] = args.seed
    cfg = SyntheticConfig(**kw)
    data = gen_synthetic(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    side = save_dataset(data, out)
    print(_dump({"file": str(out), **side["summary"]}), end="")
    return 0


# --- run -----------------------------------------------------------------------

def _experiment(args) -> ExperimentConfig:
    if args.config:
        exp = ExperimentConfig.load(args.config)
    else:
        exp = preset(args.preset or "benchmark")
    if args.seed is not None:
        exp.master_seed = args.seed
    if args.dial is not None:
        exp.dials = [float(d) for d in args.dial]
    return exp


def cmd_run(args) -> int:
    from .experiments import run_grid, write_report

    exp = _experiment(args)
    out = Path(args.out or exp.out or "fusion_out")
    only = set(args.only) if args.only else None
    rows, failures = run_grid(exp, str(out), jobs=args.jobs, only_methods=only)
    write_report(exp, rows, failures, out)
    table = out / "table.txt"
    if table.exists():
        print(table.read_text(), end="")
    for f in failures:
        print(f"FAILED {f['cell']}: {f['error']}", file=sys.stderr)
    return 1 if failures else 0


# --- sweep-alpha -----------------------------------------------------------------

def cmd_sweep_alpha(args) -> int:
    alphas = [float(a) for a in args.alphas.split(",")]
    out = Path(args.out or "alpha_sweep.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.lq:
        from ..estimators.lq import alpha_path, path_constants

        toy = gen_lq_toy(args.lq_dim, args.lq_constraints, seed=args.seed)
        rows = alpha_path(toy, alphas)
        c = path_constants(toy, max(alphas))
        for r in rows:
            r["path_bound"] = c.path_slope * r["alpha"]
            r["g_lower_bound"] = rows[0]["g_norm"] - c.g_slope * r["alpha"]
    else:
        from ..estimators.training import TrainConfig, alpha_sweep
        from .experiments import make_dataset, split_heldout

        exp = _experiment(args)
        dial = exp.dials[0]
        data = make_dataset(exp.dataset, dial, 0, exp.master_seed)
        train_set, test_set = split_heldout(data, exp.heldout_frac,
                                            derive_seed(exp.master_seed, "split-sweep"))
        cfg = TrainConfig.from_dict({**exp.train, "seed": derive_seed(exp.master_seed, "sweep")})
        rows = alpha_sweep(train_set, alphas, cfg, eval_data=test_set)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) for k, v in r.items()})
    print(out.read_text(), end="")
    return 0


# --- verify-theory ---------------------------------------------------------------

def cmd_verify_theory(args) -> int:
    from .theory import run_suite

    verdicts = run_suite(args.only, epsilon=args.epsilon)
    out = Path(args.out or "verify_out")
    out.mkdir(parents=True, exist_ok=True)
    (out / "verdicts.json").write_text(_dump(verdicts))
    hard_fail = False
    for v in verdicts:
        status = "PASS" if v["passed"] else ("FAIL" if v["hard"] else "SOFT-FAIL")
        hard_fail |= v["hard"] and not v["passed"]
        extra = f"  [{v['verdict']}]" if "verdict" in v else ""
        print(f"{status:9s} {v['name']}{extra}")
    return 1 if hard_fail else 0


# --- audit-feasibility -------------------------------------------------------------

def cmd_audit_feasibility(args) -> int:
    from ..estimators.training import train
    from ..discrepancy import dataset_mmd
    from ..feasibility import (FeasibilityAudit, explicit_gap_constant, feasibility_gap,
                               info_preservation, representation_gap)
    from .experiments import make_dataset, split_heldout

    exp = _experiment(args)
    out = Path(args.out or "audit_out")
    out.mkdir(parents=True, exist_ok=True)
    audits = []
    for s in exp.seeds:
        dial = exp.dials[0]
        data = make_dataset(exp.dataset, dial, s, exp.master_seed)
        train_set, test_set = split_heldout(data, exp.heldout_frac,
                                            derive_seed(exp.master_seed, f"split:{dial!r}:{s}"))
        cfg = exp.train_config("pd", derive_seed(exp.master_seed, f"audit:{s}"))
        bundle, _ = train(train_set, cfg, "pd")
        rct = train_set.rct()
        gap_raw = feasibility_gap(train_set, "raw_linear").value
        gap_phi = representation_gap(train_set, bundle.represent(rct.X))
        c0 = None
        if data.structural is not None and data.structural.any():
            grid = [lambda X, T, b=b: b * T for b in np.linspace(-3, 3, 50)]
            c0 = explicit_gap_constant(train_set, model_grid=grid)
        audit = FeasibilityAudit(
            gap_raw=gap_raw, gap_phi=gap_phi, c0_hat=c0,
            eps_ov=dataset_mmd(test_set, bundle.represent(test_set.X)).value,
            eps_info=info_preservation(train_set, test_set, bundle.represent).clamped,
            extra={"seed": s, "dial": dial, "gap_raw_net": feasibility_gap(
                train_set, "raw_net", restarts=args.restarts).value})
        audits.append(json.loads(audit.to_json()))
        print(f"seed {s}: gap_raw={gap_raw:.3g} gap_phi={gap_phi:.3g} "
              f"eps_ov={audit.eps_ov:.3g} eps_info={audit.eps_info:.3g}")
    (out / "audit.json").write_text(_dump(audits))
    return 0


# --- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fusion", description="RCT + observational fusion toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset CSV + JSON sidecar")
    g.add_argument("--preset", choices=["full", "benchmark"], default="full")
    g.add_argument("--config", help="JSON file with generator settings")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dial", type=float)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    def grid_flags(q):
        q.add_argument("--config", help="experiment JSON")
        q.add_argument("--preset", choices=["benchmark", "severe", "smoke"])
        q.add_argument("--seed", type=int, help="master seed")
        q.add_argument("--dial", type=float, nargs="+")
        q.add_argument("--out")

    r = sub.add_parser("run", help="run a method x dial x seed grid")
    grid_flags(r)
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--only", nargs="+", help="restrict to these methods")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("sweep-alpha", help="weighted-fusion path over an alpha grid")
    grid_flags(a)
    a.add_argument("--alphas", default="0,0.1,0.3,1,3,10")
    a.add_argument("--lq", action="store_true", help="use a linear-quadratic toy")
    a.add_argument("--lq-dim", type=int, default=10)
    a.add_argument("--lq-constraints", type=int, default=3)
    a.add_argument("--jobs", type=int, default=1)
    a.set_defaults(func=cmd_sweep_alpha, seed=0)

    v = sub.add_parser("verify-theory", help="run the closed-form verification suite")
    v.add_argument("--only", nargs="+")
    v.add_argument("--epsilon", type=float, default=0.2)
    v.add_argument("--out")
    v.add_argument("--jobs", type=int, default=1)
    v.set_defaults(func=cmd_verify_theory)

    f = sub.add_parser("audit-feasibility", help="feasibility gaps and discrepancy audit")
    grid_flags(f)
    f.add_argument("--restarts", type=int, default=8)
    f.add_argument("--jobs", type=int, default=1)
    f.set_defaults(func=cmd_audit_feasibility)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
