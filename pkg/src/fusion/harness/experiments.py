"""Method x dial x seed grids: data generation, training, held-out evaluation."""

from __future__ import annotations

import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..data import Dataset
from ..datagen import SyntheticConfig, gen_synthetic
from ..discrepancy import joint_features, marginal_treatment_tv, mmd_joint
from ..errors import ConfigError
from ..estimators.training import moment_norm, train, train_t_learner
from ..io import load_dataset
from ..metrics import aggregate, format_table, mape, mse_tau, qini
from .config import ExperimentConfig, derive_seed, parse_method

log = logging.getLogger("fusion.harness")

METRIC_COLUMNS = ("method", "overlap_dial", "seed", "qini", "mse_tau", "mape", "g_norm", "ipm",
                  "marginal_tv")


def make_dataset(spec: dict, dial: float, seed_idx: int, master: int) -> Dataset:
    """Build the dataset for one (dial, seed) pair; shared by every method."""
    spec = dict(spec)
    if "csv" in spec:
        return load_dataset(spec["csv"])
    name = spec.pop("preset", "benchmark")
    exclusion = spec.pop("exclusion", None)
    data_seed = derive_seed(master, f"data:{dial!r}:{seed_idx}")
    base = {"benchmark": {"n_rct": 1000, "n_obs": 4000}, "full": {}}
    if name not in base:
        raise ConfigError(f"unknown dataset preset {name!r}")
    kw = {**base[name], **spec}
    if exclusion == "random":
        rng = np.random.default_rng([data_seed, 9])
        exclusion = {"angle": float(rng.uniform(0, 2 * np.pi)), "offset": float(rng.uniform(0, 1))}
    return gen_synthetic(SyntheticConfig(overlap_dial=dial, seed=data_seed, exclusion=exclusion,
                                         **kw))


def split_heldout(data: Dataset, frac: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded per-source split; returns (train, test)."""
    rng = np.random.default_rng([seed, 7])
    test = np.zeros(data.n, dtype=bool)
    for src in (data.is_rct, ~data.is_rct):
        idx = np.flatnonzero(src)
        test[rng.choice(idx, size=int(round(frac * idx.size)), replace=False)] = True
    return data.subset(np.flatnonzero(~test)), data.subset(np.flatnonzero(test))


def evaluate(model, test: Dataset, mmd_rows: int = 2000) -> dict:
    """Held-out metrics. Qini and the moment residual use the RCT rows only."""
    rct = test.rct()
    out = {}
    tau_hat = np.asarray(model.effects(test.X))
    if tau_hat.ndim > 1:
        tau_hat = tau_hat[:, 0]
    out["qini"] = qini(tau_hat[test.is_rct], rct.T, rct.Y)
    if test.tau_true is not None:
        out["mse_tau"] = mse_tau(tau_hat, test.tau_true)
        out["mape"] = mape(tau_hat, test.tau_true)
    out["g_norm"] = moment_norm(model, rct)
    reps = model.represent(test.X) if hasattr(model, "represent") else test.X
    feats = joint_features(reps, test.T, test.n_treatments)
    out["ipm"] = mmd_joint(feats[test.is_rct], feats[~test.is_rct], max_rows=mmd_rows).value
    out["marginal_tv"] = marginal_treatment_tv(rct, test.obs()).tv
    return out


def cell_id(method: str, dial: float, seed: int) -> str:
    safe = method.replace(":", "_").replace("=", "").replace(",", "_")
    return f"{safe}__dial{dial:g}__seed{seed}"


def run_cell(exp: ExperimentConfig, method: str, dial: float, seed_idx: int,
             out_dir: str | None = None) -> dict:
    """Train and evaluate one cell; writes its trace under out_dir/<cell>/."""
    cid = cell_id(method, dial, seed_idx)
    data = make_dataset(exp.dataset, dial, seed_idx, exp.master_seed)
    train_set, test_set = split_heldout(data, exp.heldout_frac,
                                        derive_seed(exp.master_seed, f"split:{dial!r}:{seed_idx}"))
    cfg = exp.train_config(method, derive_seed(exp.master_seed, cid))
    name, _ = parse_method(method)
    trace = None
    if name == "t_learner":
        model = train_t_learner(train_set, cfg)
    else:
        model, trace = train(train_set, cfg, name)
    row = {"method": method, "overlap_dial": dial, "seed": seed_idx, **evaluate(model, test_set)}
    if out_dir is not None:
        cdir = Path(out_dir) / cid
        cdir.mkdir(parents=True, exist_ok=True)
        if trace is not None:
            trace.to_csv(cdir / "trace.csv")
        (cdir / "metrics.json").write_text(json.dumps(row, indent=2, sort_keys=True) + "\n")
    log.info("cell %s done: %s", cid, {k: round(v, 4) for k, v in row.items()
                                       if isinstance(v, float)})
    return row


def _safe_cell(args) -> tuple[dict | None, dict | None]:
    exp_dict, method, dial, seed_idx, out_dir = args
    exp = ExperimentConfig.from_dict(exp_dict)
    try:
        return run_cell(exp, method, dial, seed_idx, out_dir), None
    except Exception as err:  # a failing cell must not stop the grid
        return None, {"cell": cell_id(method, dial, seed_idx), "error": repr(err),
                      "traceback": traceback.format_exc()}


def run_grid(exp: ExperimentConfig, out_dir: str | None = None, jobs: int = 1,
             only_methods=None) -> tuple[list[dict], list[dict]]:
    """Run every (method, dial, seed) cell. Returns (rows, failures) in grid order."""
    methods = [m for m in exp.methods if only_methods is None or parse_method(m)[0] in only_methods
               or m in only_methods]
    tasks = [(exp.to_dict(), m, d, s, out_dir) for d in exp.dials for s in exp.seeds
             for m in methods]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_safe_cell, tasks))
    else:
        results = [_safe_cell(t) for t in tasks]
    rows = [r for r, _ in results if r is not None]
    failures = [f for _, f in results if f is not None]
    return rows, failures


def write_report(exp: ExperimentConfig, rows: list[dict], failures: list[dict], out_dir) -> None:
    """metrics.csv, metrics_aggregate.csv, table.txt, config.json and failures.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digest = exp.digest()
    stamped = [{**{k: r.get(k, "") for k in METRIC_COLUMNS}, "config_sha": digest} for r in rows]
    report = aggregate(stamped) if rows else None
    if report is not None:
        report.to_csv(out / "metrics.csv")
        report.to_csv(out / "metrics_aggregate.csv", aggregated=True)
        (out / "table.txt").write_text(format_table(report, methods=exp.methods))
    (out / "config.json").write_text(json.dumps(exp.to_dict(), indent=2, sort_keys=True) + "\n")
    if failures:
        (out / "failures.json").write_text(json.dumps(failures, indent=2) + "\n")
