"""Evaluation metrics and seed aggregation."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LengthMismatchError, SingleArmError

__all__ = ["mse_tau", "qini", "uplift_curve", "mape", "aggregate", "MetricsReport",
           "METRIC_FIELDS", "format_table"]

METRIC_FIELDS = ("qini", "mse_tau", "mape", "g_norm", "ipm", "marginal_tv")


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise LengthMismatchError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise LengthMismatchError("inputs must be nonempty")
    return a, b


def mse_tau(tau_hat, tau_true) -> float:
    a, b = _pair(tau_hat, tau_true)
    return float(np.mean((a - b) ** 2))


def uplift_curve(tau_hat, t, y) -> tuple[np.ndarray, np.ndarray]:
    """Incremental-gains curve over prefix fractions q = 0, 1/n, ..., 1.

    Rows are ranked by ``tau_hat`` descending with ties kept in original order.
    uplift(q) = sum of treated outcomes in the prefix / n_treated
              - sum of control outcomes in the prefix / n_control.
    """
    tau_hat, y = _pair(tau_hat, y)
    t = np.asarray(t).ravel()
    if t.shape != y.shape:
        raise LengthMismatchError("t must match y")
    treated = t == 1
    n_t, n_c = int(treated.sum()), int((~treated).sum())
    if n_t == 0 or n_c == 0:
        raise SingleArmError("the uplift curve needs both treated and control rows")
    order = np.argsort(-tau_hat, kind="stable")
    yt = np.where(treated, y, 0.0)[order]
    yc = np.where(treated, 0.0, y)[order]
    up = np.concatenate([[0.0], np.cumsum(yt) / n_t - np.cumsum(yc) / n_c])
    q = np.arange(y.size + 1) / y.size
    return q, up


def qini(tau_hat, t, y) -> float:
    """Raw area between the incremental-gains curve and the random-targeting line."""
    q, up = uplift_curve(tau_hat, t, y)
    return float(np.trapezoid(up - q * up[-1], q))


def mape(tau_hat, tau_true, floor: float = 0.05, n_groups: int = 10) -> float:
    """Mean relative error of group-averaged effects over true-effect deciles."""
    if floor <= 0:
        raise ValueError("floor must be positive")
    a, b = _pair(tau_hat, tau_true)
    order = np.argsort(b, kind="stable")
    errs = []
    for grp in np.array_split(order, min(n_groups, b.size)):
        mt = b[grp].mean()
        errs.append(abs(a[grp].mean() - mt) / max(abs(mt), floor))
    return float(np.mean(errs))


@dataclass
class MetricsReport:
    """Per-seed rows plus (method, dial) aggregates with sample mean and std."""

    rows: list[dict] = field(default_factory=list)
    aggregates: list[dict] = field(default_factory=list)

    def to_csv(self, path, aggregated: bool = False) -> None:
        rows = self.aggregates if aggregated else self.rows
        if not rows:
            Path(path).write_text("")
            return
        keys = list(rows[0].keys())
        for r in rows[1:]:
            keys += [k for k in r if k not in keys]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
            writer.writeheader()
            for r in rows:
                writer.writerow({k: _fmt(r.get(k, "")) for k in keys})


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def aggregate(rows: list[dict], fields=METRIC_FIELDS) -> MetricsReport:
    """Group per-seed rows by (method, overlap_dial) and compute mean and std (ddof=1).

    Cells with fewer than two seeds get a warning row: the mean is kept, std is
    omitted and ``warning`` explains why.
    """
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["method"], r.get("overlap_dial")), []).append(r)
    out = []
    for (method, dial), members in groups.items():
        agg = {"method": method, "overlap_dial": dial, "n_seeds": len(members)}
        for f in fields:
            vals = np.array([m[f] for m in members if f in m], dtype=np.float64)
            if vals.size == 0:
                continue
            agg[f"{f}_mean"] = float(vals.mean())
            if vals.size >= 2:
                agg[f"{f}_std"] = float(vals.std(ddof=1))
        if len(members) < 2:
            agg["warning"] = "fewer than 2 seeds; std omitted"
            warnings.warn(f"cell ({method}, {dial}) has {len(members)} seed(s); std omitted",
                          stacklevel=2)
        out.append(agg)
    return MetricsReport(rows=list(rows), aggregates=out)


def format_table(report: MetricsReport, dials=None, methods=None) -> str:
    """Text table with one row per method and Qini / MSE (mean +- std) columns per dial."""
    aggs = {(a["method"], a["overlap_dial"]): a for a in report.aggregates}
    dials = sorted({d for _, d in aggs}) if dials is None else list(dials)
    if methods is None:
        methods = list(dict.fromkeys(m for m, _ in aggs))

    def cell(a, f):
        if a is None or f"{f}_mean" not in a:
            return "-"
        std = a.get(f"{f}_std")
        return f"{a[f'{f}_mean']:.4f}" + ("" if std is None else f" ± {std:.4f}")

    header = ["Method"] + [f"{name} (dial={d})" for d in dials for name in ("Qini", "MSE")]
    body = [[m] + [cell(aggs.get((m, d)), f) for d in dials for f in ("qini", "mse_tau")]
            for m in methods]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    line = lambda r: " | ".join(s.ljust(w) for s, w in zip(r, widths))
    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([line(header), sep] + [line(r) for r in body]) + "\n"
