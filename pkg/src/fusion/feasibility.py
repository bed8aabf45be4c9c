"""Feasibility-gap diagnostics.

The feasibility gap of a model family is inf ||g_hat(m)|| over the family,
where g_hat is the RCT moment residual. For families whose last layer is a
linear head per arm, g_hat is affine in the head parameters, so the inner
minimization over the head is a least-squares problem solved exactly; the
outer minimization over hidden layers is approximated by seeded restarts and
so gives an upper estimate of the infimum.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import nnls

from .data import Dataset
from .discrepancy import joint_features, mmd_joint
from .errors import NoStructuralSetError, SourceError
from .moments import _design_deviation

FAMILIES = ("raw_linear", "raw_net", "rep_net")


@dataclass(frozen=True)
class GapEstimate:
    value: float
    family: str
    restarts: int
    label: str = "upper estimate of inf"


def _rct_parts(data: Dataset):
    rct = data.rct() if not np.all(data.is_rct) else data
    if rct.n == 0 or rct.probs is None:
        raise SourceError("feasibility gaps need RCT rows with known assignment probabilities")
    p_rows = rct.probs.rows(rct.n, rct.strata if rct.probs.stratified else None)
    return rct, _design_deviation(rct.T, p_rows)


def moment_residual_norm(data: Dataset, m_values) -> float:
    rct, dev = _rct_parts(data)
    return float(np.linalg.norm((dev * (rct.Y - np.asarray(m_values))[:, None]).mean(axis=0)))


def head_least_squares_gap(features: np.ndarray, t, y, dev: np.ndarray) -> float:
    """min over per-arm affine heads on ``features`` of ||mean(dev * (y - m))||.

    With m_i = [f_i, 1] . w_{t_i}, g_hat = a - B w is affine in the stacked
    head weights, so the minimum is the least-squares residual of B w = a.
    A design with full row rank K makes the residual exactly zero.
    """
    n = features.shape[0]
    f1 = np.column_stack([features, np.ones(n)])
    n_arms = dev.shape[1] + 1
    a = (dev * y[:, None]).mean(axis=0)
    B = np.zeros((dev.shape[1], f1.shape[1] * n_arms))
    for k in range(n_arms):
        sel = t == k
        B[:, k * f1.shape[1]:(k + 1) * f1.shape[1]] = dev[sel].T @ f1[sel] / n
    if np.linalg.matrix_rank(B) == B.shape[0]:
        return 0.0
    w, *_ = np.linalg.lstsq(B, a, rcond=None)
    return float(np.linalg.norm(a - B @ w))


def _standardized(X, ref):
    mean, sd = ref.mean(axis=0), ref.std(axis=0)
    return (X - mean) / np.where(sd > 0, sd, 1.0)


def feasibility_gap(data: Dataset, model_family, restarts: int = 8, *, seed: int = 0,
                    hidden: Sequence[int] = (64,), rep_dim: int = 16,
                    phi_hidden: Sequence[int] = (64, 64)) -> GapEstimate:
    """Upper estimate of inf_m ||g_hat(m)|| on the RCT rows of ``data``.

    ``model_family`` is one of ``FAMILIES`` or a finite sequence of callables
    m(X, T) (the minimum over the list is then exact).
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    rct, dev = _rct_parts(data)
    if not isinstance(model_family, str):
        vals = [moment_residual_norm(rct, m(rct.X, rct.T)) for m in model_family]
        return GapEstimate(value=float(min(vals)), family="finite", restarts=len(vals),
                           label="exact minimum over the listed models")
    X = _standardized(rct.X, data.X)
    if model_family == "raw_linear":
        return GapEstimate(head_least_squares_gap(X, rct.T, rct.Y, dev), model_family, 1,
                           label="exact (least squares)")
    from .nets import MLP, make_layout

    best = np.inf
    for r in range(restarts):
        if model_family == "raw_net":
            layout = make_layout([X.shape[1], *hidden], "tanh", "tanh")
        elif model_family == "rep_net":
            layout = make_layout([X.shape[1], *phi_hidden, rep_dim, *hidden], "tanh", "tanh")
        else:
            raise ValueError(f"unknown family {model_family!r}; expected one of {FAMILIES}")
        feats = MLP(layout, seed=seed * 1000 + r).forward(X)
        best = min(best, head_least_squares_gap(feats, rct.T, rct.Y, dev))
        if best == 0.0:
            break
    return GapEstimate(float(best), model_family, restarts)


def representation_gap(data: Dataset, reps: np.ndarray) -> float:
    """Feasibility gap over per-arm affine heads on fixed RCT representations ``reps``."""
    rct, dev = _rct_parts(data)
    return head_least_squares_gap(np.asarray(reps, dtype=np.float64), rct.T, rct.Y, dev)


def structural_rct_mask(data: Dataset) -> np.ndarray:
    if data.structural is None:
        raise NoStructuralSetError("no structural non-overlap set recorded")
    return np.asarray(data.structural, dtype=bool)[data.is_rct]


def estimate_delta(data: Dataset, model_grid: Sequence[Callable]) -> float:
    """min over the grid of |mean over RCT rows in S of (Y - m(X, T))|."""
    rct = data.rct()
    s = structural_rct_mask(data)
    if not s.any():
        raise NoStructuralSetError("P_r(S) = 0: no structural non-overlap present")
    return float(min(abs(np.mean(rct.Y[s] - np.asarray(m(rct.X[s], rct.T[s]))))
                     for m in model_grid))


def explicit_gap_constant(data: Dataset, delta_hat: float | None = None,
                          model_grid: Sequence[Callable] | None = None) -> float:
    """c0 = p (1 - p_bar) P_r(S) delta, with p, p_bar the min / max arm probability on S."""
    rct = data.rct()
    s = structural_rct_mask(data)
    if not s.any():
        raise NoStructuralSetError("P_r(S) = 0: no structural non-overlap present")
    if delta_hat is None:
        if model_grid is None:
            raise ValueError("supply delta_hat or a model grid to estimate it")
        delta_hat = estimate_delta(data, model_grid)
    p_rows = rct.probs.rows(rct.n, rct.strata if rct.probs.stratified else None)[s]
    p_lo, p_hi = float(p_rows.min()), float(p_rows.max())
    return p_lo * (1.0 - p_hi) * float(s.mean()) * float(delta_hat)


def _ridge_fit_predict(F_tr, t_tr, y_tr, F_te, t_te, n_arms, ridge):
    pred = np.empty(t_te.size)
    for k in range(n_arms):
        a, b = t_tr == k, t_te == k
        if not b.any():
            continue
        D = np.column_stack([F_tr[a], np.ones(a.sum())])
        reg = ridge * np.eye(D.shape[1])
        reg[-1, -1] = 0.0
        w = np.linalg.solve(D.T @ D + reg, D.T @ y_tr[a])
        pred[b] = np.column_stack([F_te[b], np.ones(b.sum())]) @ w
    return pred


@dataclass(frozen=True)
class InfoEstimate:
    raw: float
    risk_phi: float
    risk_x: float

    @property
    def clamped(self) -> float:
        return max(self.raw, 0.0)


def info_preservation(train: Dataset, test: Dataset, phi: Callable, ridge: float = 1e-3
                      ) -> InfoEstimate:
    """Held-out risk of the best per-arm ridge predictor on phi(X) minus that on X."""
    n_arms = max(train.n_treatments, test.n_treatments)
    X_tr, X_te = _standardized(train.X, train.X), _standardized(test.X, train.X)
    risks = []
    for F_tr, F_te in ((np.asarray(phi(train.X), dtype=float), np.asarray(phi(test.X), dtype=float)),
                       (X_tr, X_te)):
        F_tr = F_tr.reshape(train.n, -1)
        F_te = F_te.reshape(test.n, -1)
        pred = _ridge_fit_predict(F_tr, train.T, train.Y, F_te, test.T, n_arms, ridge)
        risks.append(float(np.mean((test.Y - pred) ** 2)))
    return InfoEstimate(raw=risks[0] - risks[1], risk_phi=risks[0], risk_x=risks[1])


@dataclass
class FeasibilityAudit:
    gap_raw: float
    gap_phi: float
    c0_hat: float | None = None
    eps_ov: float | None = None
    eps_info: float | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("gap_raw", "gap_phi", "c0_hat", "eps_ov", "eps_info"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


@dataclass
class TradeoffAudit:
    rows: list[dict]
    coef: tuple[float, float, float]
    residuals: np.ndarray
    envelope_shift: float

    @property
    def slack(self) -> np.ndarray:
        """Slack of gap <= a + shift + b eps_ov + c sqrt(eps_info) per audited phi."""
        return -self.residuals + self.envelope_shift

    @property
    def fraction_holding(self) -> float:
        return float(np.mean(self.slack >= -1e-12))


def tradeoff_audit(train: Dataset, test: Dataset, phis: Sequence[Callable], *,
                   mmd_rows: int = 2000, seed: int = 0) -> TradeoffAudit:
    """Measure (eps_ov, eps_info, gap_phi) for each representation and fit
    gap_phi ~ a + b eps_ov + c sqrt(eps_info) with a, b, c >= 0 (NNLS).

    ``envelope_shift`` raises the intercept just enough for the fitted
    relation to hold as an upper bound on every audited row.
    """
    if len(phis) < 2:
        raise ValueError("the audit needs at least two representations")
    rows = []
    for phi in phis:
        z = np.asarray(phi(train.X), dtype=float).reshape(train.n, -1)
        feats = joint_features(z, train.T, train.n_treatments)
        eps_ov = mmd_joint(feats[train.is_rct], feats[~train.is_rct], max_rows=mmd_rows,
                           seed=seed).value
        info = info_preservation(train, test, phi).clamped
        gap = representation_gap(train, z[train.is_rct])
        rows.append({"eps_ov": eps_ov, "eps_info": info, "gap_phi": gap})
    design = np.array([[1.0, r["eps_ov"], np.sqrt(r["eps_info"])] for r in rows])
    target = np.array([r["gap_phi"] for r in rows])
    coef, _ = nnls(design, target)
    resid = target - design @ coef
    shift = float(max(resid.max(), 0.0))
    return TradeoffAudit(rows=rows, coef=tuple(float(c) for c in coef), residuals=resid,
                         envelope_shift=shift)
