"""Experimental moment conditions.

For treatments 0..K with known randomization probabilities p_k, the moment map
is psi_k = (1{T=k} - p_k) (Y - m(X, T)) for k = 1..K (treatment 0 is the
reference and is excluded). At the true conditional mean its RCT expectation
is zero, and any covariate-only shift of m leaves the expectation unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import AssignmentProbs, Dataset
from .errors import EmptyBatchError, InvalidTreatmentError, LengthMismatchError, SourceError

__all__ = [
    "AssignmentProbs", "MomentResidual", "psi", "psi_rows", "empirical_moment_residual",
    "moment_grad", "moment_upstream", "baseline_invariance_check", "moment_decomposition",
]


@dataclass(frozen=True)
class MomentResidual:
    g: np.ndarray
    n_r_used: int

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.g))


def _check_t(t, n_treatments: int) -> np.ndarray:
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= n_treatments) or np.any(t != np.round(t)):
        raise InvalidTreatmentError(f"treatment must be an integer in [0, {n_treatments - 1}]")
    return t.astype(np.intp)


def psi(y: float, t: int, m_val: float, probs: AssignmentProbs, stratum: int | None = None
        ) -> np.ndarray:
    """Moment vector (length K) for a single observation."""
    p = probs.p[stratum] if probs.stratified else probs.p
    t = int(_check_t(t, probs.n_treatments))
    d = np.zeros(probs.n_treatments)
    d[t] = 1.0
    return (d[1:] - p[1:]) * (y - m_val)


def psi_rows(y, t, m, p_rows) -> np.ndarray:
    """Row-wise moment matrix of shape ``(n, K)``."""
    p_rows = np.asarray(p_rows, dtype=np.float64)
    t = _check_t(t, p_rows.shape[1])
    resid = np.asarray(y, dtype=np.float64) - np.asarray(m, dtype=np.float64)
    if resid.shape != t.shape or p_rows.shape[0] != t.size:
        raise LengthMismatchError("y, t, m and probabilities must have matching rows")
    return _design_deviation(t, p_rows) * resid[:, None]


def _design_deviation(t, p_rows) -> np.ndarray:
    """(n, K) matrix of 1{T=k} - p_k."""
    dev = -np.asarray(p_rows, dtype=np.float64)[:, 1:].copy()
    rows = np.flatnonzero(t > 0)
    dev[rows, t[rows] - 1] += 1.0
    return dev


def _rct_rows(batch: Dataset, probs: AssignmentProbs | None):
    if batch.n == 0:
        raise EmptyBatchError("moment residual needs at least one RCT row")
    if not np.all(batch.is_rct):
        raise SourceError("moment residuals are computed on RCT rows only")
    probs = probs if probs is not None else batch.probs
    if probs is None:
        raise ValueError("assignment probabilities are required")
    strata = batch.strata if probs.stratified else None
    return probs, probs.rows(batch.n, strata)


def _predict(model, X, T) -> np.ndarray:
    if hasattr(model, "predict"):
        return np.asarray(model.predict(X, T), dtype=np.float64)
    return np.asarray(model(X, T), dtype=np.float64)


def empirical_moment_residual(rct_batch: Dataset, model, probs: AssignmentProbs | None = None
                              ) -> MomentResidual:
    """Sample mean of psi over an RCT batch; ``model`` is a JointModel or callable m(X, T)."""
    probs, p_rows = _rct_rows(rct_batch, probs)
    m = _predict(model, rct_batch.X, rct_batch.T)
    g = psi_rows(rct_batch.Y, rct_batch.T, m, p_rows).mean(axis=0)
    return MomentResidual(g=g, n_r_used=rct_batch.n)


def moment_upstream(t, p_rows, weights) -> np.ndarray:
    """Per-row upstream gradient dL/dm for L = weights . g_hat.

    Since d g_k / d m_i = -(1{t_i=k} - p_k) / n, the result is
    -(dev @ weights) / n.
    """
    t = np.asarray(t, dtype=np.intp)
    dev = _design_deviation(t, p_rows)
    return -(dev @ np.asarray(weights, dtype=np.float64)) / t.size


def moment_grad(rct_batch: Dataset, model, probs: AssignmentProbs | None = None) -> np.ndarray:
    """Jacobian of g_hat with respect to ``model.params``, shape ``(K, n_params)``."""
    probs, p_rows = _rct_rows(rct_batch, probs)
    model.forward(rct_batch.X, rct_batch.T)
    jac = np.empty((probs.K, model.n_params))
    for k in range(probs.K):
        e = np.zeros(probs.K)
        e[k] = 1.0
        jac[k], _ = model.backward(moment_upstream(rct_batch.T, p_rows, e))
    return jac


def baseline_invariance_check(rct_sample: Dataset, u_fn, probs: AssignmentProbs | None = None
                              ) -> np.ndarray:
    """z-scores of mean((1{T=k} - p_k) u(X)) for k = 1..K.

    Under randomization these are approximately standard normal. A zero
    standard deviation gives z = 0 when the mean is exactly zero and +-inf
    (a violation) otherwise.
    """
    probs, p_rows = _rct_rows(rct_sample, probs)
    u = np.broadcast_to(np.asarray(u_fn(rct_sample.X), dtype=np.float64), (rct_sample.n,))
    terms = _design_deviation(rct_sample.T, p_rows) * u[:, None]
    mean = terms.mean(axis=0)
    sd = terms.std(axis=0, ddof=1) if rct_sample.n > 1 else np.zeros_like(mean)
    z = np.zeros_like(mean)
    ok = sd > 0
    z[ok] = mean[ok] / (sd[ok] / np.sqrt(rct_sample.n))
    bad = ~ok & (mean != 0)
    z[bad] = np.sign(mean[bad]) * np.inf
    return z


def moment_decomposition(y_potential, t, u, h, p_rows) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split the sample moment into a baseline and a causal part.

    ``y_potential`` is ``(n, K+1)`` potential outcomes, ``u`` the baseline
    m(x, 0) and ``h`` the ``(n, K)`` increments m(x, k) - m(x, 0). Returns
    ``(direct, baseline, causal)`` with direct == baseline + causal row by row.
    """
    y_potential = np.asarray(y_potential, dtype=np.float64)
    t = np.asarray(t, dtype=np.intp)
    u = np.asarray(u, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64).reshape(t.size, -1)
    n = t.size
    y = y_potential[np.arange(n), t]
    h_full = np.hstack([np.zeros((n, 1)), h])
    m = u + h_full[np.arange(n), t]
    dev = _design_deviation(t, p_rows)
    y0 = y_potential[:, 0]
    incr = y_potential[:, 1:] - y0[:, None] - h
    active = np.zeros((n, h.shape[1]))
    rows = np.flatnonzero(t > 0)
    active[rows, t[rows] - 1] = 1.0
    direct = (dev * (y - m)[:, None]).mean(axis=0)
    baseline = (dev * (y0 - u)[:, None]).mean(axis=0)
    causal = (dev * (active * incr).sum(axis=1)[:, None]).mean(axis=0)
    return direct, baseline, causal
