"""Core data containers shared by every module."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .errors import DimensionError, InvalidTreatmentError


@dataclass(frozen=True)
class AssignmentProbs:
    """Known randomization probabilities p_k = P_r(T = k).

    ``p`` is either a vector of length K+1 (marginal design) or a table of shape
    ``(n_strata, K+1)`` used together with a per-row stratum id.
    """

    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=np.float64)
        if p.ndim not in (1, 2) or p.shape[-1] < 2:
            raise DimensionError("assignment probabilities need shape (K+1,) or (S, K+1)")
        if np.any(p <= 0.0) or np.any(p >= 1.0):
            raise ValueError("each p_k must lie strictly inside (0, 1)")
        if np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-12):
            raise ValueError("assignment probabilities must sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def n_treatments(self) -> int:
        return self.p.shape[-1]

    @property
    def K(self) -> int:
        return self.p.shape[-1] - 1

    @property
    def stratified(self) -> bool:
        return self.p.ndim == 2

    def rows(self, n: int, strata=None) -> np.ndarray:
        """Per-row probability matrix of shape ``(n, K+1)``."""
        if not self.stratified:
            return np.broadcast_to(self.p, (n, self.n_treatments))
        if strata is None:
            raise ValueError("stratified probabilities need per-row stratum ids")
        strata = np.asarray(strata, dtype=np.intp)
        if strata.shape != (n,):
            raise DimensionError("stratum ids must have one entry per row")
        return self.p[strata]


@dataclass
class Dataset:
    """Pooled RCT + OBS sample.

    ``X`` holds continuous covariates followed by the one-hot categorical block.
    Optional fields are filled by the synthetic generators and carry the
    ingredients needed to recompute the true effect.
    """

    X: np.ndarray
    T: np.ndarray
    Y: np.ndarray
    is_rct: np.ndarray
    probs: AssignmentProbs | None = None
    strata: np.ndarray | None = None
    tau_true: np.ndarray | None = None
    Z_latent: np.ndarray | None = None
    U: np.ndarray | None = None
    X_cat: np.ndarray | None = None
    structural: np.ndarray | None = None
    mu0: np.ndarray | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.T = np.asarray(self.T).astype(np.intp)
        self.Y = np.asarray(self.Y, dtype=np.float64)
        self.is_rct = np.asarray(self.is_rct, dtype=bool)
        n = self.X.shape[0]
        for name in ("T", "Y", "is_rct"):
            if getattr(self, name).shape != (n,):
                raise DimensionError(f"{name} must have one entry per row")
        if n and self.T.min() < 0:
            raise InvalidTreatmentError("treatments must be non-negative integers")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n_treatments(self) -> int:
        if self.probs is not None:
            return self.probs.n_treatments
        return int(self.T.max()) + 1 if self.n else 0

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)

        def take(a):
            return None if a is None else a[idx]

        return replace(self, X=self.X[idx], T=self.T[idx], Y=self.Y[idx],
                       is_rct=self.is_rct[idx], strata=take(self.strata),
                       tau_true=take(self.tau_true), Z_latent=take(self.Z_latent),
                       U=take(self.U), X_cat=take(self.X_cat),
                       structural=take(self.structural), mu0=take(self.mu0), meta=self.meta)

    def rct(self) -> "Dataset":
        return self.subset(np.flatnonzero(self.is_rct))

    def obs(self) -> "Dataset":
        return self.subset(np.flatnonzero(~self.is_rct))

    def prob_rows(self) -> np.ndarray:
        """(n, K+1) assignment probabilities; NaN on OBS rows."""
        out = np.full((self.n, self.n_treatments), np.nan)
        if self.probs is not None and self.is_rct.any():
            idx = np.flatnonzero(self.is_rct)
            strata = None if self.strata is None else self.strata[idx]
            out[idx] = self.probs.rows(idx.size, strata)
        return out
