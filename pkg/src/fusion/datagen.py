"""Synthetic data: the semi-synthetic RCT + OBS generator, the discrete
two-cell construction used for the feasibility lower bound, and explicit
linear-quadratic problems for the optimization checks.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Any

import numpy as np

from .data import AssignmentProbs, Dataset
from .errors import ConfigError, NotSyntheticError

SIGMA_OBS_MIN = 1.0


@dataclass(frozen=True)
class SyntheticConfig:
    """Generator settings. Defaults reproduce the full-size design (50k rows).

    ``overlap_dial`` in [0, 1]: 0 keeps the narrow OBS latent spread
    (``sigma_obs``, minimal overlap); 1 widens it to ``sigma_rct`` and halves
    the confounder weight in the OBS propensity score.

    ``exclusion`` optionally removes treatment from OBS units whose latent
    coordinates fall in a half-plane ``{z : z . (cos a, sin a) > offset}``,
    creating a known structural set S. Pass ``{"angle": a, "offset": o}``.
    """

    n_rct: int = 10_000
    n_obs: int = 40_000
    n_cont: int = 120
    n_cat: int = 40
    L: int = 4
    sigma_rct: float = 3.0
    sigma_obs: float = SIGMA_OBS_MIN
    overlap_dial: float = 0.0
    seed: int = 0
    exclusion: dict | None = None

    def __post_init__(self):
        if self.n_rct <= 0 or self.n_obs <= 0:
            raise ConfigError("sample counts must be positive")
        if self.sigma_rct <= 0 or self.sigma_obs <= 0:
            raise ConfigError("latent scales must be positive")
        if not 0.0 <= self.overlap_dial <= 1.0:
            raise ConfigError("overlap_dial must lie in [0, 1]")
        if self.n_cont < 10:
            raise ConfigError("the outcome and effect formulas use 10 continuous covariates")
        if self.n_cat < 1 or self.L < 2:
            raise ConfigError("need at least one categorical feature with two levels")

    @property
    def effective_sigma_obs(self) -> float:
        return self.sigma_obs + self.overlap_dial * (self.sigma_rct - self.sigma_obs)

    @property
    def confounder_weight(self) -> float:
        return 0.9 * (1.0 - 0.5 * self.overlap_dial)


def benchmark_config(overlap_dial: float = 0.0, seed: int = 0, **kw) -> SyntheticConfig:
    """5,000-row datasets (1,000 RCT + 4,000 OBS) used for the method comparison."""
    return SyntheticConfig(n_rct=1_000, n_obs=4_000, overlap_dial=overlap_dial, seed=seed, **kw)


def cat_contrib(X_cat: np.ndarray, W: np.ndarray) -> np.ndarray:
    """sum_j W[j, X_cat[:, j]]."""
    X_cat = np.asarray(X_cat, dtype=np.intp)
    return W[np.arange(X_cat.shape[1]), X_cat].sum(axis=1)


def baseline_outcome(Xc, Z, U, X_cat, W_mu) -> np.ndarray:
    n_cat = X_cat.shape[1]
    return (1.2 * np.tanh(Xc[:, 0]) + 0.8 * np.sin(Xc[:, 1])
            + 0.5 * Xc[:, 2] * Xc[:, 3] / (1 + np.abs(Xc[:, 3]))
            - 0.7 * np.log1p(np.abs(Xc[:, 4]))
            + 0.3 * Z[:, 0] ** 2 / (1 + Z[:, 0] ** 2) - 0.2 * Z[:, 1] ** 2 / (1 + Z[:, 1] ** 2)
            + 0.6 * U + 0.4 * cat_contrib(X_cat, W_mu) / np.sqrt(n_cat))


def effect_formula(Xc, Z, X_cat, W_tau) -> np.ndarray:
    n_cat = X_cat.shape[1]
    return (0.5 + 0.7 * np.tanh(0.7 * Xc[:, 5] + 0.3 * Xc[:, 6])
            - 0.5 * np.sin(0.5 * Xc[:, 7])
            + 0.4 * Z[:, 0] / (1 + np.abs(Z[:, 0])) - 0.3 * Z[:, 1] / (1 + np.abs(Z[:, 1]))
            + 0.25 * np.tanh(Xc[:, 8] * Xc[:, 9] / (1 + np.abs(Xc[:, 9])))
            + 0.5 * cat_contrib(X_cat, W_tau) / np.sqrt(n_cat))


def noise_scale(Xc) -> np.ndarray:
    a = np.abs(Xc[:, 0])
    return 0.8 + 0.2 * a / (1 + a)


def obs_score(Xc, Z, U, confounder_weight: float = 0.9) -> np.ndarray:
    return (0.6 * np.tanh(Xc[:, 0]) + 0.4 * np.sin(Xc[:, 1])
            - 0.3 * Xc[:, 2] ** 2 / (1 + np.abs(Xc[:, 2]))
            + 0.5 * Z[:, 0] - 0.2 * Z[:, 1] + confounder_weight * U)


def _in_exclusion(Z: np.ndarray, exclusion: dict | None) -> np.ndarray:
    if not exclusion:
        return np.zeros(Z.shape[0], dtype=bool)
    a = float(exclusion["angle"])
    return Z @ np.array([np.cos(a), np.sin(a)]) > float(exclusion.get("offset", 0.0))


def _draw_weights(cfg: SyntheticConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([cfg.seed, 0])
    W_z = rng.normal(size=(cfg.n_cat, cfg.L, 2))
    b_z = rng.normal(size=(cfg.n_cat, cfg.L))
    W_z[:, 0] = 0.0  # level 0 is the reference category
    b_z[:, 0] = 0.0
    return {
        "A": rng.normal(size=(2, cfg.n_cont)),
        "W_z": W_z,
        "b_z": b_z,
        "W_mu": rng.normal(size=(cfg.n_cat, cfg.L)),
        "W_tau": rng.normal(size=(cfg.n_cat, cfg.L)),
    }


def _sample_categorical(Z, W_z, b_z, rng) -> np.ndarray:
    logits = np.einsum("nd,jld->njl", Z, W_z) + b_z[None]
    logits -= logits.max(axis=2, keepdims=True)
    prob = np.exp(logits)
    prob /= prob.sum(axis=2, keepdims=True)
    u = rng.random(size=prob.shape[:2] + (1,))
    levels = (u > np.cumsum(prob, axis=2)).sum(axis=2)
    return np.minimum(levels, W_z.shape[1] - 1)


def one_hot_block(X_cat: np.ndarray, L: int) -> np.ndarray:
    n, n_cat = X_cat.shape
    out = np.zeros((n, n_cat * L))
    out[np.arange(n)[:, None], np.arange(n_cat)[None, :] * L + X_cat] = 1.0
    return out


def gen_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Generate the RCT + OBS sample (RCT rows first)."""
    w = _draw_weights(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    n_r, n_o, n = cfg.n_rct, cfg.n_obs, cfg.n_rct + cfg.n_obs

    Z = np.vstack([rng.normal(0.0, cfg.sigma_rct, size=(n_r, 2)),
                   rng.normal(0.0, cfg.effective_sigma_obs, size=(n_o, 2))])
    Xc = Z @ w["A"] + rng.normal(size=(n, cfg.n_cont))
    X_cat = _sample_categorical(Z, w["W_z"], w["b_z"], rng)
    U = rng.normal(size=n)

    T = np.empty(n, dtype=np.intp)
    T[:n_r] = rng.random(n_r) < 0.5
    score = obs_score(Xc[n_r:], Z[n_r:], U[n_r:], cfg.confounder_weight)
    prop = 1.0 / (1.0 + np.exp(-score))
    excluded = _in_exclusion(Z, cfg.exclusion)
    prop[excluded[n_r:]] = 0.0
    T[n_r:] = rng.random(n_o) < prop

    mu0 = baseline_outcome(Xc, Z, U, X_cat, w["W_mu"])
    tau = effect_formula(Xc, Z, X_cat, w["W_tau"])
    Y = mu0 + T * tau + rng.normal(size=n) * noise_scale(Xc)

    is_rct = np.arange(n) < n_r
    structural = None
    if cfg.exclusion:
        structural = is_rct & excluded & (T == 1)
    meta = {"config": _config_dict(cfg), "weights": w, "n_cont": cfg.n_cont,
            "n_cat": cfg.n_cat, "L": cfg.L,
            "synthetic": True}
    return Dataset(X=np.hstack([Xc, one_hot_block(X_cat, cfg.L)]), T=T, Y=Y, is_rct=is_rct,
                   probs=AssignmentProbs(np.array([0.5, 0.5])), tau_true=tau, Z_latent=Z,
                   U=U, X_cat=X_cat, structural=structural, mu0=mu0, meta=meta)


def all_control_obs(dataset: Dataset) -> Dataset:
    """Copy of a synthetic dataset in which no OBS unit is treated.

    OBS outcomes are replaced by their control potential outcomes, so the
    treated arm has zero OBS mass while keeping positive RCT mass.
    """
    if dataset.tau_true is None:
        raise NotSyntheticError("need the true effect to rewrite outcomes")
    obs = ~dataset.is_rct
    T = dataset.T.copy()
    Y = dataset.Y - obs * T * dataset.tau_true
    T[obs] = 0
    meta = dict(dataset.meta)
    meta["all_control_obs"] = True
    return replace(dataset, T=T, Y=Y, meta=meta)


def _config_dict(cfg: SyntheticConfig) -> dict[str, Any]:
    d = asdict(cfg)
    d["exclusion"] = dict(cfg.exclusion) if cfg.exclusion else None
    return d


def true_tau(dataset: Dataset) -> np.ndarray:
    """Recompute tau(X) from the stored covariates, latents and effect table."""
    meta = dataset.meta or {}
    weights = meta.get("weights") or {}
    if (not meta.get("synthetic") or dataset.Z_latent is None or dataset.X_cat is None
            or "W_tau" not in weights):
        raise NotSyntheticError("dataset does not carry the generator's ingredients")
    Xc = dataset.X[:, :meta["n_cont"]]
    return effect_formula(Xc, dataset.Z_latent, dataset.X_cat, np.asarray(weights["W_tau"]))


def potential_outcomes(dataset: Dataset) -> np.ndarray:
    """(n, 2) matrix [Y(0), Y(1)] for a synthetic binary-treatment dataset."""
    if dataset.tau_true is None:
        raise NotSyntheticError("potential outcomes need the true effect")
    y0 = dataset.Y - dataset.T * dataset.tau_true
    return np.column_stack([y0, y0 + dataset.tau_true])


def conditional_mean(dataset: Dataset) -> np.ndarray:
    """E[Y | X, Z, U, T] for every row: baseline plus T times the effect."""
    mu0 = dataset.mu0
    if mu0 is None or dataset.tau_true is None:
        raise NotSyntheticError("conditional mean needs stored baseline and effect")
    return np.asarray(mu0) + dataset.T * dataset.tau_true


# --- discrete two-cell construction -------------------------------------------

MINIMAX_CELLS = (("a", 0), ("a", 1), ("b", 0), ("b", 1))


def minimax_laws(epsilon: float, variant: str = "imbalanced") -> tuple[np.ndarray, np.ndarray]:
    """Cell probabilities (P_r, P_o) over ``MINIMAX_CELLS``.

    ``variant="balanced"`` keeps P_r uniform (first construction step);
    ``"imbalanced"`` moves eps/2 of treated mass from b to a under P_r.
    """
    if not 0.0 <= epsilon <= 0.5:
        raise ValueError("epsilon must lie in [0, 0.5] for the cell masses to be valid")
    p_o = np.array([0.25, 0.25 - epsilon / 2, 0.25, 0.25 + epsilon / 2])
    if variant == "balanced":
        p_r = np.full(4, 0.25)
    elif variant == "imbalanced":
        p_r = np.array([0.25, 0.25 + epsilon / 2, 0.25, 0.25 - epsilon / 2])
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return p_r, p_o


def gen_minimax_toy(epsilon: float, n_per_source: int, seed: int = 0,
                    variant: str = "imbalanced") -> Dataset:
    """Binary Z (column 0: 0 = a, 1 = b), binary T, Y in {-1, +1}.

    Treated outcomes are +1 in cell a and -1 in cell b. Control outcomes take
    +1 and -1 in alternation inside each cell, so each control cell mean is 0
    (exactly when its count is even).
    """
    p_r, p_o = minimax_laws(epsilon, variant)
    rng = np.random.default_rng(seed)
    cells = np.concatenate([rng.choice(4, size=n_per_source, p=p_r),
                            rng.choice(4, size=n_per_source, p=p_o)])
    z = np.array([0, 0, 1, 1])[cells]
    t = np.array([0, 1, 0, 1])[cells]
    y = np.where(t == 1, np.where(z == 0, 1.0, -1.0), 0.0)
    for src in (slice(0, n_per_source), slice(n_per_source, 2 * n_per_source)):
        for cell in (0, 2):
            idx = np.flatnonzero(cells[src] == cell) + src.start
            idx = rng.permutation(idx)
            y[idx] = np.where(np.arange(idx.size) % 2 == 0, 1.0, -1.0)
    is_rct = np.arange(2 * n_per_source) < n_per_source
    return Dataset(X=z[:, None].astype(float), T=t, Y=y, is_rct=is_rct,
                   probs=AssignmentProbs(np.array([0.5, 0.5])),
                   Z_latent=np.column_stack([z, np.zeros_like(z)]).astype(float),
                   meta={"epsilon": epsilon, "variant": variant, "cells": cells,
                         "p_r": p_r, "p_o": p_o})


# --- linear-quadratic problems ----------------------------------------------

@dataclass
class LQToy:
    """R_o(theta) = 0.5 theta'H theta + b'theta,  g(theta) = A theta - c,
    plus an RCT risk R_r(theta) = 0.5 theta'H_r theta + b_r'theta for weighted fusion.
    """

    H: np.ndarray
    b: np.ndarray
    A: np.ndarray
    c: np.ndarray
    H_r: np.ndarray = None
    b_r: np.ndarray = None
    theta_star: np.ndarray = field(init=False)
    lambda_star: np.ndarray = field(init=False)

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=np.float64))
        self.b = np.asarray(self.b, dtype=np.float64).ravel()
        self.A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        self.c = np.asarray(self.c, dtype=np.float64).ravel()
        if self.H_r is None:
            self.H_r = np.eye(self.dim)
        if self.b_r is None:
            self.b_r = np.zeros(self.dim)
        self.H_r = np.atleast_2d(np.asarray(self.H_r, dtype=np.float64))
        self.b_r = np.asarray(self.b_r, dtype=np.float64).ravel()
        self.theta_star, self.lambda_star = kkt_solve(self.H, self.b, self.A, self.c)

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    @property
    def K(self) -> int:
        return self.A.shape[0]

    def risk(self, theta) -> float:
        return float(0.5 * theta @ self.H @ theta + self.b @ theta)

    def risk_r(self, theta) -> float:
        return float(0.5 * theta @ self.H_r @ theta + self.b_r @ theta)

    def g(self, theta) -> np.ndarray:
        return self.A @ theta - self.c

    def grad_risk(self, theta) -> np.ndarray:
        return self.H @ theta + self.b

    def unconstrained_min(self) -> np.ndarray:
        return np.linalg.solve(self.H, -self.b)

    def weighted_min(self, alpha: float) -> np.ndarray:
        return np.linalg.solve(self.H + alpha * self.H_r, -(self.b + alpha * self.b_r))

    def lagrangian(self, theta, lam) -> float:
        return self.risk(theta) + float(lam @ self.g(theta))

    def dual_value(self, lam) -> float:
        """min over theta of the (unaugmented) Lagrangian."""
        theta = np.linalg.solve(self.H, -(self.b + self.A.T @ lam))
        return self.lagrangian(theta, lam)

    @property
    def risk_gap(self) -> float:
        """R_o(theta*) - min R_o: the price of enforcing the constraint."""
        return self.risk(self.theta_star) - self.risk(self.unconstrained_min())


def kkt_solve(H, b, A, c) -> tuple[np.ndarray, np.ndarray]:
    """Solve  H theta + b + A' lam = 0,  A theta = c."""
    dim, K = H.shape[0], A.shape[0]
    kkt = np.block([[H, A.T], [A, np.zeros((K, K))]])
    sol = np.linalg.solve(kkt, np.concatenate([-b, c]))
    return sol[:dim], sol[dim:]


def _random_spd(dim: int, rng, lo: float, hi: float) -> np.ndarray:
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    eig = rng.uniform(lo, hi, size=dim)
    eig[0], eig[-1] = lo, hi
    return (q * eig) @ q.T


def gen_lq_toy(dim: int, K_constraints: int, seed: int = 0) -> LQToy:
    """Random strongly convex quadratic with K full-rank linear constraints.

    Eigenvalues of H span exactly [0.5, 5].
    """
    if not dim >= K_constraints >= 1:
        raise ValueError("need dim >= K_constraints >= 1")
    rng = np.random.default_rng(seed)
    H = _random_spd(dim, rng, 0.5, 5.0)
    H = 0.5 * (H + H.T)
    b = rng.normal(size=dim)
    A = rng.normal(size=(K_constraints, dim))
    while np.linalg.matrix_rank(A) < K_constraints:
        A = rng.normal(size=(K_constraints, dim))
    c = rng.normal(size=K_constraints)
    H_r = _random_spd(dim, rng, 0.5, 5.0)
    H_r = 0.5 * (H_r + H_r.T)
    b_r = rng.normal(size=dim)
    return LQToy(H=H, b=b, A=A, c=c, H_r=H_r, b_r=b_r)
