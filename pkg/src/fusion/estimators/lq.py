"""Exact and iterative solvers on linear-quadratic toys.

On an :class:`~fusion.datagen.LQToy` every quantity the theory talks about
(constrained optimum, multipliers, saddle gap, weighted-fusion path) has a
closed form, so these routines serve as the reference for the neural trainers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..datagen import LQToy
from ..errors import DivergenceError


@dataclass
class LQRun:
    theta: np.ndarray
    nu: np.ndarray
    g_norms: np.ndarray
    risks: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def g_final(self) -> float:
        return float(self.g_norms[-1])


def project_ball(v: np.ndarray, radius: float) -> np.ndarray:
    n = np.linalg.norm(v)
    return v if n <= radius else v * (radius / n)


def _lmax(M) -> float:
    return float(np.linalg.eigvalsh(M)[-1])


def lq_primal_dual(toy: LQToy, rho: float = 1.0, Lambda: float = 50.0, *,
                   eta: float | None = None, eta_dual: float | None = None,
                   iters: int = 20000, g_stop: float = 0.0, project: bool = True,
                   theta0=None) -> LQRun:
    """Full-gradient primal-dual iteration on the augmented Lagrangian.

    primal: theta <- theta - eta * (H theta + b + A'(nu + rho g(theta)))
    dual:   nu <- Proj_{||nu|| <= Lambda}(nu + eta_dual * g(theta_new))

    Stops early once ||g|| <= ``g_stop``. Defaults: eta = 1 / lmax(H + rho A'A)
    and eta_dual = rho / 2 (at least the Uzawa step eta * lmin(H) when rho = 0).
    """
    H, A = toy.H, toy.A
    aug = H + rho * A.T @ A
    eta = 1.0 / _lmax(aug) if eta is None else eta
    if eta_dual is None:
        eta_dual = rho / 2.0 if rho > 0 else eta * float(np.linalg.eigvalsh(H)[0])
    theta = np.zeros(toy.dim) if theta0 is None else np.array(theta0, dtype=np.float64)
    nu = np.zeros(toy.K)
    g_norms, risks = [], []
    for _ in range(iters):
        g = toy.g(theta)
        theta = theta - eta * (toy.grad_risk(theta) + A.T @ (nu + rho * g))
        g = toy.g(theta)
        nu = nu + eta_dual * g
        if project:
            nu = project_ball(nu, Lambda)
        gn = float(np.linalg.norm(g))
        if not np.isfinite(gn):
            raise DivergenceError("primal-dual iteration diverged", trace=np.array(g_norms))
        g_norms.append(gn)
        risks.append(toy.risk(theta))
        if gn <= g_stop:
            break
    return LQRun(theta=theta, nu=nu, g_norms=np.array(g_norms), risks=np.array(risks))


def saddle_gap(toy: LQToy, theta, lam, Lambda: float) -> float:
    """max_{||l|| <= Lambda} L(theta, l) - min_t L(t, lam) for L = R_o + <l, g>.

    Written as Lambda ||g|| - lam'g + 0.5 grad' H^{-1} grad with
    grad = H theta + b + A'lam, which avoids cancelling two large risk values.
    """
    g = toy.g(theta)
    grad = toy.grad_risk(theta) + toy.A.T @ lam
    return float(Lambda * np.linalg.norm(g) - lam @ g + 0.5 * grad @ np.linalg.solve(toy.H, grad))


def loglinear_fit(values, floor: float = 0.0, tail: float = 0.5) -> tuple[float, float]:
    """Least-squares fit of log(values) against the step index over the tail.

    Only entries above ``floor`` are used; the tail is the last ``tail``
    fraction of them. Returns (slope, R^2).
    """
    v = np.asarray(values, dtype=np.float64)
    idx = np.flatnonzero(v > floor)
    idx = idx[int(len(idx) * (1 - tail)):]
    if idx.size < 3:
        raise ValueError("not enough points above the floor for a tail fit")
    slope, r2 = affine_fit(idx.astype(float), np.log(v[idx]))[1:]
    return slope, r2


def affine_fit(x, y) -> tuple[float, float, float]:
    """Ordinary least squares y ~ a + b x; returns (a, b, R^2)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(coef[1]), r2


def lq_penalty_min(toy: LQToy, rho: float) -> np.ndarray:
    """Exact minimizer of R_o + (rho/2)||g||^2 (the multiplier pinned at zero)."""
    return np.linalg.solve(toy.H + rho * toy.A.T @ toy.A, -(toy.b - rho * toy.A.T @ toy.c))


def lq_penalty_descent(toy: LQToy, rho: float, iters: int = 20000, eta: float | None = None
                       ) -> LQRun:
    """Gradient descent on the penalty objective; identical to the primal-dual loop with nu = 0."""
    run = lq_primal_dual(toy, rho=rho, eta=eta, eta_dual=0.0, iters=iters)
    return run


def penalty_rho_search(toy: LQToy, rhos, tol: float = 1e-3) -> float | None:
    """Smallest rho on the grid whose exact penalty minimizer has ||g|| <= tol."""
    for rho in sorted(rhos):
        if np.linalg.norm(toy.g(lq_penalty_min(toy, rho))) <= tol:
            return float(rho)
    return None


def penalty_condition_numbers(toy: LQToy, rhos) -> np.ndarray:
    """kappa(H + rho A'A) for each rho."""
    return np.array([np.linalg.cond(toy.H + r * toy.A.T @ toy.A) for r in rhos])


def lq_weighted_descent(toy: LQToy, alpha: float, iters: int = 20000, tol: float = 1e-12
                        ) -> np.ndarray:
    """Gradient descent on R_o + alpha R_r (no constraint)."""
    M = toy.H + alpha * toy.H_r
    eta = 1.0 / _lmax(M)
    rhs = toy.b + alpha * toy.b_r
    theta = np.zeros(toy.dim)
    for _ in range(iters):
        grad = M @ theta + rhs
        theta -= eta * grad
        if np.linalg.norm(grad) <= tol:
            break
    return theta


@dataclass(frozen=True)
class PathConstants:
    """Constants bounding the weighted-fusion path on a quadratic instance.

    mu = lmin(H); M_r bounds ||grad R_r|| along the path for alpha <= alpha_max;
    L_g = ||A||_2 is the Lipschitz constant of g.
    """

    mu: float
    M_r: float
    L_g: float
    alpha_max: float

    @property
    def path_slope(self) -> float:
        return self.M_r / self.mu

    @property
    def g_slope(self) -> float:
        return self.L_g * self.M_r / self.mu


def path_constants(toy: LQToy, alpha_max: float) -> PathConstants:
    mu = float(np.linalg.eigvalsh(toy.H)[0])
    radius = (np.linalg.norm(toy.b) + alpha_max * np.linalg.norm(toy.b_r)) / mu
    M_r = float(np.linalg.norm(toy.H_r, 2) * radius + np.linalg.norm(toy.b_r))
    return PathConstants(mu=mu, M_r=M_r, L_g=float(np.linalg.norm(toy.A, 2)), alpha_max=alpha_max)


def alpha_path(toy: LQToy, alphas) -> list[dict]:
    """Closed-form weighted-fusion minimizers and their path statistics."""
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas[0] != 0 or np.any(np.diff(alphas) <= 0):
        raise ValueError("alpha grid must be ascending and start at 0")
    theta0 = toy.weighted_min(0.0)
    rows = []
    for a in alphas:
        th = toy.weighted_min(a)
        rows.append({"alpha": float(a), "r_obs": toy.risk(th), "r_rct": toy.risk_r(th),
                     "g_norm": float(np.linalg.norm(toy.g(th))),
                     "dist_from_0": float(np.linalg.norm(th - theta0))})
    return rows


def engineer_exclusion_toy(toy: LQToy, g0_norm: float = 0.5) -> LQToy:
    """Return a copy whose unconstrained minimizer violates the constraint by ``g0_norm``.

    c is moved to A theta_0 - g0_norm * u for a fixed unit u, so the
    observational price of feasibility delta_o is strictly positive.
    """
    theta0 = toy.unconstrained_min()
    u = np.ones(toy.K) / np.sqrt(toy.K)
    return LQToy(H=toy.H, b=toy.b, A=toy.A, c=toy.A @ theta0 - g0_norm * u,
                 H_r=toy.H_r, b_r=toy.b_r)


@dataclass(frozen=True)
class ExclusionConstants:
    delta_o: float
    B_r: float
    alpha_bar: float
    c0: float
    eps0: float
    mu_o: float
    L_o: float
    r_star: float


def exclusion_constants(toy: LQToy, alpha_cap: float = 1.0) -> ExclusionConstants:
    """Constants of the exclusion region computed from the instance.

    delta_o = R_o(theta*) - min R_o. B_r is the range of R_r over the ball that
    contains every weighted minimizer with alpha <= alpha_cap. alpha_bar =
    delta_o / (2 B_r) (capped at alpha_cap). c0 comes from the linear lower
    bound on ||g|| along the path, and eps0 = (mu_o / L_o^2) c0^2 with
    mu_o = lmin(H)/2, L_o = ||A||_2.
    """
    consts = path_constants(toy, alpha_cap)
    radius = (np.linalg.norm(toy.b) + alpha_cap * np.linalg.norm(toy.b_r)) / consts.mu
    theta_r = np.linalg.solve(toy.H_r, -toy.b_r)
    r_min = toy.risk_r(theta_r)
    r_sup = 0.5 * np.linalg.norm(toy.H_r, 2) * radius ** 2 + np.linalg.norm(toy.b_r) * radius
    B_r = float(r_sup - r_min)
    delta_o = toy.risk_gap
    alpha_bar = min(delta_o / (2.0 * B_r), alpha_cap)
    g0 = float(np.linalg.norm(toy.g(toy.unconstrained_min())))
    c0 = g0 - consts.g_slope * alpha_bar
    mu_o, L_o = consts.mu / 2.0, consts.L_g
    return ExclusionConstants(delta_o=delta_o, B_r=B_r, alpha_bar=alpha_bar, c0=c0,
                              eps0=mu_o / L_o ** 2 * max(c0, 0.0) ** 2, mu_o=mu_o, L_o=L_o,
                              r_star=toy.risk(toy.theta_star))


def risk_moment_link(toy: LQToy, theta) -> dict:
    """Compare excess risk with (mu_o / L_o^2) ||g||^2 at ``theta``.

    ``plain`` uses R_o(theta) - R_o*; ``lagrangian`` adds lambda*'g(theta),
    which is the form that holds for every theta on a quadratic instance.
    """
    mu_o = float(np.linalg.eigvalsh(toy.H)[0]) / 2.0
    L_o = float(np.linalg.norm(toy.A, 2))
    g = toy.g(theta)
    bound = mu_o / L_o ** 2 * float(g @ g)
    excess = toy.risk(theta) - toy.risk(toy.theta_star)
    return {"excess": excess, "lagrangian_excess": excess + float(toy.lambda_star @ g),
            "bound": bound}
