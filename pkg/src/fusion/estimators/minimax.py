"""Two-cell construction for the overlap/feasibility lower bound.

Treated outcomes have mean +1 in cell a and -1 in cell b, control outcomes mean
0, and the model class predicts a single constant alpha for every treated
unit. The treated-arm moment is g(alpha) = sum_z P_r(z, 1) (E[Y | z, 1] - alpha).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import Dataset


@dataclass(frozen=True)
class MinimaxResult:
    epsilon: float
    inf_abs_g: float
    alpha_argmin: float
    claimed_lower_bound: float
    law_valid: bool

    @property
    def contradicts_claim(self) -> bool:
        return self.inf_abs_g < self.claimed_lower_bound

    @property
    def verdict(self) -> str:
        if self.contradicts_claim:
            approx = "≈ 0" if self.inf_abs_g <= 5e-4 else f"= {self.inf_abs_g:.3g}"
            return (f"measured inf |g| {approx} at alpha = {self.alpha_argmin:.4g}; "
                    f"theorem claims >= c*eps = {self.claimed_lower_bound:.3g} (c = 1); "
                    "discrepancy documented")
        return (f"measured inf |g| = {self.inf_abs_g:.3g} at alpha = {self.alpha_argmin:.4g}; "
                f"consistent with the claimed bound {self.claimed_lower_bound:.3g}")

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "inf_abs_g": self.inf_abs_g,
                "alpha_argmin": self.alpha_argmin,
                "claimed_lower_bound": self.claimed_lower_bound,
                "law_valid": self.law_valid, "contradicts_claim": self.contradicts_claim,
                "verdict": self.verdict}


def treated_moment(epsilon: float, alpha) -> np.ndarray:
    """Population g(alpha) under the imbalanced randomized law.

    P_r(a,1) = 1/4 + eps/2 and P_r(b,1) = 1/4 - eps/2, so
    g = (P_r(a,1) - P_r(b,1)) - alpha * P_r(T=1) = eps - alpha / 2.
    """
    p_a1, p_b1 = 0.25 + epsilon / 2, 0.25 - epsilon / 2
    alpha = np.asarray(alpha, dtype=np.float64)
    return p_a1 * (1.0 - alpha) + p_b1 * (-1.0 - alpha)


def solve_minimax_toy(epsilon: float, alpha_grid=None, c: float = 1.0) -> MinimaxResult:
    """Grid infimum of |g(alpha)| over alpha in [-1, 1] (default step 1e-3)."""
    grid = np.linspace(-1.0, 1.0, 2001) if alpha_grid is None else np.asarray(alpha_grid, float)
    if grid.min() > -1.0 or grid.max() < 1.0:
        raise ValueError("alpha grid must cover [-1, 1]")
    vals = np.abs(treated_moment(epsilon, grid))
    i = int(np.argmin(vals))
    return MinimaxResult(epsilon=float(epsilon), inf_abs_g=float(vals[i]),
                         alpha_argmin=float(grid[i]), claimed_lower_bound=c * float(epsilon),
                         law_valid=bool(0.0 <= epsilon <= 0.5))


def empirical_treated_moment(data: Dataset, alpha: float) -> float:
    """Sample version of g(alpha) on the RCT rows of a sampled two-cell dataset."""
    r = data.is_rct
    return float(np.mean((data.T[r] == 1) * (data.Y[r] - alpha)))
