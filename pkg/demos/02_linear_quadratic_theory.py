"""Constrained estimation on linear-quadratic toys with closed-form answers.

Primal-dual updates reach the constraint at a small penalty weight, while the
pure penalty method needs a much larger weight and a worse-conditioned system.
Weighted fusion moves along a Lipschitz path and cannot reach the constrained
region while staying near the observational optimum.
"""

from fusion.datagen import gen_lq_toy
from fusion.estimators.lq import (alpha_path, engineer_exclusion_toy, exclusion_constants,
                                  lq_primal_dual, penalty_condition_numbers, penalty_rho_search,
                                  path_constants, saddle_gap)

toy = gen_lq_toy(10, 3, seed=0)
run = lq_primal_dual(toy, rho=1.0, Lambda=50.0, g_stop=1e-8, iters=50_000)
gap = saddle_gap(toy, run.theta, run.nu, 50.0)
print(f"primal-dual: |g| = {run.g_final:.2e} after {run.g_norms.size} steps; "
      f"Lambda*|g| = {50 * run.g_final:.2e} <= saddle gap {gap:.2e}")

rhos = (1.0, 10.0, 100.0, 1000.0)
print("penalty condition numbers:", " ".join(f"{k:.0f}" for k in penalty_condition_numbers(toy, rhos)))
print("penalty weight needed for |g| <= 1e-3:",
      penalty_rho_search(toy, [10.0 ** k for k in range(9)], 1e-3))

c = path_constants(toy, 2.0)
for r in alpha_path(toy, [0.0, 0.5, 1.0, 2.0]):
    print(f"alpha={r['alpha']:.1f}  |theta-theta0|={r['dist_from_0']:.3f} "
          f"<= {c.path_slope * r['alpha']:.3f}   |g|={r['g_norm']:.3f}")

ex = engineer_exclusion_toy(toy, g0_norm=0.5)
e = exclusion_constants(ex)
print(f"exclusion: delta_o={e.delta_o:.3f}, c0={e.c0:.3f}, eps0={e.eps0:.3f}, alpha_bar={e.alpha_bar:.3f}")
