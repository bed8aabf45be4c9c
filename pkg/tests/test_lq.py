import numpy as np
import pytest

from fusion.datagen import LQToy, gen_lq_toy
from fusion.estimators.lq import (affine_fit, alpha_path, engineer_exclusion_toy,
                                  exclusion_constants, loglinear_fit, lq_penalty_descent,
                                  lq_penalty_min, lq_primal_dual, lq_weighted_descent,
                                  path_constants, penalty_condition_numbers, penalty_rho_search,
                                  project_ball, risk_moment_link, saddle_gap)
from fusion.estimators.minimax import (empirical_treated_moment, solve_minimax_toy,
                                       treated_moment)
from fusion.datagen import gen_minimax_toy

TOYS = [gen_lq_toy(10, 3, seed=s) for s in range(20)]


def test_project_ball():
    v = np.array([3.0, 4.0])
    assert np.allclose(project_ball(v, 1.0), [0.6, 0.8])
    assert project_ball(v, 10.0) is v


def test_saddle_gap_zero_at_kkt_point():
    toy = TOYS[0]
    assert saddle_gap(toy, toy.theta_star, toy.lambda_star, 50.0) == pytest.approx(0, abs=1e-10)


def test_saddle_gap_matches_direct_definition():
    toy, rng = TOYS[1], np.random.default_rng(0)
    theta, lam = rng.normal(size=10), rng.normal(size=3)
    g = toy.g(theta)
    direct = toy.risk(theta) + 50.0 * np.linalg.norm(g) - toy.dual_value(lam)
    assert saddle_gap(toy, theta, lam, 50.0) == pytest.approx(direct, rel=1e-10)


@pytest.mark.parametrize("toy", TOYS, ids=lambda t: "")
def test_pd_feasibility_against_saddle_gap(toy):
    run = lq_primal_dual(toy, rho=1.0, Lambda=50.0, g_stop=1e-8, iters=50_000)
    eps = saddle_gap(toy, run.theta, run.nu, 50.0)
    assert 50.0 * run.g_final <= 1.1 * eps
    slope, r2 = loglinear_fit(run.g_norms, floor=1e-8)
    assert slope < 0 and r2 > 0.95
    assert np.allclose(run.theta, toy.theta_star, atol=1e-6)


def test_pd_without_constraint_is_obs_descent():
    toy = TOYS[2]
    a = lq_primal_dual(toy, rho=0.0, Lambda=0.0, eta=0.1, eta_dual=0.0, iters=300)
    theta = np.zeros(10)
    for _ in range(300):
        theta = theta - 0.1 * toy.grad_risk(theta)
    assert np.array_equal(a.theta, theta)


def test_penalty_descent_reaches_penalty_minimizer():
    toy = TOYS[3]
    run = lq_penalty_descent(toy, 10.0, iters=20_000)
    assert np.allclose(run.theta, lq_penalty_min(toy, 10.0), atol=1e-8)
    assert not run.nu.any()


@pytest.mark.parametrize("toy", TOYS, ids=lambda t: "")
def test_penalty_conditioning(toy):
    rhos = [1.0, 10.0, 100.0, 1000.0]
    kappa = penalty_condition_numbers(toy, rhos)
    _, slope, r2 = affine_fit(rhos, kappa)
    assert slope > 0 and r2 > 0.99
    assert lq_primal_dual(toy, rho=1.0, g_stop=1e-3, iters=50_000).g_final <= 1e-3
    need = penalty_rho_search(toy, [10.0 ** k for k in range(9)], 1e-3)
    assert need is not None and need >= 10.0
    # at the PD step size the penalty method stalls far above PD's final residual
    pd_g = lq_primal_dual(toy, rho=1.0, iters=5000).g_final
    pen_g = float(np.linalg.norm(toy.g(lq_penalty_min(toy, 1.0))))
    assert pen_g >= 10 * pd_g


def test_affine_fit_exact():
    a, b, r2 = affine_fit([0, 1, 2, 3], [1, 3, 5, 7])
    assert (a, b, r2) == pytest.approx((1, 2, 1))


def test_weighted_descent_matches_closed_form():
    for toy in TOYS[:5]:
        for alpha in (0.0, 0.5, 3.0):
            closed = np.linalg.solve(toy.H + alpha * toy.H_r, -toy.b - alpha * toy.b_r)
            assert np.max(np.abs(lq_weighted_descent(toy, alpha) - closed)) <= 1e-6


@pytest.mark.parametrize("toy", TOYS, ids=lambda t: "")
def test_weighted_path_laws(toy):
    c = path_constants(toy, 2.0)
    rows = alpha_path(toy, np.linspace(0, 2.0, 201))
    g0 = rows[0]["g_norm"]
    for r in rows:
        assert r["dist_from_0"] <= c.path_slope * r["alpha"] + 1e-8
        assert r["g_norm"] >= g0 - c.g_slope * r["alpha"] - 1e-8


def test_alpha_path_grid_validation():
    with pytest.raises(ValueError):
        alpha_path(TOYS[0], [0.5, 1.0])


@pytest.mark.parametrize("toy", TOYS, ids=lambda t: "")
def test_exclusion_region_empty(toy):
    ex = engineer_exclusion_toy(toy, 0.5)
    e = exclusion_constants(ex)
    assert e.delta_o > 0 and e.c0 > 0 and e.alpha_bar > 0
    for r in alpha_path(ex, np.linspace(0, e.alpha_bar, 201)):
        assert not (r["r_obs"] < e.r_star + e.eps0 and r["g_norm"] < e.c0)


def test_risk_moment_link_corrected_form():
    plain_violations = 0
    for toy in TOYS:
        ex = engineer_exclusion_toy(toy, 0.5)
        for a in np.linspace(0, 2, 21):
            r = risk_moment_link(ex, ex.weighted_min(a))
            assert r["lagrangian_excess"] >= r["bound"] - 1e-12
            plain_violations += r["excess"] < r["bound"]
    # the uncorrected inequality fails near alpha = 0, where R_o lies below R_o*
    assert plain_violations > 0


# --- two-cell minimax toy ------------------------------------------------------

def test_minimax_symmetric():
    res = solve_minimax_toy(0.0)
    assert res.inf_abs_g == pytest.approx(0, abs=1e-12) and res.alpha_argmin == pytest.approx(0)


def test_minimax_eps_02():
    res = solve_minimax_toy(0.2)
    assert res.inf_abs_g <= 5e-4 and res.alpha_argmin == pytest.approx(0.4, abs=1e-3)
    assert res.contradicts_claim and "discrepancy documented" in res.verdict


def test_minimax_eps_08_boundary():
    res = solve_minimax_toy(0.8)
    assert res.inf_abs_g == pytest.approx(0.3, abs=1e-12)
    assert res.alpha_argmin == pytest.approx(1.0)
    assert not res.law_valid


def test_treated_moment_formula():
    alphas = np.linspace(-1, 1, 11)
    assert np.allclose(treated_moment(0.3, alphas), 0.3 - alphas / 2)


def test_minimax_grid_must_cover():
    with pytest.raises(ValueError):
        solve_minimax_toy(0.2, np.linspace(0, 1, 11))


def test_empirical_moment_tracks_population():
    d = gen_minimax_toy(0.2, 200_000, seed=0)
    for a in (0.0, 0.4, 1.0):
        assert empirical_treated_moment(d, a) == pytest.approx(0.2 - a / 2, abs=0.01)
