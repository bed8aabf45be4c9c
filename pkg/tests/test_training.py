import json
from dataclasses import replace

import numpy as np
import pytest

from conftest import cell_means
from fusion.data import AssignmentProbs, Dataset
from fusion.datagen import SyntheticConfig, gen_synthetic
from fusion.errors import ConfigError, DivergenceError, EmptyArmError, SourceError
from fusion.estimators.training import (METHODS, TRACE_COLUMNS, ModelBundle, TrainConfig,
                                        alpha_sweep, moment_norm, q_hat_objective, q_hat_value,
                                        train, train_ablation, train_constrained_pd,
                                        train_obs_only, train_penalty, train_rct_only,
                                        train_t_learner, train_weighted)

FAST = dict(iters=60, batch_obs=64, batch_rct=64, critic_steps=2, rep_dim=4, phi_hidden=(8,),
            predictor_hidden=(8,), critic_hidden=(8,), log_every=1)


def cfg(**kw):
    return TrainConfig(**{**FAST, **kw})


def same_params(a, b):
    return a.model.params.tobytes() == b.model.params.tobytes()


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(rho=-1)
    with pytest.raises(ConfigError):
        TrainConfig(iters=0)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"nope": 1})
    c = cfg(seed=3)
    assert TrainConfig.from_dict(c.to_dict()) == c


def test_step_schedule():
    c = TrainConfig(eta_primal=0.1, eta_decay_steps=1000)
    assert c.step_size(0) == 0.1 and c.step_size(3000) == pytest.approx(0.05)


def test_disabled_constraint_equals_obs_descent(small_data):
    a, ta = train_constrained_pd(small_data, cfg(rho=0, lambda_ov=0, Lambda_dual=0))
    b, tb = train_obs_only(small_data, cfg())
    assert same_params(a, b)
    assert np.array_equal(ta.column("r_obs"), tb.column("r_obs"))
    assert not a.nu.any()


def test_dual_only_equals_pd_without_overlap_term(small_data):
    a, ta = train_ablation(small_data, cfg(), "dual_only")
    b, tb = train_constrained_pd(small_data, cfg(lambda_ov=0))
    assert same_params(a, b) and ta.records == tb.records


def test_penalty_with_zero_rho_is_obs_descent(small_data):
    a, _ = train_penalty(small_data, cfg(rho=0, lambda_ov=0))
    b, _ = train_obs_only(small_data, cfg())
    assert same_params(a, b)


def test_weighted_zero_alpha_is_obs_only(small_data):
    a, _ = train_weighted(small_data, cfg(alpha=0))
    b, _ = train_obs_only(small_data, cfg())
    assert same_params(a, b)


def test_determinism(small_data):
    a, ta = train_constrained_pd(small_data, cfg(seed=5))
    b, tb = train_constrained_pd(small_data, cfg(seed=5))
    assert same_params(a, b) and ta.records == tb.records
    c, _ = train_constrained_pd(small_data, cfg(seed=6))
    assert not same_params(a, c)


def test_trace_contents(small_data, tmp_path):
    _, tr = train_constrained_pd(small_data, cfg(log_every=10))
    assert len(tr) == 7  # steps 0, 10, ..., 50 and the final step
    for c in TRACE_COLUMNS:
        assert np.all(np.isfinite(tr.column(c)))
    tr.to_csv(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == ",".join(TRACE_COLUMNS)


def test_dual_stays_in_ball(small_data):
    b, tr = train_constrained_pd(small_data, cfg(Lambda_dual=0.01, eta_dual=1.0))
    assert np.linalg.norm(b.nu) <= 0.01 + 1e-15
    assert np.all(tr.column("nu_norm") <= 0.01 + 1e-15)


def test_q_hat_recomputed_from_trace(small_data):
    c = cfg(mu_o_over_Lg2=0.7, c_ov=1.3)
    _, tr = train(small_data, c, "q_hat")
    recomputed = [q_hat_value(r, g, e, c) for r, g, e in
                  zip(tr.column("r_obs"), tr.column("g_norm"), tr.column("eps_ov"))]
    assert np.max(np.abs(np.array(recomputed) - tr.column("q_hat"))) <= 1e-12
    assert np.array_equal(tr.column("objective"), tr.column("q_hat"))


def test_q_hat_identities(small_data):
    c = cfg()
    bundle, _ = train_obs_only(small_data, c)
    assert q_hat_value(0.8, 0.0, 0.0, c) == 0.8
    pen1 = q_hat_value(0.0, 0.1, 0.05, c)
    pen2 = q_hat_value(0.0, 0.2, 0.10, c)
    assert pen2 == pytest.approx(4 * pen1)
    obs = small_data.obs()
    r_obs = np.mean((obs.Y - bundle.predict(obs.X, obs.T)) ** 2)
    g = moment_norm(bundle, small_data.rct())
    assert q_hat_objective(bundle, small_data, c, eps_ov=0.2) == pytest.approx(
        r_obs + (g + 0.2) ** 2, abs=1e-12)


def test_bundle_json_roundtrip(small_data):
    b, _ = train_constrained_pd(small_data, cfg())
    c = ModelBundle.from_json(b.to_json())
    X = small_data.X[:20]
    assert np.array_equal(b.predict(X, small_data.T[:20]), c.predict(X, small_data.T[:20]))
    assert np.array_equal(b.critic.params, c.critic.params) and np.array_equal(b.nu, c.nu)
    payload = json.loads(b.to_json())
    assert len(payload["params"]) == b.model.n_params


def test_source_errors(small_data):
    with pytest.raises(SourceError):
        train_constrained_pd(small_data.obs(), cfg())
    with pytest.raises(SourceError):
        train_obs_only(small_data.rct(), cfg())
    with pytest.raises(ConfigError):
        train(small_data, cfg(), "unknown")
    with pytest.raises(ConfigError):
        train_ablation(small_data, cfg(), "pd")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_error(small_data):
    with pytest.raises(DivergenceError) as err:
        train_obs_only(small_data, cfg(eta_primal=1e6, use_phi=False, iters=200))
    assert err.value.trace is not None


def test_every_method_runs(small_data):
    for m in METHODS:
        bundle, tr = train(small_data, cfg(iters=5), m)
        assert bundle.method == m and len(tr) == 5


def test_large_alpha_approaches_rct_only(small_data):
    from fusion.harness.experiments import split_heldout

    tr, te = split_heldout(small_data, 0.2, 0)
    alpha = 1e4
    base = cfg(iters=300, batch_rct=8, eta_primal=3e-3)
    w, _ = train_weighted(tr, replace(base, alpha=alpha, eta_primal=base.eta_primal / (1 + alpha)))
    r, _ = train_rct_only(tr, base)
    rct = te.rct()
    risk = lambda b: np.mean((rct.Y - b.predict(rct.X, rct.T)) ** 2)
    assert risk(w) == pytest.approx(risk(r), rel=0.05)


def test_alpha_sweep_table(small_data):
    rows = alpha_sweep(small_data, [0.0, 1.0, 10.0], cfg(iters=20))
    assert [r["alpha"] for r in rows] == [0.0, 1.0, 10.0]
    assert rows[0]["dist_from_0"] == 0.0
    assert set(rows[0]) == {"alpha", "r_obs", "r_rct", "g_norm", "dist_from_0"}
    with pytest.raises(ValueError):
        alpha_sweep(small_data, [1.0, 2.0], cfg())


# --- T-learner ----------------------------------------------------------------

def linear_data(rng, n=500, effect=1.7, noise=0.0, treat=None):
    X = rng.normal(size=(n, 3))
    T = rng.integers(0, 2, n) if treat is None else treat(X)
    Y = X @ np.array([0.5, -1.0, 2.0]) + effect * T + noise * rng.normal(size=n)
    return Dataset(X=X, T=T, Y=Y, is_rct=np.ones(n, bool), probs=AssignmentProbs([0.5, 0.5]))


def test_t_learner_linear_recovers_effect(rng):
    data = linear_data(rng)
    tl = train_t_learner(data, TrainConfig(), hidden=())
    assert np.max(np.abs(tl.effects(data.X) - 1.7)) <= 1e-3


def test_t_learner_identical_arms(rng):
    data = linear_data(rng, n=4000, effect=0.0, noise=1.0)
    tl = train_t_learner(data, TrainConfig(), hidden=())
    eff = tl.effects(data.X)
    assert abs(eff.mean()) <= 4 * np.sqrt(2.0 / 2000)


def test_t_learner_neural_arms_run(rng):
    data = linear_data(rng, n=300)
    tl = train_t_learner(data, cfg(iters=50))
    assert tl.effects(data.X).shape == (300,)


def test_t_learner_empty_arm(rng):
    data = linear_data(rng, treat=lambda X: np.zeros(len(X), int))
    with pytest.raises(EmptyArmError):
        train_t_learner(data, TrainConfig(), hidden=())


def test_t_learner_confounding_bias():
    data = gen_synthetic(SyntheticConfig(n_rct=5000, n_obs=20_000, n_cont=12, n_cat=4, seed=0))
    truth = data.tau_true
    bias = {}
    for rows in ("rct", "obs"):
        tl = train_t_learner(data, TrainConfig(), hidden=(), rows=rows)
        sel = data.is_rct if rows == "rct" else ~data.is_rct
        bias[rows] = abs(np.mean(tl.effects(data.X[sel]) - truth[sel]))
    assert bias["obs"] >= 5 * bias["rct"]


# --- paired runs on the shipped grid ---------------------------------------------

@pytest.mark.slow
def test_ipm_only_residual_not_below_dual_only(benchmark_rows):
    g = cell_means(benchmark_rows[0], "g_norm")
    assert g[("ipm_only", 0.0)] >= g[("dual_only", 0.0)]


@pytest.mark.slow
def test_ipm_only_reduces_discrepancy(benchmark_rows):
    ipm = cell_means(benchmark_rows[0], "ipm")
    assert ipm[("ipm_only", 0.0)] <= 0.75 * ipm[("obs_only", 0.0)]


@pytest.mark.slow
def test_pd_heldout_residual(benchmark_rows):
    g = cell_means(benchmark_rows[0], "g_norm")
    assert g[("pd", 0.0)] <= 0.05
    assert g[("obs_only", 0.0)] >= 3 * g[("pd", 0.0)]
