import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fusion.data import AssignmentProbs, Dataset
from fusion.datagen import SyntheticConfig, conditional_mean, gen_synthetic, potential_outcomes
from fusion.errors import EmptyBatchError, InvalidTreatmentError, SourceError
from fusion.moments import (baseline_invariance_check, empirical_moment_residual, moment_decomposition,
                            moment_grad, psi, psi_rows)
from fusion.nets import JointModel, PredictorNet, RepresentationNet

P2 = AssignmentProbs(np.array([0.5, 0.5]))


def rct_batch(X, T, Y, probs=P2):
    return Dataset(X=X, T=T, Y=Y, is_rct=np.ones(len(T), bool), probs=probs)


def test_psi_zero_residual():
    assert not psi(1.3, 1, 1.3, P2).any()


def test_psi_binary_example():
    assert psi(2.0, 1, 1.0, P2) == pytest.approx([0.5])


def test_psi_three_arm_example():
    probs = AssignmentProbs(np.array([0.5, 0.25, 0.25]))
    assert psi(4.0, 0, 0.0, probs) == pytest.approx([-1.0, -1.0])


def test_psi_invalid_treatment():
    with pytest.raises(InvalidTreatmentError):
        psi(1.0, 2, 0.0, P2)
    with pytest.raises(InvalidTreatmentError):
        psi(1.0, -1, 0.0, P2)


@given(y=st.floats(-10, 10), m=st.floats(-10, 10), lam=st.floats(-5, 5), t=st.integers(0, 2))
def test_psi_linear_in_residual(y, m, lam, t):
    probs = AssignmentProbs(np.array([0.5, 0.3, 0.2]))
    assert np.allclose(psi(lam * (y - m), t, 0.0, probs), lam * psi(y, t, m, probs), atol=1e-9)


def test_memorizing_predictor_has_zero_residual(rng):
    X, T, Y = rng.normal(size=(50, 2)), rng.integers(0, 2, 50), rng.normal(size=50)
    lookup = dict(zip(map(bytes, X), Y))
    res = empirical_moment_residual(rct_batch(X, T, Y),
                                    lambda X, T: np.array([lookup[bytes(r)] for r in X]))
    assert res.norm == 0.0


def test_single_row_batch_equals_psi():
    batch = rct_batch(np.array([[0.0]]), np.array([1]), np.array([3.0]))
    res = empirical_moment_residual(batch, lambda X, T: np.full(len(T), 1.0))
    assert np.array_equal(res.g, psi(3.0, 1, 1.0, P2)) and res.n_r_used == 1


def test_residual_errors(rng):
    X, T, Y = rng.normal(size=(4, 2)), np.array([0, 1, 0, 1]), rng.normal(size=4)
    mixed = Dataset(X=X, T=T, Y=Y, is_rct=np.array([1, 1, 0, 0], bool), probs=P2)
    with pytest.raises(SourceError):
        empirical_moment_residual(mixed, lambda X, T: 0 * Y)
    empty = rct_batch(np.empty((0, 2)), np.empty(0, int), np.empty(0))
    with pytest.raises(EmptyBatchError):
        empirical_moment_residual(empty, lambda X, T: np.empty(0))


def test_residual_at_true_mean_within_noise():
    data = gen_synthetic(SyntheticConfig(n_rct=10_000, n_obs=10, n_cont=12, n_cat=4, seed=5)).rct()
    m_true = conditional_mean(data)
    res = empirical_moment_residual(data, lambda X, T: m_true)
    terms = psi_rows(data.Y, data.T, m_true, data.probs.rows(data.n))
    assert res.norm <= 4 * terms.std(axis=0, ddof=1).max() / np.sqrt(data.n)


def _model(rng):
    return JointModel(RepresentationNet(3, 2, (4,), seed=int(rng.integers(1000))),
                      PredictorNet(2, 3, (3,), seed=int(rng.integers(1000))))


def test_moment_grad_matches_finite_differences(rng):
    probs = AssignmentProbs(np.array([0.4, 0.35, 0.25]))
    for _ in range(10):
        model = _model(rng)
        batch = rct_batch(rng.normal(size=(12, 3)), rng.integers(0, 3, 12), rng.normal(size=12),
                          probs)
        jac = moment_grad(batch, model)
        num = np.empty_like(jac)
        for i in range(model.n_params):
            orig = model.params[i]
            model.params[i] = orig + 1e-5
            up = empirical_moment_residual(batch, model).g
            model.params[i] = orig - 1e-5
            down = empirical_moment_residual(batch, model).g
            model.params[i] = orig
            num[:, i] = (up - down) / 2e-5
        assert np.max(np.abs(jac - num)) / np.max(np.abs(num)) < 1e-4


def test_moment_grad_for_constant_predictor(rng):
    # no trunk, zero weights: m = head bias c_t, so dg_k/dc_t = -mean(1{T=k}-p_k) 1{T=t}
    probs = AssignmentProbs(np.array([0.5, 0.3, 0.2]))
    pred = PredictorNet(2, 3, (), scheme="zeros")
    model = JointModel(None, pred)
    T = rng.integers(0, 3, 40)
    batch = rct_batch(rng.normal(size=(40, 2)), T, rng.normal(size=40), probs)
    jac = moment_grad(batch, model)
    # tie all heads into one constant c: dg_k/dc = -mean(1{T=k} - p_k)
    bias_cols = [pred.head_indices(t)[-1] for t in range(3)]
    dgdc = jac[:, bias_cols].sum(axis=1)
    expected = -np.array([np.mean((T == k) - probs.p[k]) for k in (1, 2)])
    assert np.allclose(dgdc, expected, atol=1e-15)


def test_moment_grad_nonzero_at_zero_residual(rng):
    model = _model(rng)
    X, T = rng.normal(size=(10, 3)), rng.integers(0, 3, 10)
    Y = model.predict(X, T)
    batch = rct_batch(X, T, Y, AssignmentProbs(np.array([0.4, 0.35, 0.25])))
    assert empirical_moment_residual(batch, model).norm < 1e-12
    assert np.abs(moment_grad(batch, model)).max() > 0


def test_baseline_invariance_trivial_cases(rng):
    T = rng.integers(0, 2, 200)
    batch = rct_batch(rng.normal(size=(200, 2)), T, np.zeros(200))
    assert not baseline_invariance_check(batch, lambda X: np.zeros(len(X))).any()
    p1 = T.mean()
    emp = AssignmentProbs(np.array([1 - p1, p1]))
    z = baseline_invariance_check(batch, lambda X: np.ones(len(X)), emp)
    assert np.allclose(z, 0.0, atol=1e-9)


def test_baseline_invariance_randomized_draws(rng):
    n = 100_000
    batch = rct_batch(rng.normal(size=(n, 3)), (rng.random(n) < 0.5).astype(int), np.zeros(n))
    assert np.all(np.abs(baseline_invariance_check(batch, lambda X: X[:, 0])) <= 4)


def test_covariate_shift_of_predictor_within_noise():
    data = gen_synthetic(SyntheticConfig(n_rct=100_000, n_obs=10, n_cont=12, n_cat=4, seed=2)).rct()
    base = conditional_mean(data)
    u = np.tanh(data.X[:, 0]) * 2
    g0 = empirical_moment_residual(data, lambda X, T: base).g
    g1 = empirical_moment_residual(data, lambda X, T: base + u).g
    dev = (data.T == 1) - 0.5
    band = 4 * np.std(dev * u, ddof=1) / np.sqrt(data.n)
    assert np.all(np.abs(g0 - g1) <= band)


def test_decomposition_exact(small_data, rng):
    rct = small_data.rct()
    u, h = rng.normal(size=rct.n), rng.normal(size=(rct.n, 1))
    direct, base, causal = moment_decomposition(potential_outcomes(rct), rct.T, u, h,
                                                rct.probs.rows(rct.n))
    assert np.max(np.abs(direct - (base + causal))) <= 1e-12
