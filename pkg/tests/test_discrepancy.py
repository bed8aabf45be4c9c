import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import spearmanr

from fusion.data import AssignmentProbs, Dataset
from fusion.datagen import SyntheticConfig, all_control_obs, gen_synthetic
from fusion.discrepancy import (QuantileBinner, conditional_assignment_mismatch, critic_ipm_step,
                                critic_objective, joint_features, marginal_treatment_tv, mmd_joint)
from fusion.errors import EmptyBatchError
from fusion.nets import CriticNet


def brute_mmd(a, b, bw):
    k = lambda u, v: np.exp(-np.sum((u - v) ** 2) / (2 * bw * bw))
    kaa = np.mean([k(x, y) for x in a for y in a])
    kbb = np.mean([k(x, y) for x in b for y in b])
    kab = np.mean([k(x, y) for x in a for y in b])
    return np.sqrt(max(kaa + kbb - 2 * kab, 0))


def test_mmd_matches_pairwise_sums(rng):
    a, b = rng.normal(size=(15, 3)), rng.normal(1, 1, size=(11, 3))
    assert mmd_joint(a, b, 1.3).value == pytest.approx(brute_mmd(a, b, 1.3), abs=1e-12)


def test_mmd_identical_samples(rng):
    a = rng.normal(size=(40, 3))
    assert mmd_joint(a, a).value <= 1e-12


def test_mmd_disjoint_point_masses():
    a, b = np.zeros((5, 2)), np.full((7, 2), 100.0)
    val = mmd_joint(a, b, bandwidth=1.0).value
    assert val == pytest.approx(np.sqrt(2), rel=1e-12)


def test_mmd_null_band(rng):
    a, b = rng.normal(size=(2000, 4)), rng.normal(size=(2000, 4))
    assert mmd_joint(a, b).value <= 0.05


def test_mmd_empty():
    with pytest.raises(EmptyBatchError):
        mmd_joint(np.empty((0, 2)), np.ones((3, 2)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_mmd_symmetry_and_permutation(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(20, 2)), rng.normal(0.5, 1, size=(25, 2))
    v = mmd_joint(a, b, 1.0).value
    assert mmd_joint(b, a, 1.0).value == pytest.approx(v, abs=1e-12)
    assert mmd_joint(a[rng.permutation(20)], b[rng.permutation(25)], 1.0).value == \
        pytest.approx(v, abs=1e-12)
    assert mmd_joint(a, a, 1.0).value == 0.0


def test_critic_constant_output_gives_zero(rng):
    critic = CriticNet(2, 2, (4,), seed=0)
    critic.params[:] = 0.0
    critic.params[-1] = 0.3  # output bias only: d is constant tanh(0.3)
    value, _, _ = critic_objective(critic, rng.normal(size=(5, 2)), [0, 1, 0, 1, 1],
                                   rng.normal(size=(7, 2)), [0] * 7)
    assert value == pytest.approx(0.0, abs=1e-15)


def test_critic_symmetric_batches_give_zero(rng):
    critic = CriticNet(2, 2, (4,), seed=3)
    z, t = rng.normal(size=(6, 2)), rng.integers(0, 2, 6)
    value, _, _ = critic_objective(critic, z, t, z, t)
    assert value == pytest.approx(0.0, abs=1e-15)


def test_critic_grows_on_separated_clusters():
    z_r = np.linspace(1.0, 2.0, 20)[:, None]
    z_o = np.linspace(-2.0, -1.0, 20)[:, None]
    t = np.zeros(20, int)
    critic = CriticNet(1, 1, (4,), seed=0)
    values = []
    for _ in range(200):
        critic, est = critic_ipm_step(critic, z_r, t, z_o, t, 0.05)
        values.append(est.raw)
    values = np.array(values)
    assert np.all(np.diff(values) >= -1e-12)
    # sup over bounded critics is 2; the ascent approaches it
    assert 0.5 < values[-1] <= 2.0


def test_tv_identical_marginals():
    d = Dataset(X=np.zeros((4, 1)), T=[0, 1, 0, 1], Y=np.zeros(4), is_rct=np.ones(4, bool))
    res = marginal_treatment_tv(d, d)
    assert res.tv == 0.0 and not res.marginal_nonoverlap


def test_tv_all_control_obs():
    r = Dataset(X=np.zeros((4, 1)), T=[0, 1, 0, 1], Y=np.zeros(4), is_rct=np.ones(4, bool))
    o = Dataset(X=np.zeros((3, 1)), T=[0, 0, 0], Y=np.zeros(3), is_rct=np.zeros(3, bool))
    res = marginal_treatment_tv(r, o)
    assert res.tv == 0.5 and res.flagged_arms == (1,)


def test_tv_three_arms():
    r = Dataset(X=np.zeros((3, 1)), T=[0, 1, 2], Y=np.zeros(3), is_rct=np.ones(3, bool))
    o = Dataset(X=np.zeros((2, 1)), T=[0, 1], Y=np.zeros(2), is_rct=np.zeros(2, bool))
    res = marginal_treatment_tv(r, o)
    assert res.tv == pytest.approx(1 / 3, abs=1e-15) and res.flagged_arms == (2,)


def test_tv_below_indicator_feature_mmd():
    data = all_control_obs(gen_synthetic(SyntheticConfig(n_rct=500, n_obs=500, n_cont=12,
                                                         n_cat=4, seed=1)))
    tv = marginal_treatment_tv(data.rct(), data.obs()).tv
    # with the feature reduced to the treatment indicator, MMD with a unit-distance kernel is
    # sqrt(2 (1 - exp(-1/bw^2))) times the arm-mass gap; larger on the full features
    ind = joint_features(np.zeros((data.n, 1)), data.T, 2)
    m_ind = mmd_joint(ind[data.is_rct], ind[~data.is_rct], bandwidth=1.0)
    const = np.sqrt(2 * (1 - np.exp(-1.0)))
    assert m_ind.value == pytest.approx(const * tv, rel=1e-9)


class XBinner:
    def __call__(self, rct, obs):
        return (rct.X[:, 0] > 0).astype(int), (obs.X[:, 0] > 0).astype(int)


def test_mismatch_same_dataset_zero(small_data):
    tab = conditional_assignment_mismatch(small_data.rct(), small_data.rct())
    assert np.nanmax(tab.gap) == 0.0


def test_mismatch_deterministic_policy(rng):
    x = rng.normal(size=2000)
    o = Dataset(X=x[:, None], T=(x > 0).astype(int), Y=np.zeros(2000), is_rct=np.zeros(2000, bool))
    # alternate arms along the sorted covariate: exactly 50/50 on each side of 0
    r = Dataset(X=x[:, None], T=np.argsort(np.argsort(x)) % 2, Y=np.zeros(2000),
                is_rct=np.ones(2000, bool))
    tab = conditional_assignment_mismatch(r, o, XBinner())
    sel = (tab.bin_id == 1) & (tab.arm == 1)
    assert tab.gap[sel][0] == pytest.approx(0.5, abs=0.01)


def test_mismatch_support_flag():
    r = Dataset(X=np.array([[-1.0], [1.0], [1.0]]), T=[0, 1, 0], Y=np.zeros(3),
                is_rct=np.ones(3, bool))
    o = Dataset(X=np.array([[-1.0], [-1.0]]), T=[0, 0], Y=np.zeros(2), is_rct=np.zeros(2, bool))
    tab = conditional_assignment_mismatch(r, o, XBinner())
    assert np.all(tab.support_mismatch[tab.bin_id == 1])
    assert tab.mean_gap == 0.0  # the only compared bin agrees


def test_mismatch_csv(tmp_path, small_data):
    tab = conditional_assignment_mismatch(small_data.rct(), small_data.obs())
    tab.to_csv(tmp_path / "m.csv")
    header = (tmp_path / "m.csv").read_text().splitlines()[0]
    assert header.startswith("bin_id,arm,p_rct,p_obs,gap,n_rct,n_obs")


def test_mismatch_shrinks_with_dial():
    dials = (0.0, 0.5, 1.0)
    means = []
    for dial in dials:
        vals = []
        for s in range(5):
            d = gen_synthetic(SyntheticConfig(n_rct=1000, n_obs=4000, n_cont=12, n_cat=4,
                                              overlap_dial=dial, seed=s))
            vals.append(conditional_assignment_mismatch(d.rct(), d.obs()).joint_mass_gap)
        means.append(np.mean(vals))
    assert spearmanr(dials, means).statistic < 0
    assert means[0] > means[1] > means[2]
