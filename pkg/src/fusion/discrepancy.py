"""Distribution-mismatch estimators between the RCT and OBS samples.

* ``mmd_joint``: Gaussian-kernel MMD (biased V-statistic) on (z, one-hot t) rows.
* ``critic_ipm_step``: one ascent step of a bounded critic on
  mean d(RCT) - mean d(OBS), the adversarial IPM surrogate used in training.
* ``marginal_treatment_tv`` / ``conditional_assignment_mismatch``: direct
  counting diagnostics for marginal and conditional non-overlap.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .data import Dataset
from .errors import EmptyBatchError
from .nets import CriticNet, one_hot


@dataclass(frozen=True)
class IpmEstimate:
    value: float
    estimator: str
    bandwidth: float | None = None
    raw: float | None = None


def joint_features(z, t, n_treatments: int) -> np.ndarray:
    """Rows of concat(z, one-hot(t))."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    return np.hstack([z, one_hot(t, n_treatments)])


def _subsample(a: np.ndarray, max_rows: int | None, rng) -> np.ndarray:
    if max_rows is None or a.shape[0] <= max_rows:
        return a
    return a[np.sort(rng.choice(a.shape[0], size=max_rows, replace=False))]


def median_bandwidth(pooled: np.ndarray, max_rows: int = 2000, seed: int = 0) -> float:
    """Median pairwise Euclidean distance (on a seeded subsample when large)."""
    pooled = _subsample(np.asarray(pooled, dtype=np.float64), max_rows,
                        np.random.default_rng(seed))
    if pooled.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(pooled)))
    return med if med > 0 else 1.0


def _kernel_mean(a: np.ndarray, b: np.ndarray, bw: float, block: int = 2048) -> float:
    total = 0.0
    for i in range(0, a.shape[0], block):
        d2 = cdist(a[i:i + block], b, "sqeuclidean")
        total += np.exp(-d2 / (2.0 * bw * bw)).sum()
    return total / (a.shape[0] * b.shape[0])


def mmd_joint(rct_reps, obs_reps, bandwidth: float | None = None, *,
              max_rows: int | None = 4000, seed: int = 0) -> IpmEstimate:
    """Biased Gaussian-kernel MMD between two samples of joint feature rows.

    ``bandwidth=None`` uses the median heuristic on the pooled sample. Samples
    larger than ``max_rows`` are replaced by a seeded subsample.
    """
    a = np.asarray(rct_reps, dtype=np.float64)
    b = np.asarray(obs_reps, dtype=np.float64)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise EmptyBatchError("MMD needs two nonempty samples")
    rng = np.random.default_rng(seed)
    a, b = _subsample(a, max_rows, rng), _subsample(b, max_rows, rng)
    bw = median_bandwidth(np.vstack([a, b]), seed=seed) if bandwidth is None else float(bandwidth)
    kaa = _kernel_mean(a, a, bw)
    kbb = _kernel_mean(b, b, bw)
    kab = _kernel_mean(a, b, bw)
    raw = kaa + kbb - 2.0 * kab
    return IpmEstimate(value=float(np.sqrt(max(raw, 0.0))), estimator="kernel-mmd",
                       bandwidth=bw, raw=float(raw))


def dataset_mmd(data: Dataset, reps: np.ndarray | None = None, **kw) -> IpmEstimate:
    """MMD between the RCT and OBS rows of ``data`` on (reps or X, one-hot T)."""
    feats = joint_features(data.X if reps is None else reps, data.T, data.n_treatments)
    return mmd_joint(feats[data.is_rct], feats[~data.is_rct], **kw)


def critic_objective(critic: CriticNet, rct_z, rct_t, obs_z, obs_t
                     ) -> tuple[float, np.ndarray, np.ndarray]:
    """mean d(RCT) - mean d(OBS) with its parameter gradient and the gradient
    with respect to the stacked inputs ``[rct_z; obs_z]``."""
    n_r, n_o = len(rct_t), len(obs_t)
    out = critic.forward(np.vstack([rct_z, obs_z]), np.concatenate([rct_t, obs_t]))
    value = float(out[:n_r].mean() - out[n_r:].mean())
    up = np.concatenate([np.full(n_r, 1.0 / n_r), np.full(n_o, -1.0 / n_o)])
    grad, dz = critic.backward(up)
    return value, grad, dz


def critic_ipm_step(critic: CriticNet, rct_z, rct_t, obs_z, obs_t, step_size: float
                    ) -> tuple[CriticNet, IpmEstimate]:
    """One gradient-ascent step on the critic; returns it with the post-step estimate."""
    _, grad, _ = critic_objective(critic, rct_z, rct_t, obs_z, obs_t)
    critic.params[:] += step_size * grad
    n_r = len(rct_t)
    out = critic.forward(np.vstack([rct_z, obs_z]), np.concatenate([rct_t, obs_t]))
    raw = float(out[:n_r].mean() - out[n_r:].mean())
    return critic, IpmEstimate(value=max(raw, 0.0), estimator="critic", raw=raw)


@dataclass(frozen=True)
class MarginalTV:
    p_rct: np.ndarray
    p_obs: np.ndarray
    arm_gaps: np.ndarray
    tv: float
    flagged_arms: tuple[int, ...]

    @property
    def marginal_nonoverlap(self) -> bool:
        return bool(self.flagged_arms)


def marginal_treatment_tv(rct: Dataset, obs: Dataset) -> MarginalTV:
    """max_A |P_r(T in A) - P_o(T in A)| = half the L1 distance of the treatment marginals.

    Arms with P_o = 0 < P_r are flagged (marginal structural non-overlap).
    """
    k = max(int(rct.T.max(initial=0)), int(obs.T.max(initial=0))) + 1
    k = max(k, rct.n_treatments if rct.probs is not None else 0)
    p_r = np.bincount(rct.T, minlength=k) / max(rct.n, 1)
    p_o = np.bincount(obs.T, minlength=k) / max(obs.n, 1)
    gaps = np.abs(p_r - p_o)
    flagged = tuple(int(a) for a in np.flatnonzero((p_o == 0) & (p_r > 0)))
    return MarginalTV(p_rct=p_r, p_obs=p_o, arm_gaps=gaps, tv=float(0.5 * gaps.sum()),
                      flagged_arms=flagged)


class QuantileBinner:
    """Quantile grid on two coordinates (latent Z when both samples carry it).

    Edges come from the pooled sample; bin id = i * n_bins + j.
    """

    def __init__(self, n_bins: int = 5, columns: tuple[int, int] = (0, 1), use_latent: bool = True):
        self.n_bins = n_bins
        self.columns = columns
        self.use_latent = use_latent

    def _coords(self, ds: Dataset, latent: bool) -> np.ndarray:
        src = ds.Z_latent if latent else ds.X
        return np.asarray(src)[:, list(self.columns)]

    def __call__(self, rct: Dataset, obs: Dataset) -> tuple[np.ndarray, np.ndarray]:
        latent = self.use_latent and rct.Z_latent is not None and obs.Z_latent is not None
        cr, co = self._coords(rct, latent), self._coords(obs, latent)
        pooled = np.vstack([cr, co])
        qs = np.linspace(0, 1, self.n_bins + 1)[1:-1]
        ids = []
        for c in (cr, co):
            idx = np.zeros(c.shape[0], dtype=np.intp)
            for axis in range(2):
                edges = np.quantile(pooled[:, axis], qs)
                idx = idx * self.n_bins + np.searchsorted(edges, c[:, axis], side="right")
            ids.append(idx)
        return ids[0], ids[1]


@dataclass
class MismatchTable:
    bin_id: np.ndarray
    arm: np.ndarray
    p_rct: np.ndarray
    p_obs: np.ndarray
    gap: np.ndarray
    n_rct: np.ndarray
    n_obs: np.ndarray
    support_mismatch: np.ndarray
    joint_mass_gap: float = field(default=np.nan)

    COLUMNS = ("bin_id", "arm", "p_rct", "p_obs", "gap", "n_rct", "n_obs")

    @property
    def mean_gap(self) -> float:
        """RCT-count weighted mean gap over bins populated in both sources."""
        keep = ~self.support_mismatch
        if not keep.any():
            return float("nan")
        w = self.n_rct[keep].astype(float)
        return float(np.sum(w * self.gap[keep]) / w.sum()) if w.sum() else float("nan")

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS + ("support_mismatch",))
            for i in range(self.bin_id.size):
                writer.writerow([int(self.bin_id[i]), int(self.arm[i]), repr(float(self.p_rct[i])),
                                 repr(float(self.p_obs[i])), repr(float(self.gap[i])),
                                 int(self.n_rct[i]), int(self.n_obs[i]),
                                 int(self.support_mismatch[i])])


def conditional_assignment_mismatch(rct: Dataset, obs: Dataset, binner=None) -> MismatchTable:
    """Per-bin, per-arm |P_r(T=k | bin) - P_o(T=k | bin)|.

    Bins populated by only one source are marked ``support_mismatch`` and get
    NaN probabilities/gaps for the missing side; they are left out of
    ``mean_gap``. ``joint_mass_gap`` is half the L1 distance between the joint
    (bin, arm) frequency tables of the two sources and does include them.
    """
    binner = binner or QuantileBinner()
    br, bo = binner(rct, obs)
    k = max(int(rct.T.max(initial=0)), int(obs.T.max(initial=0))) + 1
    bins = np.union1d(br, bo)
    rows = {name: [] for name in ("bin_id", "arm", "p_rct", "p_obs", "gap", "n_rct", "n_obs",
                                  "support_mismatch")}
    mass_r = np.zeros((bins.size, k))
    mass_o = np.zeros((bins.size, k))
    for i, b in enumerate(bins):
        tr, to = rct.T[br == b], obs.T[bo == b]
        cr, co = np.bincount(tr, minlength=k), np.bincount(to, minlength=k)
        mass_r[i], mass_o[i] = cr / max(rct.n, 1), co / max(obs.n, 1)
        for arm in range(k):
            pr = cr[arm] / tr.size if tr.size else np.nan
            po = co[arm] / to.size if to.size else np.nan
            rows["bin_id"].append(b)
            rows["arm"].append(arm)
            rows["p_rct"].append(pr)
            rows["p_obs"].append(po)
            rows["gap"].append(abs(pr - po))
            rows["n_rct"].append(tr.size)
            rows["n_obs"].append(to.size)
            rows["support_mismatch"].append(tr.size == 0 or to.size == 0)
    table = MismatchTable(**{key: np.asarray(v) for key, v in rows.items()})
    table.joint_mass_gap = float(0.5 * np.abs(mass_r - mass_o).sum())
    return table
