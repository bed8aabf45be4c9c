"""Stochastic trainers for the neural estimators.

Every method shares one loop. Each step draws an OBS minibatch and an RCT
minibatch and

1. takes ``critic_steps`` ascent steps on the critic over detached representations,
2. evaluates the OBS risk, the RCT moment residual and the critic discrepancy,
3. takes one descent step on
   R_o + alpha R_r + lambda eps_ov + <nu, g> + (rho/2) ||g||^2,
4. updates the multiplier nu <- Proj(nu + eta_nu g) using the same RCT batch.

The named methods switch terms of that objective on or off (see ``METHODS``).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ..data import Dataset
from ..discrepancy import critic_objective
from ..errors import ConfigError, DivergenceError, EmptyArmError, SourceError
from ..moments import _design_deviation, moment_upstream
from ..nets import CriticNet, JointModel, PredictorNet, RepresentationNet
from .lq import project_ball


@dataclass(frozen=True)
class TrainConfig:
    rho: float = 1.0
    lambda_ov: float = 1.0
    Lambda_dual: float = 50.0
    eta_primal: float = 1e-2
    eta_decay_steps: float = 1000.0
    eta_dual: float = 0.1
    eta_critic: float = 1e-2
    critic_steps: int = 5
    batch_obs: int = 256
    batch_rct: int = 256
    iters: int = 5000
    seed: int = 0
    alpha: float = 1.0
    mu_o_over_Lg2: float = 1.0
    c_ov: float = 1.0
    project_dual: bool = True
    rep_dim: int = 16
    phi_hidden: tuple = (64, 64)
    predictor_hidden: tuple = (64,)
    critic_hidden: tuple = (64, 64)
    use_phi: bool = True
    log_every: int = 10
    standardize: bool = True
    tied_heads: bool = True

    def __post_init__(self):
        for name in ("phi_hidden", "predictor_hidden", "critic_hidden"):
            object.__setattr__(self, name, tuple(int(h) for h in getattr(self, name)))
        if self.rho < 0 or self.lambda_ov < 0 or self.Lambda_dual < 0 or self.alpha < 0:
            raise ConfigError("rho, lambda_ov, Lambda_dual and alpha must be non-negative")
        if min(self.eta_primal, self.eta_critic, self.eta_decay_steps) <= 0 or self.eta_dual < 0:
            raise ConfigError("step sizes must be positive")
        if self.iters < 1 or self.batch_obs < 1 or self.batch_rct < 1 or self.log_every < 1:
            raise ConfigError("iters, batch sizes and log_every must be >= 1")
        if self.critic_steps < 0:
            raise ConfigError("critic_steps must be >= 0")

    def step_size(self, s: int) -> float:
        return self.eta_primal / np.sqrt(1.0 + s / self.eta_decay_steps)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


TRACE_COLUMNS = ("step", "r_obs", "g_norm", "eps_ov", "nu_norm", "objective", "q_hat")


@dataclass
class TrainTrace:
    records: list[tuple] = field(default_factory=list)

    def log(self, **values) -> None:
        self.records.append(tuple(values[c] for c in TRACE_COLUMNS))

    def column(self, name: str) -> np.ndarray:
        i = TRACE_COLUMNS.index(name)
        return np.array([r[i] for r in self.records])

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for r in self.records:
                w.writerow([int(r[0])] + [repr(float(v)) for v in r[1:]])


@dataclass
class ModelBundle:
    """Trained model, critic, multiplier and the input standardization."""

    model: JointModel
    critic: CriticNet | None
    nu: np.ndarray
    step_count: int
    x_mean: np.ndarray
    x_scale: np.ndarray
    cfg: TrainConfig
    method: str = "pd"

    @property
    def phi(self):
        return self.model.phi

    @property
    def predictor(self):
        return self.model.predictor

    def _x(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.x_mean) / self.x_scale

    def predict(self, X, T) -> np.ndarray:
        return self.model.predict(self._x(X), T)

    def effects(self, X) -> np.ndarray:
        return self.model.effects(self._x(X))

    def represent(self, X) -> np.ndarray:
        return self.model.represent(self._x(X))

    def __call__(self, X, T) -> np.ndarray:
        return self.predict(X, T)

    def to_json(self) -> str:
        return json.dumps({
            "method": self.method, "cfg": self.cfg.to_dict(),
            "input_dim": int(self.x_mean.size), "n_treatments": self.model.n_treatments,
            "params": self.model.params.tolist(),
            "critic_params": None if self.critic is None else self.critic.params.tolist(),
            "nu": self.nu.tolist(), "step_count": self.step_count,
            "x_mean": self.x_mean.tolist(), "x_scale": self.x_scale.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "ModelBundle":
        d = json.loads(text)
        cfg = TrainConfig.from_dict(d["cfg"])
        model, critic = build_networks(d["input_dim"], d["n_treatments"], cfg)
        model.params[:] = d["params"]
        if critic is not None and d["critic_params"] is not None:
            critic.params[:] = d["critic_params"]
        return cls(model=model, critic=critic, nu=np.array(d["nu"], dtype=np.float64),
                   step_count=d["step_count"], x_mean=np.array(d["x_mean"]),
                   x_scale=np.array(d["x_scale"]), cfg=cfg, method=d["method"])


def build_networks(input_dim: int, n_treatments: int, cfg: TrainConfig
                   ) -> tuple[JointModel, CriticNet | None]:
    seed = cfg.seed
    if cfg.use_phi:
        phi = RepresentationNet(input_dim, cfg.rep_dim, cfg.phi_hidden, seed=seed * 4 + 1)
        z_dim = cfg.rep_dim
    else:
        phi, z_dim = None, input_dim
    pred = PredictorNet(z_dim, n_treatments, cfg.predictor_hidden, seed=seed * 4 + 2,
                        tied_heads=cfg.tied_heads)
    critic = CriticNet(z_dim, n_treatments, cfg.critic_hidden, seed=seed * 4 + 3)
    return JointModel(phi, pred), critic


@dataclass(frozen=True)
class Terms:
    """Which pieces of the objective a method uses."""

    obs_weight: float = 1.0
    rct_weight: float = 0.0
    lambda_ov: float = 0.0
    rho: float = 0.0
    dual: bool = False
    q_hat: bool = False


METHODS = ("pd", "penalty", "dual_only", "ipm_only", "weighted", "obs_only", "rct_only", "q_hat")


def method_terms(method: str, cfg: TrainConfig) -> Terms:
    if method == "pd":
        return Terms(lambda_ov=cfg.lambda_ov, rho=cfg.rho, dual=True)
    if method == "penalty":
        return Terms(lambda_ov=cfg.lambda_ov, rho=cfg.rho, dual=False)
    if method == "dual_only":
        return Terms(lambda_ov=0.0, rho=cfg.rho, dual=True)
    if method == "ipm_only":
        return Terms(lambda_ov=cfg.lambda_ov, rho=0.0, dual=False)
    if method == "weighted":
        return Terms(rct_weight=cfg.alpha)
    if method == "obs_only":
        return Terms()
    if method == "rct_only":
        return Terms(obs_weight=0.0, rct_weight=1.0)
    if method == "q_hat":
        return Terms(lambda_ov=cfg.lambda_ov, q_hat=True)
    raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")


def _standardizer(X: np.ndarray, on: bool) -> tuple[np.ndarray, np.ndarray]:
    if not on:
        return np.zeros(X.shape[1]), np.ones(X.shape[1])
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    return mean, np.where(sd > 0, sd, 1.0)


def q_hat_value(r_obs: float, g_norm: float, eps_ov: float, cfg: TrainConfig) -> float:
    return r_obs + cfg.mu_o_over_Lg2 * (g_norm + cfg.c_ov * eps_ov) ** 2


def train(data: Dataset, cfg: TrainConfig, method: str = "pd") -> tuple[ModelBundle, TrainTrace]:
    """Run one of ``METHODS`` on the pooled dataset."""
    terms = method_terms(method, cfg)
    rct, obs = data.rct(), data.obs()
    need_obs = terms.obs_weight > 0 or terms.lambda_ov > 0
    need_rct = terms.rct_weight > 0 or terms.rho > 0 or terms.dual or terms.lambda_ov > 0 \
        or terms.q_hat
    if need_obs and obs.n == 0:
        raise SourceError(f"method {method!r} needs OBS rows")
    if need_rct and rct.n == 0:
        raise SourceError(f"method {method!r} needs RCT rows")
    if need_rct and data.probs is None:
        raise SourceError("RCT assignment probabilities are missing")

    x_mean, x_scale = _standardizer(data.X, cfg.standardize)
    Xo, Xr = (obs.X - x_mean) / x_scale, (rct.X - x_mean) / x_scale
    p_rows = rct.probs.rows(rct.n, rct.strata if rct.probs.stratified else None) \
        if rct.n and rct.probs is not None else None
    n_treat = data.n_treatments
    model, critic = build_networks(data.d, n_treat, cfg)
    use_critic = terms.lambda_ov > 0 and critic is not None
    K = n_treat - 1
    nu = np.zeros(K)
    rng = np.random.default_rng([cfg.seed, 2])
    trace = TrainTrace()
    bo = min(cfg.batch_obs, obs.n)
    br = min(cfg.batch_rct, rct.n)

    for s in range(cfg.iters):
        io = rng.choice(obs.n, size=bo, replace=False) if obs.n else np.empty(0, np.intp)
        ir = rng.choice(rct.n, size=br, replace=False) if rct.n else np.empty(0, np.intp)
        x = np.vstack([Xo[io], Xr[ir]])
        t = np.concatenate([obs.T[io], rct.T[ir]])
        y = np.concatenate([obs.Y[io], rct.Y[ir]])
        n_o = io.size

        # (i) critic ascent on detached representations
        eps_ov, eps_raw, dz_ov = 0.0, 0.0, None
        if use_critic:
            z = model.represent(x)
            zo, zr = z[:n_o], z[n_o:]
            for _ in range(cfg.critic_steps):
                _, cgrad, _ = critic_objective(critic, zr, t[n_o:], zo, t[:n_o])
                critic.params[:] += cfg.eta_critic * cgrad

        # (ii) minibatch risk, moment residual, discrepancy
        m = model.forward(x, t)
        resid = m - y
        r_obs = float(np.mean(resid[:n_o] ** 2)) if n_o else 0.0
        r_rct = float(np.mean(resid[n_o:] ** 2)) if ir.size else 0.0
        g = np.zeros(K)
        dev = None
        if ir.size:
            dev = _design_deviation(t[n_o:], p_rows[ir])
            g = (dev * (y[n_o:] - m[n_o:])[:, None]).mean(axis=0)
        g_norm = float(np.linalg.norm(g))
        if use_critic:
            zc = model.phi._cache[2][-1] if model.phi is not None else x
            eps_raw, _, dz_stack = critic_objective(critic, zc[n_o:], t[n_o:], zc[:n_o], t[:n_o])
            eps_ov = max(eps_raw, 0.0)
            dz_ov = np.vstack([dz_stack[ir.size:], dz_stack[:ir.size]])

        q_hat = q_hat_value(r_obs, g_norm, eps_ov, cfg)
        if terms.q_hat:
            objective = q_hat
        else:
            objective = (terms.obs_weight * r_obs + terms.rct_weight * r_rct
                         + terms.lambda_ov * eps_ov + float(nu @ g)
                         + 0.5 * terms.rho * g_norm ** 2)
        if not np.isfinite(objective):
            raise DivergenceError(f"non-finite objective at step {s}", trace=trace)

        # (iii) primal descent
        up = np.zeros_like(m)
        if n_o:
            up[:n_o] = terms.obs_weight * 2.0 * resid[:n_o] / n_o
        if ir.size:
            up[n_o:] = terms.rct_weight * 2.0 * resid[n_o:] / ir.size
            if terms.q_hat:
                scale = 2.0 * cfg.mu_o_over_Lg2 * (g_norm + cfg.c_ov * eps_ov)
                w = scale * g / g_norm if g_norm > 0 else np.zeros(K)
            else:
                w = nu + terms.rho * g
            if np.any(w):
                up[n_o:] += -(dev @ w) / ir.size
        lam_eff = (2.0 * cfg.mu_o_over_Lg2 * (g_norm + cfg.c_ov * eps_ov) * cfg.c_ov
                   if terms.q_hat else terms.lambda_ov)
        grad = np.empty_like(model.params)
        g_pred, dz = model.predictor.backward(up)
        grad[model.n_phi:] = g_pred
        if model.phi is not None:
            if dz_ov is not None and eps_raw > 0:
                dz = dz + lam_eff * dz_ov
            grad[:model.n_phi], _ = model.phi.backward(dz)
        model.params -= cfg.step_size(s) * grad

        # (iv) dual ascent on the same RCT batch at the updated parameters
        if terms.dual and ir.size:
            m_new = model.predict(x[n_o:], t[n_o:])
            g_new = (dev * (y[n_o:] - m_new)[:, None]).mean(axis=0)
            nu = nu + cfg.eta_dual * g_new
            if cfg.project_dual:
                nu = project_ball(nu, cfg.Lambda_dual)

        if s % cfg.log_every == 0 or s == cfg.iters - 1:
            trace.log(step=s, r_obs=r_obs, g_norm=g_norm, eps_ov=eps_ov,
                      nu_norm=float(np.linalg.norm(nu)), objective=objective, q_hat=q_hat)

    if not np.all(np.isfinite(model.params)):
        raise DivergenceError("parameters became non-finite", trace=trace)
    bundle = ModelBundle(model=model, critic=critic if use_critic else None, nu=nu,
                         step_count=cfg.iters, x_mean=x_mean, x_scale=x_scale, cfg=cfg,
                         method=method)
    return bundle, trace


def train_constrained_pd(data: Dataset, cfg: TrainConfig):
    return train(data, cfg, "pd")


def train_penalty(data: Dataset, cfg: TrainConfig):
    return train(data, cfg, "penalty")


def train_weighted(data: Dataset, cfg: TrainConfig):
    return train(data, cfg, "weighted")


def train_obs_only(data: Dataset, cfg: TrainConfig):
    return train(data, cfg, "obs_only")


def train_rct_only(data: Dataset, cfg: TrainConfig):
    return train(data, cfg, "rct_only")


def train_ablation(data: Dataset, cfg: TrainConfig, mode: str):
    if mode not in ("dual_only", "ipm_only"):
        raise ConfigError("ablation mode must be 'dual_only' or 'ipm_only'")
    return train(data, cfg, mode)


def train_q_hat(data: Dataset, cfg: TrainConfig):
    return train(data, cfg, "q_hat")


def alpha_sweep(data: Dataset, alphas, cfg: TrainConfig, eval_data: Dataset | None = None
                ) -> list[dict]:
    """Weighted fusion at each alpha with a shared seed and initialization.

    Path statistics are measured on ``eval_data`` (default: ``data``):
    OBS risk, RCT risk, moment residual norm and the RMS distance of the
    predictions from the alpha = 0 fit.
    """
    alphas = [float(a) for a in alphas]
    if alphas[0] != 0 or any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alpha grid must be ascending and start at 0")
    ev = eval_data if eval_data is not None else data
    rct, obs = ev.rct(), ev.obs()
    rows, base = [], None
    for a in alphas:
        bundle, _ = train(data, replace(cfg, alpha=a), "weighted" if a > 0 else "obs_only")
        pred = bundle.predict(ev.X, ev.T)
        if base is None:
            base = pred
        rows.append({
            "alpha": a,
            "r_obs": float(np.mean((obs.Y - bundle.predict(obs.X, obs.T)) ** 2)),
            "r_rct": float(np.mean((rct.Y - bundle.predict(rct.X, rct.T)) ** 2)),
            "g_norm": moment_norm(bundle, rct),
            "dist_from_0": float(np.sqrt(np.mean((pred - base) ** 2))),
        })
    return rows


def moment_norm(model, rct: Dataset) -> float:
    """||g_hat|| of ``model`` (anything with predict(X, T)) on RCT rows."""
    p_rows = rct.probs.rows(rct.n, rct.strata if rct.probs.stratified else None)
    resid = rct.Y - model.predict(rct.X, rct.T)
    return float(np.linalg.norm((_design_deviation(rct.T, p_rows) * resid[:, None]).mean(axis=0)))


def q_hat_objective(model, data: Dataset, cfg: TrainConfig, eps_ov: float = 0.0) -> float:
    """R_o + (mu_o / L_g^2) (||g|| + c_ov eps_ov)^2 evaluated on ``data``.

    ``eps_ov`` is supplied by the caller (a critic or kernel estimate).
    """
    obs, rct = data.obs(), data.rct()
    r_obs = float(np.mean((obs.Y - model.predict(obs.X, obs.T)) ** 2)) if obs.n else 0.0
    g_norm = moment_norm(model, rct) if rct.n else 0.0
    return q_hat_value(r_obs, g_norm, eps_ov, cfg)


# --- T-learner ---------------------------------------------------------------

@dataclass
class TLearner:
    """Independent outcome regressions per arm; effects are m_k - m_0."""

    arms: list
    x_mean: np.ndarray
    x_scale: np.ndarray

    def _x(self, X):
        return (np.asarray(X, dtype=np.float64) - self.x_mean) / self.x_scale

    def predict_arm(self, X, k: int) -> np.ndarray:
        arm = self.arms[k]
        Xs = self._x(X)
        if isinstance(arm, np.ndarray):
            return Xs @ arm[:-1] + arm[-1]
        return arm.forward(Xs)[:, 0]

    def predict(self, X, T) -> np.ndarray:
        T = np.asarray(T)
        out = np.empty(T.size)
        for k in range(len(self.arms)):
            sel = T == k
            if sel.any():
                out[sel] = self.predict_arm(np.asarray(X)[sel], k)
        return out

    def effects(self, X) -> np.ndarray:
        base = self.predict_arm(X, 0)
        eff = np.column_stack([self.predict_arm(X, k) - base for k in range(1, len(self.arms))])
        return eff[:, 0] if eff.shape[1] == 1 else eff


def train_t_learner(data: Dataset, cfg: TrainConfig, hidden=None, rows: str = "pooled"
                    ) -> TLearner:
    """Fit one regression per arm.

    ``hidden=()`` gives linear arms fit exactly by least squares; otherwise an
    MLP per arm is trained by minibatch SGD with the shared step schedule.
    ``rows`` selects the training rows: "pooled", "rct" or "obs".
    """
    from ..nets import MLP, make_layout

    hidden = cfg.predictor_hidden if hidden is None else tuple(hidden)
    src = {"pooled": data, "rct": data.rct(), "obs": data.obs()}[rows]
    n_treat = data.n_treatments
    x_mean, x_scale = _standardizer(data.X, cfg.standardize)
    Xs = (src.X - x_mean) / x_scale
    arms = []
    for k in range(n_treat):
        sel = np.flatnonzero(src.T == k)
        if sel.size == 0:
            raise EmptyArmError(f"arm {k} has no rows")
        Xk, yk = Xs[sel], src.Y[sel]
        if not hidden:
            design = np.column_stack([Xk, np.ones(sel.size)])
            coef, *_ = np.linalg.lstsq(design, yk, rcond=None)
            arms.append(coef)
            continue
        net = MLP(make_layout([data.d, *hidden, 1], "tanh", "identity"), seed=cfg.seed * 4 + 5 + k)
        rng = np.random.default_rng([cfg.seed, 3, k])
        b = min(cfg.batch_obs, sel.size)
        for s in range(cfg.iters):
            idx = rng.choice(sel.size, size=b, replace=False)
            out = net.forward(Xk[idx])[:, 0]
            grad, _ = net.backward((2.0 * (out - yk[idx]) / b)[:, None])
            net.params -= cfg.step_size(s) * grad
        if not np.all(np.isfinite(net.params)):
            raise DivergenceError(f"T-learner arm {k} diverged")
        arms.append(net)
    return TLearner(arms=arms, x_mean=x_mean, x_scale=x_scale)
