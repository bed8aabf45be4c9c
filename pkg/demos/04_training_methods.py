"""Train every estimator on one reduced dataset and compare held-out metrics.

Set FUSION_LOG=info to follow training progress.
"""

from fusion.datagen import SyntheticConfig, gen_synthetic
from fusion.estimators.training import TrainConfig, train, train_t_learner
from fusion.harness.experiments import evaluate, split_heldout

data = gen_synthetic(SyntheticConfig(n_rct=1000, n_obs=4000, n_cont=12, n_cat=4, seed=0))
tr, te = split_heldout(data, 0.2, seed=0)
cfg = TrainConfig(iters=600, eta_primal=3e-3, seed=0)

print(f"{'method':10s} {'qini':>7s} {'mse':>7s} {'|g|':>7s} {'ipm':>7s}")
for method in ("pd", "dual_only", "ipm_only", "penalty", "weighted", "obs_only", "rct_only"):
    model, trace = train(tr, cfg, method)
    m = evaluate(model, te)
    print(f"{method:10s} {m['qini']:7.3f} {m['mse_tau']:7.3f} {m['g_norm']:7.3f} {m['ipm']:7.3f}")
m = evaluate(train_t_learner(tr, cfg), te)
print(f"{'t_learner':10s} {m['qini']:7.3f} {m['mse_tau']:7.3f} {m['g_norm']:7.3f} {m['ipm']:7.3f}")
