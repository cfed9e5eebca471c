"""Compare baseline, random-perturbation and neighborhood smoothing on curvature.

For each strategy we train three seeds and measure the largest eigenvalue of
the last-layer loss Hessian at the final weights.  Smaller means flatter.

Run with:  python3 demos/02_compare_strategies.py   (about 20 seconds)
"""
# %%
import numpy as np

from nrslab import MlpSpec, TrainConfig, train
from nrslab.data import gen_two_moons, standardize, train_test_split
from nrslab.hessian import last_layer_lambda_max

train_set, test_set = standardize(*train_test_split(gen_two_moons(2000, 0.25, seed=0), 0.2, seed=0))
model = MlpSpec((2, 64, 64, 2), "relu")
batch = (train_set.inputs, train_set.labels)

# %% Train every strategy on the same seeds
settings = {"baseline": {}, "rpr": {"epsilon": 0.5}, "nrs": {"epsilon": 0.5, "alpha": 0.5}}
results = {}
for strategy, extra in settings.items():
    lams, accs = [], []
    for seed in range(3):
        cfg = TrainConfig(strategy, batch_size=128, num_workers=2, epochs=60, global_seed=seed, **extra)
        rep = train(cfg, model, train_set, test_set)
        lams.append(last_layer_lambda_max(model, rep.params, batch).lambda_max)
        accs.append(rep.best_test_acc)
    results[strategy] = (np.median(lams), np.mean(accs))

# %% Summary
for strategy, (lam, acc) in results.items():
    print(f"{strategy:<9} median lambda_max {lam:.4f}   mean best test acc {acc:.4f}")
