"""
Hyperparameter search with Bayesian optimization
================================================

Sobol initial design followed by expected-improvement proposals on a GP
surrogate. The objective is the validation NLL of a short training run.
"""

from gpuq.bayesopt import Continuous, SearchSpace, tune
from gpuq.experiment import desk_preset, run_tuning

# %%
# The optimizer itself, on a one-dimensional quadratic.
res = tune(lambda c: (c["x"] - 2.0) ** 2, SearchSpace([Continuous("x", -5, 5)]), trials=20, init=5, seed=0)
print("best x:", round(res.best.config["x"], 3))
print("incumbent trace:", [round(v, 4) for v in res.incumbents()])

# %%
# Tuning a DSPP on the toy data: learning rate, architecture and number of
# inducing points. Ten trials with short training keep this under a minute.
cfg = desk_preset("dspp", "regression", epochs=5)
best, result = run_tuning(cfg, trials=10, init=4)
print("best validation NLL:", round(result.best.value, 4))
print("best config: lr", round(best.lr, 4), "arch", best.arch, "M", best.num_inducing)
