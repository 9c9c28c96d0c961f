"""
Robustness under feature perturbations
======================================

Train each model on five seeds, perturb the test features with every
corruption at every severity, and watch how the metrics degrade.
"""

from collections import defaultdict

import numpy as np

from gpuq.experiment import desk_preset, run_shift_experiment
from gpuq.shift import severity_schedule

# %%
# One row per (seed, kind, severity, metric). Severity 0 is the clean test set.
table = defaultdict(list)
for model in ("dgp", "dspp", "ensemble"):
    for row in run_shift_experiment(desk_preset(model, "regression")):
        table[model, row["severity"], row["metric"]].append(row["value"])

# %%
# Average over the 5 seeds x 5 perturbation kinds at each severity.
print("model     metric " + " ".join(f"{s:>7}" for s in severity_schedule()))
for model in ("dgp", "dspp", "ensemble"):
    for metric in ("nll", "ece"):
        vals = [np.mean(table[model, s, metric]) for s in severity_schedule()]
        print(f"{model:9s} {metric:6s} " + " ".join(f"{v:7.3f}" for v in vals))
