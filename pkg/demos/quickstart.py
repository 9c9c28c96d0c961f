"""
Quickstart: three uncertainty models on a toy problem
=====================================================

Trains each of the three model families on a small
noisy sine curve, then compares their test metrics. Runs in a few seconds.
"""

import numpy as np

from gpuq.experiment import desk_preset, run_experiment

# %%
# ``desk_preset`` gives a small synthetic configuration: 500 points,
# 32 inducing points, 20 epochs.
results = {}
for model in ("dgp", "dspp", "ensemble"):
    res = run_experiment(desk_preset(model, "regression"))
    results[model] = res
    print(f"{model:9s} NLL {res.report.nll:7.3f}  ECE {res.report.ece:.3f}  MAE {res.report.mae:.3f}")

# %%
# The loss curves record the mean minibatch loss and the validation loss
# for every epoch.
curves = results["dspp"].train
print("dspp train loss, first and last epoch:", curves.train_losses[0], curves.train_losses[-1])

# %%
# Predictions come back in the original target units. For the DSPP the
# predictive is a finite Gaussian mixture with learned weights.
ds = results["dspp"].dataset
X = ds.features("test")[:5]
pred = results["dspp"].model.predict(X).affine(ds.target_mean, ds.target_std)
print("mixture weights:", np.round(pred.weights, 3))
print("mean:", np.round(pred.mean(), 3))
print("std: ", np.round(np.sqrt(pred.variance()), 3))

# %%
# Classification works the same way with a two-cluster toy problem.
for model in ("dgp", "dspp", "ensemble"):
    rep = run_experiment(desk_preset(model, "classification")).report
    print(f"{model:9s} NLL {rep.nll:7.3f}  ECE {rep.ece:.3f}  ACC {rep.acc:.3f}")
