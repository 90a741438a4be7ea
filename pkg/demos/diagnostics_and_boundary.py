"""
Looking inside a trained model
==============================

Two post-hoc measurements of the learned features: the proxy A-distance
between source and target features (lower means the domains are harder to
tell apart) and the error of the best joint linear classifier on those
features. Then the decision regions of the adapted model are exported on a
grid, ready for any plotting tool.
"""

# %%
from pathlib import Path

import numpy as np

from mccda.config import PRESETS, build_scenario
from mccda.diagnostics import a_distance
from mccda.reporting import boundary_grid, export_boundary_grid
from mccda.trainer import TrainConfig, train

rng = np.random.default_rng(0)
print("same distribution:", a_distance(rng.normal(size=(300, 8)), rng.normal(size=(300, 8))))
print("10 sigma apart:  ", a_distance(rng.normal(size=(300, 8)), rng.normal(10, 1, (300, 8))))

# %%
spec = build_scenario(PRESETS["uda-two-moons"], 1)
models = {}
for method in ("source_only", "dann", "mcc"):
    params, rep = train(spec, TrainConfig(method=method, seed=1))
    models[method] = params
    print(f"{method:<12} acc {rep.target_accuracy_final:.3f}  "
          f"A-distance {rep.a_distance:.3f}  joint error {rep.eps_ideal:.3f}")

# %%
grid = boundary_grid(models["mcc"], (-2.0, 3.0, -2.0, 2.5), 40)
share = np.bincount(grid[:, 2].astype(int), minlength=2) / len(grid)
print("share of the plane per class:", np.round(share, 3))
out = export_boundary_grid(models["mcc"], (-2.0, 3.0, -2.0, 2.5), 100,
                           Path("boundary_mcc.csv"))
print("wrote", out)
