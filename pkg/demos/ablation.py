"""
Switching loss components off
=============================

The loss has three optional parts on top of the raw class correlation:
temperature rescaling of the probabilities, entropy-based example weights and
row normalization of the confusion matrix. Training with each prefix of that
list shows how much each part adds on the two-moons task.
"""

# %%
from dataclasses import replace

import numpy as np

from mccda.config import PRESETS, build_scenario
from mccda.confusion import ABLATIONS
from mccda.trainer import TrainConfig, train

seeds = range(3)
base = TrainConfig(method="mcc", diagnostics=False)

# %%
for name, tog in ABLATIONS.items():
    accs = []
    for seed in seeds:
        spec = build_scenario(PRESETS["uda-two-moons"], seed)
        cfg = replace(base, seed=seed, pr=tog.pr, ur=tog.ur, cn=tog.cn)
        accs.append(train(spec, cfg)[1].target_accuracy_final)
    print(f"{name:<9} pr={tog.pr!s:<5} ur={tog.ur!s:<5} cn={tog.cn!s:<5} "
          f"mean target acc {np.mean(accs):.3f}")
