"""Write the toy regression set used by the configs in demos/configs."""

import os

import numpy as np

from robust_pmp.storage import save_dataset

rng = np.random.default_rng(0)
v = rng.uniform(-1.5, 1.5, size=128)
y = np.sin(2 * v) + 0.05 * rng.normal(size=128)
path = os.path.join(os.path.dirname(os.path.abspath(__file__)), "configs", "toy.csv")
save_dataset(path, np.column_stack([v, y]), header=["v", "y"])
print("wrote", path)
