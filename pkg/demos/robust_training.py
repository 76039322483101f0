"""Clean versus robust training on a 1-d regression task.

The state is (v, y): the network moves v and carries the label y, and the
terminal loss compares a linear read-out of v with y.  Each robust trainer
is compared against a clean model under the same attack (radius 0.1, labels
frozen).
"""

import math
from dataclasses import replace

import numpy as np

from robust_pmp import AttackConfig, Model, NormSpec, RegularizerSpec, TrainConfig, pga_attack_pointwise, train

rng = np.random.default_rng(0)
v = rng.uniform(-1.5, 1.5, size=128)
data = np.column_stack([v, np.sin(2 * v) + 0.05 * rng.normal(size=128)])

model = Model.build("regression_frozen_label", "squared_regression", d=2)
base = TrainConfig(lr=0.05, batch_size=32, epochs=60, N=4, h=0.25, seed=0)

print(f"{'trainer':<28} {'clean risk':>11} {'attacked':>10}")
for variant, ns in [
    ("first_order", NormSpec(math.inf)),
    ("first_order", NormSpec(math.inf, "max_abs")),
    ("second_order_v1", NormSpec(math.inf)),
    ("fgsm", NormSpec(math.inf, "max_abs")),
]:
    attack = AttackConfig(delta=0.1, ns=ns, feature_mask=(True, False))
    for name, reg in (("clean", RegularizerSpec()), (variant, RegularizerSpec(variant, 0.1))):
        rep = train(model, data, replace(base, ns=ns, reg=reg))
        res = pga_attack_pointwise(model, data, rep.ctrl, attack)
        print(f"{name + ' / ' + ns.ground_norm:<28} {res.clean_risk:11.5f} {res.value:10.5f}")
    print()
