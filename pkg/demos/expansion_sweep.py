"""How well the first- and second-order objectives track the worst case.

For small radii the brute-force attack value and the first-order objective
differ by O(delta^2); the second-order objective closes most of that gap.
"""

import numpy as np

from robust_pmp import NormSpec, first_order_objective, robust_risk_oracle, second_order_v1_objective
from robust_pmp.verify import loglog_fit, random_instance

inst = random_instance(seed=7, family="tanh_resnet", loss="logistic_margin", d=3, n_points=8)
model, ctrl, mu = inst.model, inst.ctrl_at(0.25), inst.measure()
ns = NormSpec(np.inf)

deltas = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1]
gap1, gap2 = [], []
print(f"{'delta':>8} {'oracle':>12} {'first':>12} {'second':>12}")
for d in deltas:
    o = robust_risk_oracle(model, mu, ctrl, d, ns)
    f1 = first_order_objective(model, mu, ctrl, d, ns)
    f2 = second_order_v1_objective(model, mu, ctrl, d, ns)
    gap1.append(abs(o - f1))
    gap2.append(abs(o - f2))
    print(f"{d:8.0e} {o:12.8f} {f1:12.8f} {f2:12.8f}")

print("log-log slope of |oracle - first order|: %.2f" % loglog_fit(deltas, gap1)[0])
print("log-log slope of |oracle - second order|: %.2f" % loglog_fit(deltas, gap2)[0])
