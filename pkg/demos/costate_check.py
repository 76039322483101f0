"""Input gradients from one backward sweep, checked against finite differences.

The costate at the input layer is minus the gradient of the loss with
respect to the input.  The second adjoint gives Hessian-vector products
without forming the Hessian.
"""

import numpy as np

from robust_pmp import NormSpec, loss_j
from robust_pmp.propagation import backward_costate, first_order_sweeps, forward_state
from robust_pmp.verify import fd_input_gradient, fd_input_hessian, random_instance

inst = random_instance(seed=3, family="tanh_resnet", loss="logistic_margin", d=3, n_points=4)
model, ctrl = inst.model, inst.ctrl_at(0.05)
x = inst.points

X = forward_state(model, ctrl, x)
P = backward_costate(model, ctrl, X)
print(f"{ctrl.n_layers} layers, h={ctrl.h}, loss per sample:", np.round(loss_j(model, ctrl, x), 4))

for i in range(len(x)):
    fd = fd_input_gradient(model, ctrl, x[i], eps=1e-5)
    err = np.linalg.norm(-P[0, i] - fd) / np.linalg.norm(fd)
    print(f"sample {i}: -P0 = {np.round(-P[0, i], 5)}  rel. error vs FD {err:.1e}")

# at p = inf the perturbation direction starts at delta * P0/|P0|, so
# alpha_hat_0 = D2j beta_0 is a curvature probe along the gradient
delta = 0.1
b1 = first_order_sweeps(model, ctrl, x, NormSpec(np.inf), delta)
for i in range(len(x)):
    H = fd_input_hessian(model, ctrl, x[i])
    ref = H @ b1.beta[0, i]
    err = np.linalg.norm(b1.alpha_hat[0, i] - ref) / np.linalg.norm(ref)
    print(f"sample {i}: alpha_hat_0 vs FD Hessian @ beta_0, rel. error {err:.1e}")
