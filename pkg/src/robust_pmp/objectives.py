"""Scalar objectives and their control gradients.

Objective values are computed from the sweeps only (no dense input Hessian
except where the objective itself is a Hessian spectrum).  Control gradients
are returned as a :class:`ControlPath`-shaped object whose layer blocks are
the exact partial derivatives ``dF/dtheta_k``.  These equal ``h`` times the
batch mean of the Hamiltonian gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapabilityError
from .model import ControlPath, dual_norm, power_mean
from .propagation import (
    backward_alpha,
    backward_costate,
    batch_stats,
    direction_pair,
    forward_beta,
    forward_state,
    AdjointBundle1,
    second_order_sweeps,
)

__all__ = [
    "EmpiricalMeasure",
    "RegularizerSpec",
    "VARIANTS",
    "loss_j",
    "risk",
    "first_order_objective",
    "second_order_v1_objective",
    "input_hessian",
    "curvature_exact_objective",
    "mc_curvature_samples",
    "curvature_mc_objective",
    "fgsm_points",
    "fgsm_objective",
    "hamiltonian_control_gradient",
    "second_order_control_gradient",
    "terminal_parameter_gradient",
    "ObjectiveEval",
    "evaluate",
    "objective_value",
]

VARIANTS = ("clean", "first_order", "second_order_v1", "curvature_exact", "curvature_mc", "fgsm")


class EmpiricalMeasure:
    """Weighted point cloud; weights are normalised to sum to one (uniform by default)."""

    def __init__(self, points, weights=None):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.size == 0 or pts.shape[0] == 0:
            raise ValueError("empirical measure needs at least one point")
        if weights is None:
            w = np.full(pts.shape[0], 1.0 / pts.shape[0])
        else:
            w = np.asarray(weights, dtype=float).reshape(-1)
            if w.shape[0] != pts.shape[0] or np.any(w < 0) or w.sum() <= 0:
                raise ValueError("weights must be nonnegative, one per point, with positive sum")
            w = w / w.sum()
        self.points = pts
        self.weights = w

    def __len__(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]

    def subset(self, idx):
        w = self.weights[idx]
        return EmpiricalMeasure(self.points[idx], w)


@dataclass(frozen=True)
class RegularizerSpec:
    """Which robust objective is used, and its knobs."""

    variant: str = "clean"
    delta: float = 0.0
    m: int = 16
    alpha_mix: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not self.delta >= 0:
            raise ValueError("delta must be nonnegative")
        if int(self.m) < 1:
            raise ValueError("m must be at least 1")
        if not 0.0 <= self.alpha_mix < 1.0:
            raise ValueError("alpha_mix must lie in [0, 1)")


def _as_measure(mu):
    return mu if isinstance(mu, EmpiricalMeasure) else EmpiricalMeasure(mu)


def _per_sample_j(model, ctrl, X):
    out = model.loss.value(X[-1], ctrl.terminal)
    run = model.running
    if run.active:
        acc = np.zeros(X.shape[1])
        for k in range(ctrl.n_layers):
            acc += run.value(X[k], ctrl.layers[k])
        out = out + ctrl.h * acc
    return out


def loss_j(model, ctrl, x):
    """``l(X_N) + h sum_k Phi(X_k, theta_k)``; scalar for one input, ``(B,)`` for a batch."""
    x = np.asarray(x, dtype=float)
    vals = _per_sample_j(model, ctrl, forward_state(model, ctrl, x))
    return float(vals[0]) if x.ndim == 1 else vals


def risk(model, mu, ctrl):
    mu = _as_measure(mu)
    return float(np.dot(mu.weights, loss_j(model, ctrl, mu.points)))


def _sweep(model, ctrl, mu):
    X = forward_state(model, ctrl, mu.points)
    P = backward_costate(model, ctrl, X)
    return X, P


def _masked(P0, feature_mask):
    if feature_mask is None:
        return P0
    m = np.asarray(feature_mask, dtype=bool)
    if m.shape != (P0.shape[1],):
        raise ValueError(f"feature_mask must have length {P0.shape[1]}")
    return P0 * m


def first_order_objective(model, mu, ctrl, delta, ns, feature_mask=None):
    """``J + delta * (E ||grad_x j||_*^q)^(1/q)``.

    With ``feature_mask`` (True = movable) only the movable coordinates of the
    gradient enter, which is the expansion for perturbations that keep the
    frozen coordinates (e.g. labels) fixed.
    """
    mu = _as_measure(mu)
    X, P = _sweep(model, ctrl, mu)
    J = float(np.dot(mu.weights, _per_sample_j(model, ctrl, X)))
    if delta == 0:
        return J
    return J + delta * power_mean(dual_norm(_masked(P[0], feature_mask), ns), mu.weights, ns.q)


def _second_order_term(P0, alpha_hat0, weights, stats, ns, delta):
    """``(delta/2) E[|P0|^(q-2) alpha_hat0 . P0] / (E|P0|^q)^(1/p)``, with 0 for ``P0 = 0``."""
    n = dual_norm(P0, ns)
    live = n > 0
    safe = np.where(live, n, 1.0)
    inner = np.where(live, safe ** (ns.q - 2.0) * np.sum(alpha_hat0 * P0, axis=1), 0.0)
    if ns.p == math.inf:
        denom = 1.0
    else:
        if stats.mean_dual_q == 0:
            return 0.0, int(np.sum(~live))
        denom = stats.mean_dual_q ** (1.0 / ns.p)
    return 0.5 * delta * float(np.dot(weights, inner)) / denom, int(np.sum(~live))


def second_order_v1_objective(model, mu, ctrl, delta, ns, return_diagnostics=False, feature_mask=None):
    """First-order objective plus the gradient-direction curvature term.

    With ``return_diagnostics`` also returns the number of samples whose input
    gradient vanished (they contribute zero to the curvature term).
    ``feature_mask`` restricts the gradient, and hence the curvature
    direction, to the movable coordinates.
    """
    if not ns.euclidean:
        raise CapabilityError("second-order objective requires the euclidean ground norm")
    mu = _as_measure(mu)
    X, P = _sweep(model, ctrl, mu)
    J = float(np.dot(mu.weights, _per_sample_j(model, ctrl, X)))
    if delta == 0:
        return (J, 0) if return_diagnostics else J
    P0 = _masked(P[0], feature_mask)
    stats = batch_stats(P0, ns, delta, mu.weights)
    beta = forward_beta(model, ctrl, X, P0, ns, delta, stats=stats)
    _, alpha_hat = backward_alpha(model, ctrl, X, P, beta)
    first = delta * power_mean(dual_norm(P0, ns), mu.weights, ns.q)
    second, n_deg = _second_order_term(P0, alpha_hat[0], mu.weights, stats, ns, delta)
    val = J + first + second
    return (val, n_deg) if return_diagnostics else val


def input_hessian(model, ctrl, x):
    """Input Hessians ``D2_x j`` stacked ``(B, d, d)``, assembled from ``d`` direction pairs."""
    X = forward_state(model, ctrl, x)
    P = backward_costate(model, ctrl, X)
    d = model.d
    H = np.empty((X.shape[1], d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        H[:, :, i] = direction_pair(model, ctrl, X, P, e)[1][0]
    return 0.5 * (H + np.transpose(H, (0, 2, 1)))


def curvature_exact_objective(model, mu, ctrl, delta, ns, d_cap=32):
    """``J + (delta^2/2) * (E[(lambda_max)_+^q~])^(1/q~)``."""
    if not ns.euclidean:
        raise CapabilityError("curvature objectives use the euclidean unit sphere")
    if model.d > d_cap:
        raise CapabilityError(f"exact curvature is capped at d <= {d_cap}; use the Monte-Carlo objective")
    mu = _as_measure(mu)
    J = risk(model, mu, ctrl)
    if delta == 0:
        return J
    lam_max = np.linalg.eigvalsh(input_hessian(model, ctrl, mu.points))[:, -1]
    return J + 0.5 * delta**2 * power_mean(np.maximum(lam_max, 0.0), mu.weights, ns.q_tilde)


def sphere_directions(d, m, seed):
    """``m`` directions uniform on the unit sphere from a seeded generator."""
    z = np.random.default_rng(seed).standard_normal((m, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def mc_curvature_samples(model, ctrl, x, m, seed):
    """Per-sample estimator ``(1/m) sum_i (z_i^T D2_x j z_i)_+`` with shared directions."""
    X = forward_state(model, ctrl, x)
    P = backward_costate(model, ctrl, X)
    acc = np.zeros(X.shape[1])
    for z in sphere_directions(model.d, m, seed):
        rho0 = direction_pair(model, ctrl, X, P, z)[1][0]
        acc += np.maximum(rho0 @ z, 0.0)
    return acc / m


def curvature_mc_objective(model, mu, ctrl, delta, ns, m, seed):
    if not ns.euclidean:
        raise CapabilityError("curvature objectives use the euclidean unit sphere")
    mu = _as_measure(mu)
    J = risk(model, mu, ctrl)
    if delta == 0:
        return J
    est = mc_curvature_samples(model, ctrl, mu.points, m, seed)
    return J + 0.5 * delta**2 * power_mean(est, mu.weights, ns.q_tilde)


def fgsm_points(model, ctrl, x, delta, P0=None):
    """``x + delta * sign(grad_x j)``, the single-step sign attack."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if P0 is None:
        P0 = backward_costate(model, ctrl, forward_state(model, ctrl, x))[0]
    return x + delta * np.sign(-P0)


def fgsm_objective(model, mu, ctrl, delta, alpha_mix):
    """``alpha j(x) + (1 - alpha) j(x + delta sign grad j)`` averaged over the measure."""
    mu = _as_measure(mu)
    clean = loss_j(model, ctrl, mu.points)
    adv = loss_j(model, ctrl, fgsm_points(model, ctrl, mu.points, delta))
    return float(np.dot(mu.weights, alpha_mix * clean + (1.0 - alpha_mix) * adv))


# ---------------------------------------------------------------------------
# Control gradients


def hamiltonian_control_gradient(model, ctrl, b1, k):
    """Per-sample gradient in the layer-``k`` block of the first-order Hamiltonian, ``(B, n)``.

    Equal to ``grad Phi - D_theta f^T alpha_{k+1} + D_theta D_xi f[P_{k+1}, beta_k]
    - D_theta grad_xi Phi^T beta_k``; the objective's partial derivative is ``h``
    times its batch mean.
    """
    dyn, run = model.dynamics, model.running
    th = ctrl.layers[k]
    xk = b1.X[k]
    g = dyn.theta_jac_contract(xk, th, b1.P[k + 1], b1.beta[k]) - dyn.theta_vjp(xk, th, b1.alpha[k + 1])
    if run.active:
        g += run.grad_theta(xk, th)
        if run.state_dependent:
            g -= np.einsum("nip,ni->np", run.dtheta_xi(xk, th), b1.beta[k])
    return g


def terminal_parameter_gradient(model, ctrl, b1):
    """Per-sample ``grad_theta l - (D_theta grad_xi l)^T beta_N``, ``(B, n_T)``."""
    XN, thN = b1.X[-1], ctrl.terminal
    loss = model.loss
    return loss.grad_theta(XN, thN) - np.einsum("nip,ni->np", loss.dtheta_grad(XN, thN), b1.beta[-1])


def second_order_control_gradient(model, ctrl, b1, b2, k):
    """Per-sample layer-``k`` gradient of the second-order Hamiltonian (same scaling as above)."""
    dyn, run = model.dynamics, model.running
    th = ctrl.layers[k]
    xk = b1.X[k]
    g = (
        dyn.theta_vjp(xk, th, b2.phi[k + 1])
        + dyn.theta_jac_contract(xk, th, b1.P[k + 1], b2.pi[k])
        + dyn.theta_jac_contract(xk, th, b2.psi[k + 1], b1.beta[k])
        + dyn.theta_jac_contract(xk, th, b1.alpha_hat[k + 1], b2.lam[k])
        - dyn.theta_hess_contract(xk, th, b1.P[k + 1], b1.beta[k], b2.lam[k])
    )
    if run.active:
        g += run.grad_theta(xk, th)
    return g


def _second_order_terminal_gradient(model, ctrl, b1, b2):
    XN, thN = b1.X[-1], ctrl.terminal
    loss = model.loss
    return (
        loss.grad_theta(XN, thN)
        - np.einsum("nip,ni->np", loss.dtheta_grad(XN, thN), b2.pi[-1])
        + np.einsum("nijp,ni,nj->np", loss.dtheta_hess(XN, thN), b2.lam[-1], b1.beta[-1])
    )


@dataclass
class ObjectiveEval:
    """Objective value, its split into clean risk and regularizer, and the control gradient."""

    value: float
    clean: float
    reg_term: float
    grad: ControlPath
    degenerate: int = 0
    extra: dict = field(default_factory=dict)


def _reduce_layers(model, ctrl, per_layer_fn, w):
    out = np.empty_like(ctrl.layers)
    for k in range(ctrl.n_layers):
        out[k] = ctrl.h * (w @ per_layer_fn(k))
    return out


def _chunk_first_order(model, ctrl, X, P, w, ns, delta, stats):
    beta = forward_beta(model, ctrl, X, P[0], ns, delta, stats=stats)
    alpha, alpha_hat = backward_alpha(model, ctrl, X, P, beta)
    b1 = AdjointBundle1(X, P, beta, alpha, alpha_hat, stats)
    layers = _reduce_layers(model, ctrl, lambda k: hamiltonian_control_gradient(model, ctrl, b1, k), w)
    terminal = w @ terminal_parameter_gradient(model, ctrl, b1)
    return {"layers": layers, "terminal": terminal, "b1": b1}


def _chunk_second_order(model, ctrl, X, P, w, ns, delta, stats, on_degenerate):
    parts = _chunk_first_order(model, ctrl, X, P, w, ns, delta, stats)
    b1 = parts["b1"]
    b2 = second_order_sweeps(model, ctrl, b1, ns, delta, on_degenerate=on_degenerate)
    layers = _reduce_layers(model, ctrl, lambda k: second_order_control_gradient(model, ctrl, b1, b2, k), w)
    terminal = w @ _second_order_terminal_gradient(model, ctrl, b1, b2)
    keep = ~b2.degenerate
    nrm = dual_norm(P[0], ns)
    safe = np.where(keep, nrm, 1.0)
    reg = float(
        w @ np.where(keep, delta * nrm + 0.5 * delta * np.sum(b1.alpha_hat[0] * P[0], axis=1) / safe, 0.0)
    )
    return {"layers": layers, "terminal": terminal, "reg": reg, "degenerate": int(b2.degenerate.sum())}


def _chunks(n, size):
    return [slice(s, min(s + size, n)) for s in range(0, n, size)]


def _map(fn, items, executor):
    if executor is None:
        return [fn(it) for it in items]
    return list(executor.map(fn, items))


def evaluate(
    model,
    ctrl,
    x,
    weights,
    reg,
    ns,
    stats_points=None,
    stats_weights=None,
    on_degenerate="raise",
    chunk_size=16,
    executor=None,
):
    """Objective value and exact control gradient of ``reg`` on the batch ``(x, weights)``.

    The batch is processed in fixed-size chunks, optionally in parallel through
    ``executor``; partial sums are combined in chunk order so the result does not
    depend on the number of workers.  ``weights`` must sum to one over the batch.
    For finite ``p`` the normalising moment comes from ``stats_points`` when
    given (full-dataset statistics), otherwise from the batch itself.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    w = np.asarray(weights, dtype=float)
    ctrl.check(model)
    variant = reg.variant
    if variant in ("curvature_exact", "curvature_mc"):
        raise CapabilityError(f"no control gradient is implemented for variant {variant!r}")
    delta = float(reg.delta)
    if variant == "clean":
        delta = 0.0
    if variant == "second_order_v1" and delta > 0 and not (ns.p == math.inf and ns.euclidean):
        raise CapabilityError("second-order training requires p = inf with the euclidean ground norm")
    slices = _chunks(len(x), chunk_size)

    def sweep(sl):
        X = forward_state(model, ctrl, x[sl])
        return X, backward_costate(model, ctrl, X)

    def fgsm_sweep(sl):
        X, P = sweep(sl)
        xa = fgsm_points(model, ctrl, x[sl], delta, P0=P[0])
        Xa = forward_state(model, ctrl, xa)
        return X, P, Xa, backward_costate(model, ctrl, Xa)

    if variant == "fgsm" and delta > 0:
        parts = _map(fgsm_sweep, slices, executor)
    else:
        parts = _map(sweep, slices, executor)
    j_clean = np.concatenate([_per_sample_j(model, ctrl, p[0]) for p in parts])
    clean = float(w @ j_clean)
    P0 = np.concatenate([p[1][0] for p in parts])

    if variant == "fgsm" and delta > 0:
        a = reg.alpha_mix
        j_adv = np.concatenate([_per_sample_j(model, ctrl, p[2]) for p in parts])
        value = float(w @ (a * j_clean + (1.0 - a) * j_adv))

        def grad_fgsm(i):
            sl, (X, P, Xa, Pa) = slices[i], parts[i]
            g0 = _chunk_first_order(model, ctrl, X, P, w[sl], ns, 0.0, None)
            g1 = _chunk_first_order(model, ctrl, Xa, Pa, w[sl], ns, 0.0, None)
            return {
                "layers": a * g0["layers"] + (1.0 - a) * g1["layers"],
                "terminal": a * g0["terminal"] + (1.0 - a) * g1["terminal"],
            }

        grads = _map(grad_fgsm, range(len(slices)), executor)
        return _assemble(ctrl, clean, value, grads, 0)

    if delta == 0:
        stats = None
    elif stats_points is not None:
        Xs = forward_state(model, ctrl, stats_points)
        sw = stats_weights if stats_weights is not None else np.full(len(stats_points), 1.0 / len(stats_points))
        stats = batch_stats(backward_costate(model, ctrl, Xs)[0], ns, delta, sw)
    else:
        stats = batch_stats(P0, ns, delta, w)

    if variant == "second_order_v1" and delta > 0:
        grads = _map(
            lambda i: _chunk_second_order(
                model, ctrl, parts[i][0], parts[i][1], w[slices[i]], ns, delta, stats, on_degenerate
            ),
            range(len(slices)),
            executor,
        )
        reg_term = float(sum(g["reg"] for g in grads))
        n_deg = int(sum(g["degenerate"] for g in grads))
        return _assemble(ctrl, clean, clean + reg_term, grads, n_deg)

    grads = _map(
        lambda i: _chunk_first_order(model, ctrl, parts[i][0], parts[i][1], w[slices[i]], ns, delta, stats),
        range(len(slices)),
        executor,
    )
    reg_term = 0.0 if delta == 0 else delta * power_mean(dual_norm(P0, ns), w, ns.q)
    return _assemble(ctrl, clean, clean + reg_term, grads, 0)


def _assemble(ctrl, clean, value, grads, n_deg):
    layers = np.zeros_like(ctrl.layers)
    terminal = np.zeros_like(ctrl.terminal)
    for g in grads:
        layers += g["layers"]
        terminal += g["terminal"]
    return ObjectiveEval(value, clean, value - clean, ControlPath(layers, terminal, ctrl.h), n_deg)


def objective_value(model, mu, ctrl, reg, ns):
    """Value of the objective selected by ``reg`` on the measure ``mu``."""
    mu = _as_measure(mu)
    v = reg.variant
    if v == "clean" or reg.delta == 0:
        return risk(model, mu, ctrl)
    if v == "first_order":
        return first_order_objective(model, mu, ctrl, reg.delta, ns)
    if v == "second_order_v1":
        return second_order_v1_objective(model, mu, ctrl, reg.delta, ns)
    if v == "curvature_exact":
        return curvature_exact_objective(model, mu, ctrl, reg.delta, ns)
    if v == "curvature_mc":
        return curvature_mc_objective(model, mu, ctrl, reg.delta, ns, reg.m, reg.seed)
    return fgsm_objective(model, mu, ctrl, reg.delta, reg.alpha_mix)
