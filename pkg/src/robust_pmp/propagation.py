"""Forward and backward sweeps through the discretised network.

All sweeps are batched. A trajectory is an array of shape ``(N + 1, B, d)``
with layer index first. Recursions are the exact discrete adjoints of the
explicit Euler scheme ``X_{k+1} = X_k + h f(X_k, theta_k)``. That makes the
algebraic identities hold to roundoff at any ``h``, not just in the limit.
Write ``M_k = I + h D_xi f(X_k, theta_k)``. Then:

* costate: ``P_N = -grad l``, ``P_k = M_k^T P_{k+1} - h grad_xi Phi_k``, so
  ``P_0 = -grad_x j`` exactly;
* perturbation direction: ``beta_{k+1} = M_k beta_k``;
* second adjoint: ``alpha_hat_N = D2 l beta_N`` and
  ``alpha_hat_k = M_k^T alpha_hat_{k+1} - h D2f[P_{k+1}, beta_k] + h D2 Phi_k beta_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, DegenerateGradientError, NumericOverflowError, ShapeError
from .model import dual_norm, dual_norm_subgradient

__all__ = [
    "BatchStats",
    "AdjointBundle1",
    "AdjointBundle2",
    "forward_state",
    "backward_costate",
    "batch_stats",
    "initial_beta",
    "forward_beta",
    "backward_alpha",
    "first_order_sweeps",
    "second_order_sweeps",
    "tangent_flow",
    "directional_state",
    "directional_costate",
    "direction_pair",
]


def _finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericOverflowError(f"non-finite values in {what}")
    return arr


def _layer(ctrl, k):
    return ctrl.layers[k]


def forward_state(model, ctrl, x):
    """Euler trajectory ``X`` of shape ``(N+1, B, d)`` started from ``x`` ``(B, d)`` or ``(d,)``."""
    ctrl.check(model)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2 or x.shape[1] != model.d:
        raise ShapeError(f"expected inputs of shape (B, {model.d}), got {x.shape}")
    dyn, h = model.dynamics, ctrl.h
    X = np.empty((ctrl.n_layers + 1,) + x.shape)
    X[0] = x
    for k in range(ctrl.n_layers):
        X[k + 1] = X[k] + h * dyn.f(X[k], _layer(ctrl, k))
    return _finite(X, "state trajectory")


def backward_costate(model, ctrl, X):
    """Costate ``P`` with ``P_0 = -grad_x j`` for the discrete loss."""
    dyn, run, h = model.dynamics, model.running, ctrl.h
    N = ctrl.n_layers
    if X.shape[0] != N + 1:
        raise ShapeError("trajectory length does not match the control path")
    P = np.empty_like(X)
    P[N] = -model.loss.grad(X[N], ctrl.terminal)
    for k in range(N - 1, -1, -1):
        th = _layer(ctrl, k)
        P[k] = P[k + 1] + h * dyn.vjp(X[k], th, P[k + 1])
        if run.state_dependent:
            P[k] -= h * run.grad_xi(X[k], th)
    return _finite(P, "costate")


@dataclass(frozen=True)
class BatchStats:
    """Batch moment ``E||P_0||_*^q`` and the constant ``kappa = (moment)^(1/p) / delta``."""

    mean_dual_q: float
    kappa: float


def batch_stats(P0, ns, delta, weights=None):
    """Batch statistics in fixed sample order; uniform weights by default."""
    n = dual_norm(P0, ns)
    w = np.full(len(n), 1.0 / len(n)) if weights is None else np.asarray(weights, dtype=float)
    if ns.p == math.inf:
        # q = 1 and 1/p = 0, so kappa = 1/delta regardless of the moment
        moment = float(np.dot(w, n))
        kappa = math.inf if delta == 0 else 1.0 / delta
        return BatchStats(moment, kappa)
    moment = float(np.dot(w, n ** ns.q))
    kappa = math.inf if delta == 0 else moment ** (1.0 / ns.p) / delta
    return BatchStats(moment, kappa)


def _check_beta_norm(ns):
    if not (ns.euclidean or ns.p == math.inf):
        raise CapabilityError("finite p with the max_abs ground norm is not supported by the adjoint sweeps")


def initial_beta(P0, ns, delta, weights=None, stats=None):
    """Starting value ``delta (E||P0||^q)^(-1/p) ||P0||^(q-1) d||P0||``, with 0/0 = 0.

    At ``p = inf`` this is ``delta * P0/|P0|`` (euclidean) or ``delta * sign(P0)``.
    """
    _check_beta_norm(ns)
    if delta == 0:
        return np.zeros_like(P0)
    sub = dual_norm_subgradient(P0, ns)
    if ns.p == math.inf:
        return delta * sub
    stats = stats or batch_stats(P0, ns, delta, weights)
    if stats.mean_dual_q == 0.0:
        return np.zeros_like(P0)
    n = dual_norm(P0, ns)
    scale = delta * stats.mean_dual_q ** (-1.0 / ns.p) * n ** (ns.q - 1.0)
    return scale[:, None] * sub


def tangent_flow(model, ctrl, X, v0):
    """Linearised flow ``v_{k+1} = M_k v_k`` from ``v_0`` ``(B, d)``."""
    dyn, h = model.dynamics, ctrl.h
    V = np.empty_like(X)
    V[0] = v0
    for k in range(ctrl.n_layers):
        V[k + 1] = V[k] + h * dyn.jvp(X[k], _layer(ctrl, k), V[k])
    return _finite(V, "tangent flow")


def forward_beta(model, ctrl, X, P0, ns, delta, weights=None, stats=None):
    """Forward sweep for the worst-case perturbation direction."""
    return tangent_flow(model, ctrl, X, initial_beta(P0, ns, delta, weights, stats))


def _second_adjoint(model, ctrl, X, P, V):
    """Backward sweep ``r_N = D2 l V_N``, ``r_k = M_k^T r_{k+1} - h D2f[P_{k+1}, V_k] + h D2 Phi V_k``.

    ``r_0 = D2_x j V_0`` at the discrete level.
    """
    dyn, run, h = model.dynamics, model.running, ctrl.h
    N = ctrl.n_layers
    R = np.empty_like(X)
    R[N] = np.einsum("nij,nj->ni", model.loss.hess(X[N], ctrl.terminal), V[N])
    for k in range(N - 1, -1, -1):
        th = _layer(ctrl, k)
        R[k] = R[k + 1] + h * dyn.vjp(X[k], th, R[k + 1]) - h * dyn.hess_contract(X[k], th, P[k + 1], V[k])
        if run.state_dependent:
            R[k] += h * np.einsum("nij,nj->ni", run.hess_xi(X[k], th), V[k])
    return _finite(R, "second adjoint")


def backward_alpha(model, ctrl, X, P, beta):
    """Return ``(alpha, alpha_hat)`` with ``alpha = P + alpha_hat`` at every layer."""
    alpha_hat = _second_adjoint(model, ctrl, X, P, beta)
    return P + alpha_hat, alpha_hat


@dataclass
class AdjointBundle1:
    """States and first-order adjoints of one batch."""

    X: np.ndarray
    P: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray
    alpha_hat: np.ndarray
    stats: BatchStats


def first_order_sweeps(model, ctrl, x, ns, delta, weights=None, stats_P0=None, stats_weights=None):
    """Run X forward, P backward, beta forward and alpha backward for a batch.

    ``stats_P0`` (with ``stats_weights``) replaces the batch for the moment in
    the beta normalisation, e.g. to use full-dataset statistics.
    """
    X = forward_state(model, ctrl, x)
    P = backward_costate(model, ctrl, X)
    if stats_P0 is None:
        stats = batch_stats(P[0], ns, delta, weights)
    else:
        stats = batch_stats(stats_P0, ns, delta, stats_weights)
    beta = forward_beta(model, ctrl, X, P[0], ns, delta, stats=stats)
    alpha, alpha_hat = backward_alpha(model, ctrl, X, P, beta)
    return AdjointBundle1(X, P, beta, alpha, alpha_hat, stats)


@dataclass
class AdjointBundle2:
    """Second-order adjoints at ``p = inf`` (euclidean), plus the mask of skipped samples."""

    lam: np.ndarray
    psi: np.ndarray
    pi: np.ndarray
    phi: np.ndarray
    degenerate: np.ndarray


def _project_out(v, u, norm):
    return (v - np.sum(v * u, axis=1, keepdims=True) * u) / norm[:, None]


def second_order_sweeps(model, ctrl, b1, ns, delta, on_degenerate="raise"):
    """Adjoints of the gradient-direction curvature objective at ``p = inf``.

    The per-sample objective is ``j + delta |P0| + (delta^2/2) u^T D2j u`` with
    ``u = P0/|P0|``.  Sweeps: ``lam`` forward from ``(delta/2) u``, ``psi``
    backward (``psi_0 = D2j lam_0``), ``pi`` forward from the total sensitivity
    to ``P0`` and ``phi`` backward from ``grad l - D2l pi_N + D3l[beta_N, lam_N]``.

    Samples with ``P0 = 0`` raise :class:`DegenerateGradientError`, or with
    ``on_degenerate="skip"`` keep only their clean-risk contribution.
    """
    if not (ns.p == math.inf and ns.euclidean):
        raise CapabilityError("second-order sweeps are implemented for p = inf with the euclidean norm")
    if model.running.state_dependent:
        raise CapabilityError("second-order sweeps require a state-independent running cost")
    if on_degenerate not in ("raise", "skip"):
        raise ValueError("on_degenerate must be 'raise' or 'skip'")
    dyn, loss, h = model.dynamics, model.loss, ctrl.h
    N = ctrl.n_layers
    X, P, beta, alpha_hat = b1.X, b1.P, b1.beta, b1.alpha_hat
    nrm = dual_norm(P[0], ns)
    degenerate = nrm == 0.0
    if np.any(degenerate) and on_degenerate == "raise" and delta != 0:
        raise DegenerateGradientError(f"{int(degenerate.sum())} sample(s) have vanishing input gradient")
    safe = np.where(degenerate, 1.0, nrm)
    u = np.where(degenerate[:, None], 0.0, P[0] / safe[:, None])
    keep = (~degenerate)[:, None].astype(float)

    lam = tangent_flow(model, ctrl, X, 0.5 * delta * u)
    psi = _second_adjoint(model, ctrl, X, P, lam)

    pi = np.empty_like(X)
    pi[0] = keep * (
        delta * u
        + 0.5 * delta * _project_out(alpha_hat[0], u, safe)
        + delta * _project_out(psi[0], u, safe)
    )
    for k in range(N):
        th = _layer(ctrl, k)
        pi[k + 1] = (
            pi[k]
            + h * dyn.jvp(X[k], th, pi[k])
            - h * dyn.hess_contract_out(X[k], th, beta[k], lam[k])
        )
    _finite(pi, "pi sweep")

    thN = ctrl.terminal
    phi = np.empty_like(X)
    phi[N] = (
        loss.grad(X[N], thN)
        - np.einsum("nij,nj->ni", loss.hess(X[N], thN), pi[N])
        + np.einsum("nijk,nj,nk->ni", loss.d3(X[N], thN), beta[N], lam[N])
    )
    for k in range(N - 1, -1, -1):
        th = _layer(ctrl, k)
        xk = X[k]
        phi[k] = phi[k + 1] + h * (
            dyn.vjp(xk, th, phi[k + 1])
            + dyn.hess_contract(xk, th, P[k + 1], pi[k])
            + dyn.hess_contract(xk, th, psi[k + 1], beta[k])
            + dyn.hess_contract(xk, th, alpha_hat[k + 1], lam[k])
            - dyn.d3_contract(xk, th, P[k + 1], beta[k], lam[k])
        )
    _finite(phi, "phi sweep")
    return AdjointBundle2(lam, psi, pi, phi, degenerate)


def directional_state(model, ctrl, X, dx):
    """Derivative of the trajectory along the input direction ``dx`` ``(B, d)`` or ``(d,)``."""
    dx = np.broadcast_to(np.asarray(dx, dtype=float), X.shape[1:])
    return tangent_flow(model, ctrl, X, dx)


def directional_costate(model, ctrl, X, P, zeta):
    """Derivative of the costate along the input direction that produced ``zeta``."""
    return -_second_adjoint(model, ctrl, X, P, zeta)


def direction_pair(model, ctrl, X, P, z):
    """Return ``(gamma, rho)`` for direction ``z``; ``rho_0 = D2_x j z``.

    Consequently ``grad_x(P_0 . z) = -rho_0`` and ``rho_0 . z = z^T D2_x j z``.
    """
    gamma = directional_state(model, ctrl, X, z)
    return gamma, _second_adjoint(model, ctrl, X, P, gamma)
