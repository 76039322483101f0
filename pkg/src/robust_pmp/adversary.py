"""Brute-force adversaries over Wasserstein balls around the data.

``p = inf`` decouples into one ground-norm ball per point and is attacked
pointwise.  Finite ``p`` couples the points through the budget
``sum_i w_i |u_i|^p <= delta^p`` on the displacements ``u_i``.  Both searches
restrict to deterministic per-point maps, so their values are lower bounds
on the robust risk.  The dual function is an upper bound when its inner
suprema are solved exactly; here those suprema are seeded with the attack
points, so the computed dual never drops below the attack value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .errors import UnboundedDualError
from .model import NormSpec, dual_norm, dual_norm_subgradient, ground_norm
from .objectives import EmpiricalMeasure, _per_sample_j, risk
from .propagation import backward_costate, forward_state

__all__ = [
    "AttackConfig",
    "AttackResult",
    "pga_attack_pointwise",
    "pga_attack_wasserstein",
    "dual_value",
    "solve_dual",
    "robust_risk_oracle",
]


@dataclass(frozen=True)
class AttackConfig:
    """Attack knobs.  ``feature_mask[i]`` is True for coordinates the adversary may move.

    ``step_size=None`` means ``delta / 10``.
    """

    delta: float = 0.0
    ns: NormSpec = field(default_factory=NormSpec)
    steps: int = 200
    step_size: float | None = None
    restarts: int = 8
    feature_mask: tuple | None = None
    seed: int = 0
    dual_cap: float = 1e8
    dual_starts: int = 4

    def __post_init__(self):
        if self.steps < 1 or self.restarts < 1:
            raise ValueError("steps and restarts must be at least 1")
        if not self.delta >= 0:
            raise ValueError("delta must be nonnegative")

    @property
    def step(self):
        return self.delta / 10.0 if self.step_size is None else float(self.step_size)

    def mask(self, d):
        if self.feature_mask is None:
            return np.ones(d)
        m = np.asarray(self.feature_mask, dtype=bool)
        if m.shape != (d,):
            raise ValueError(f"feature_mask must have length {d}")
        return m.astype(float)


@dataclass
class AttackResult:
    points: np.ndarray
    value: float
    transport_cost: float
    restart_values: list
    clean_risk: float
    bound: str = "lower"


def _value_and_grad(model, ctrl, pts):
    X = forward_state(model, ctrl, pts)
    P = backward_costate(model, ctrl, X)
    return _per_sample_j(model, ctrl, X), -P[0]


def _project_ball(u, delta, ns):
    if ns.euclidean:
        n = np.sqrt(np.sum(u * u, axis=1, keepdims=True))
        scale = np.where(n > delta, delta / np.where(n > 0, n, 1.0), 1.0)
        return u * scale
    return np.clip(u, -delta, delta)


def _random_in_ball(rng, shape, delta, ns, mask):
    n, d = shape
    if ns.euclidean:
        z = rng.standard_normal(shape) * mask
        nz = np.linalg.norm(z, axis=1, keepdims=True)
        z = z / np.where(nz > 0, nz, 1.0)
        k = max(int(mask.sum()), 1)
        return z * delta * rng.random((n, 1)) ** (1.0 / k)
    return rng.uniform(-delta, delta, shape) * mask


def _transport(u, weights, ns):
    g = ground_norm(u, ns)
    if ns.p == math.inf:
        return float(np.max(g))
    return float(np.dot(weights, g ** ns.p) ** (1.0 / ns.p))


def pga_attack_pointwise(model, mu, ctrl, cfg):
    """Projected gradient ascent inside each ground-norm ball of radius ``delta``.

    Restart 0 starts at ``delta * dnorm(grad j)``, the first-order maximiser;
    the others start uniformly in the ball.  The best iterate per point is kept.
    """
    mu = mu if isinstance(mu, EmpiricalMeasure) else EmpiricalMeasure(mu)
    ns, delta = cfg.ns, float(cfg.delta)
    x, w = mu.points, mu.weights
    B, d = x.shape
    j0, g0 = _value_and_grad(model, ctrl, x)
    clean = float(np.dot(w, j0))
    if delta == 0:
        return AttackResult(x.copy(), clean, 0.0, [clean] * cfg.restarts, clean)
    mask = cfg.mask(d)
    rng = np.random.default_rng(cfg.seed)
    R = cfg.restarts
    u = np.empty((R, B, d))
    u[0] = _project_ball(delta * dual_norm_subgradient(g0 * mask, ns), delta, ns)
    for r in range(1, R):
        u[r] = _random_in_ball(rng, (B, d), delta, ns, mask)
    u = u.reshape(R * B, d)
    xr = np.tile(x, (R, 1))
    best_val = np.full(R * B, -np.inf)
    best_u = u.copy()
    s = cfg.step
    for it in range(cfg.steps + 1):
        val, g = _value_and_grad(model, ctrl, xr + u)
        better = val > best_val
        best_val = np.where(better, val, best_val)
        best_u[better] = u[better]
        if it == cfg.steps:
            break
        u = _project_ball(u + s * dual_norm_subgradient(g * mask, ns), delta, ns) * mask
    best_val = best_val.reshape(R, B)
    best_u = best_u.reshape(R, B, d)
    pick = np.argmax(best_val, axis=0)
    u_star = best_u[pick, np.arange(B)]
    # never report below the clean value (the zero displacement is feasible)
    vals = best_val[pick, np.arange(B)]
    keep0 = j0 > vals
    u_star[keep0] = 0.0
    vals = np.where(keep0, j0, vals)
    return AttackResult(
        x + u_star,
        float(np.dot(w, vals)),
        _transport(u_star, w, ns),
        [float(np.dot(w, best_val[r])) for r in range(R)],
        clean,
    )


def _dual_map(g, weights, ns, radius):
    """Displacement of size ``radius`` (in the weighted l_p sense) maximising ``E[g . u]``."""
    n = dual_norm(g, ns)
    moment = float(np.dot(weights, n ** ns.q))
    if moment == 0.0:
        return np.zeros_like(g)
    scale = radius * moment ** (-1.0 / ns.p) * n ** (ns.q - 1.0)
    return scale[:, None] * dual_norm_subgradient(g, ns)


def _project_budget(u, weights, ns, delta):
    cost = _transport(u, weights, ns)
    if cost > delta:
        return u * (delta / cost)
    return u


def pga_attack_wasserstein(model, mu, ctrl, cfg):
    """Joint projected ascent on ``E[j(x + u)]`` over ``(E|u|^p)^(1/p) <= delta``.

    Each step moves along the dual map of the current gradient field (the
    steepest direction for the weighted l_p budget) and rescales radially back
    into the budget.  Restart 0 is seeded at the first-order maximiser.
    """
    mu = mu if isinstance(mu, EmpiricalMeasure) else EmpiricalMeasure(mu)
    ns, delta = cfg.ns, float(cfg.delta)
    if ns.p == math.inf:
        raise ValueError("use pga_attack_pointwise for p = inf")
    x, w = mu.points, mu.weights
    B, d = x.shape
    j0, g0 = _value_and_grad(model, ctrl, x)
    clean = float(np.dot(w, j0))
    if delta == 0:
        return AttackResult(x.copy(), clean, 0.0, [clean] * cfg.restarts, clean)
    mask = cfg.mask(d)
    rng = np.random.default_rng(cfg.seed)
    s = cfg.step
    best = (clean, np.zeros_like(x))
    restart_values = []
    for r in range(cfg.restarts):
        if r == 0:
            u = _dual_map(g0 * mask, w, ns, delta)
        else:
            u = rng.standard_normal((B, d)) * mask
            u = _project_budget(u * (delta / max(_transport(u, w, ns), 1e-300)), w, ns, delta)
        r_best = (-np.inf, u)
        for it in range(cfg.steps + 1):
            val, g = _value_and_grad(model, ctrl, x + u)
            total = float(np.dot(w, val))
            if total > r_best[0]:
                r_best = (total, u.copy())
            if it == cfg.steps:
                break
            u = _project_budget((u + _dual_map(g * mask, w, ns, s)) * mask, w, ns, delta)
        restart_values.append(r_best[0])
        if r_best[0] > best[0]:
            best = r_best
    u_star = best[1]
    return AttackResult(x + u_star, best[0], _transport(u_star, w, ns), restart_values, clean)


# ---------------------------------------------------------------------------
# Dual formulation


def _cost_and_grad(u, ns):
    """``|u|^p`` and its (sub)gradient per row."""
    p = ns.p
    n = ground_norm(u, ns)
    if ns.euclidean:
        grad = p * (n ** (p - 2.0))[:, None] * u
    else:
        idx = np.argmax(np.abs(u), axis=1)
        grad = np.zeros_like(u)
        rows = np.arange(len(u))
        grad[rows, idx] = p * n ** (p - 1.0) * np.sign(u[rows, idx])
    return n**p, grad


def _inner_sup(model, ctrl, x, gamma, ns, mask, starts, cap):
    """Per-point ``sup_u j(x + u) - gamma |u|^p`` by L-BFGS from several starting fields."""
    B, d = x.shape
    best = np.full(B, -np.inf)
    for u0 in starts:
        def fun(flat):
            u = flat.reshape(B, d) * mask
            val, g = _value_and_grad(model, ctrl, x + u)
            c, cg = _cost_and_grad(u, ns)
            obj = val - gamma * c
            grad = (g - gamma * cg) * mask
            return -float(np.sum(obj)), -grad.ravel()

        # an unbounded inner problem overflows on the way out; that is reported below
        with np.errstate(over="ignore", invalid="ignore"):
            res = minimize(fun, (u0 * mask).ravel(), jac=True, method="L-BFGS-B",
                           options={"maxiter": 500, "gtol": 1e-10, "ftol": 1e-15})
            u = res.x.reshape(B, d) * mask
            val = _per_sample_j(model, ctrl, forward_state(model, ctrl, x + u)) - gamma * _cost_and_grad(u, ns)[0]
        # the start itself is feasible, so never do worse than it
        v0 = _per_sample_j(model, ctrl, forward_state(model, ctrl, x + u0 * mask)) - gamma * _cost_and_grad(u0 * mask, ns)[0]
        val = np.maximum(np.where(np.isfinite(val), val, -np.inf), v0)
        best = np.maximum(best, val)
    if np.any(best > cap) or not np.all(np.isfinite(best)):
        raise UnboundedDualError(f"inner supremum exceeded the cap {cap:g} at gamma={gamma:g}")
    return best


def _dual_starts(mu, cfg, seeds):
    B, d = mu.points.shape
    rng = np.random.default_rng(cfg.seed + 1)
    starts = [np.zeros((B, d))]
    if seeds is not None:
        starts.append(np.asarray(seeds, dtype=float) - mu.points)
    for _ in range(max(cfg.dual_starts - len(starts), 0)):
        starts.append(rng.standard_normal((B, d)) * cfg.delta)
    return starts


def dual_value(gamma, model, mu, ctrl, cfg, seeds=None):
    """``gamma delta^p + E[sup_u j(x + u) - gamma |u|^p]`` for finite ``p``.

    ``seeds`` (e.g. attack points) are added to the multi-start set.  Raises
    :class:`UnboundedDualError` when an inner supremum exceeds ``cfg.dual_cap``.
    """
    mu = mu if isinstance(mu, EmpiricalMeasure) else EmpiricalMeasure(mu)
    ns = cfg.ns
    if ns.p == math.inf:
        raise ValueError("the dual function is defined for finite p")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    inner = _inner_sup(model, ctrl, mu.points, gamma, ns, cfg.mask(mu.d), _dual_starts(mu, cfg, seeds), cfg.dual_cap)
    return gamma * cfg.delta**ns.p + float(np.dot(mu.weights, inner))


def _safe_dual(gamma, *args, **kw):
    try:
        return dual_value(gamma, *args, **kw)
    except UnboundedDualError:
        return math.inf


def solve_dual(model, mu, ctrl, cfg, seeds=None, tol=1e-6, max_iter=80):
    """Minimise the (convex) dual function over ``gamma`` by golden-section search.

    The bracket is ``[0, gamma_max]`` with ``gamma_max = 10 L / (p delta^(p-1))``
    and ``L`` the largest input-gradient dual norm on the data, doubled until the
    function increases at the right end.  Returns ``(gamma*, value)``.
    """
    mu = mu if isinstance(mu, EmpiricalMeasure) else EmpiricalMeasure(mu)
    ns, delta = cfg.ns, float(cfg.delta)
    if delta == 0:
        # the inner sup tends to j(x) as gamma grows; the infimum is the clean risk
        return math.inf, risk(model, mu, ctrl)
    _, g = _value_and_grad(model, ctrl, mu.points)
    lip = max(float(np.max(dual_norm(g * cfg.mask(mu.d), ns))), 1e-8)
    f = lambda gm: _safe_dual(gm, model, mu, ctrl, cfg, seeds=seeds)
    hi = 10.0 * lip / (ns.p * delta ** (ns.p - 1.0))
    f_hi = f(hi)
    for _ in range(40):
        f_in = f(0.9 * hi)
        if f_hi > f_in:
            break
        hi *= 2.0
        f_hi = f(hi)
    lo = 0.0
    ratio = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d_ = b - ratio * (b - a), a + ratio * (b - a)
    fc, fd = f(c), f(d_)
    for _ in range(max_iter):
        if b - a <= tol * hi:
            break
        if fc <= fd and fc < math.inf:
            b, d_, fd = d_, c, fc
            c = b - ratio * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d_, fd
            d_ = a + ratio * (b - a)
            fd = f(d_)
    if fc <= fd:
        return c, fc
    return d_, fd


def robust_risk_oracle(model, mu, ctrl, delta, ns, check_duality=False, return_result=False, **settings):
    """Best attack value found for the radius-``delta`` ball (a lower bound on the robust risk).

    ``settings`` override :class:`AttackConfig` fields (defaults: 200 steps,
    8 restarts, step ``delta/10``).  With ``check_duality`` (finite ``p`` only)
    the dual minimum is computed as well and the sandwich is asserted; the
    result then carries ``dual_value`` and ``gamma`` in the returned object.
    """
    mu = mu if isinstance(mu, EmpiricalMeasure) else EmpiricalMeasure(mu)
    cfg = replace(AttackConfig(delta=float(delta), ns=ns), **settings)
    if delta == 0:
        val = risk(model, mu, ctrl)
        res = AttackResult(mu.points.copy(), val, 0.0, [val], val)
        return res if return_result else val
    if ns.p == math.inf:
        res = pga_attack_pointwise(model, mu, ctrl, cfg)
    else:
        res = pga_attack_wasserstein(model, mu, ctrl, cfg)
        if check_duality:
            gamma, dval = solve_dual(model, mu, ctrl, cfg, seeds=res.points)
            if res.value > dval + 1e-9 * max(1.0, abs(dval)):
                raise AssertionError(f"duality sandwich violated: attack {res.value} > dual {dval}")
            res.dual_value, res.gamma = dval, gamma
    return res if return_result else res.value
