"""Independent numerical oracles for the identities the sweeps rely on.

The costate identity is checked against a continuous-time reference computed
with a high-order ODE solver; this shows the first-order convergence in
``h``.  The other identities hold exactly for the discrete scheme and are
checked against finite differences of discrete quantities.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import quad, solve_ivp

from .adversary import robust_risk_oracle
from .model import ControlPath, Model, NormSpec, dual_norm
from .objectives import (
    EmpiricalMeasure,
    RegularizerSpec,
    evaluate,
    first_order_objective,
    input_hessian,
    loss_j,
    objective_value,
    sphere_directions,
)
from .propagation import (
    backward_alpha,
    backward_costate,
    batch_stats,
    direction_pair,
    forward_beta,
    forward_state,
)
from .trainer import train_first_order

__all__ = [
    "CheckReport",
    "FDPrecisionWarning",
    "Instance",
    "random_instance",
    "default_instances",
    "fd_input_gradient",
    "fd_input_hessian",
    "loglog_fit",
    "check_costate_identity",
    "check_alpha_hat_identity",
    "check_rho_identity",
    "expansion_order_estimate",
    "mc_curvature_convergence",
    "quadrature_curvature_mean",
    "control_gradient_check",
    "double_backprop_check",
    "run_suite",
]


class FDPrecisionWarning(UserWarning):
    """Finite-difference step is too small relative to the function's roundoff."""


@dataclass
class CheckReport:
    """Outcome of one check.  ``passed`` is ``rel_error <= tolerance``.

    Composite checks (several criteria at once) report the largest criterion
    violation scaled by its own threshold, with ``tolerance = 1``.
    """

    name: str
    max_abs_error: float
    rel_error: float
    tolerance: float
    passed: bool = field(init=False)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.passed = bool(self.rel_error <= self.tolerance)

    def as_record(self):
        return {
            "name": self.name,
            "max_abs_error": self.max_abs_error,
            "rel_error": self.rel_error,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "metadata": self.metadata,
        }


# ---------------------------------------------------------------------------
# Instances


@dataclass
class Instance:
    """A model with a control that is piecewise constant on ``M`` equal pieces of ``[0, T]``.

    ``pieces[m]`` is the layer block on piece ``m``; :meth:`ctrl_at` discretises
    it for a step ``h`` that divides the piece length.
    """

    model: Model
    pieces: np.ndarray
    terminal: np.ndarray
    points: np.ndarray
    T: float = 1.0
    label: str = ""

    def ctrl_at(self, h):
        M = len(self.pieces)
        per = self.T / M / h
        n_per = int(round(per))
        if n_per < 1 or abs(per - n_per) > 1e-9 * per:
            raise ValueError(f"h={h} does not divide the piece length {self.T / M}")
        layers = np.repeat(self.pieces, n_per, axis=0)
        return ControlPath(layers, self.terminal, h)

    def measure(self):
        return EmpiricalMeasure(self.points)


def random_instance(seed, family="tanh_resnet", loss="quadratic_to_target", d=3, n_points=3,
                    pieces=4, scale=0.8, T=1.0):
    """Random instance; layer weights are drawn with fan-in scaling ``scale / sqrt(d)``."""
    rng = np.random.default_rng(seed)
    model = Model.build(family, loss, d)
    th = rng.normal(scale=scale / math.sqrt(d), size=(pieces, model.dynamics.n_params))
    term = rng.normal(scale=1.0, size=model.loss.n_params)
    pts = rng.normal(size=(n_points, d))
    return Instance(model, th, term, pts, T, f"{family}/{loss}/d={d}/seed={seed}")


_SMOOTH = [
    ("tanh_resnet", "quadratic_to_target"),
    ("tanh_resnet", "logistic_margin"),
    ("regression_frozen_label", "squared_regression"),
    ("tanh_resnet", "squared_regression"),
]


def default_instances(n=50, seed=0, d_choices=(2, 3, 4), n_points=3):
    """``n`` smooth random instances cycling through families, losses and dimensions."""
    out = []
    for i in range(n):
        fam, loss = _SMOOTH[i % len(_SMOOTH)]
        d = d_choices[(i // len(_SMOOTH)) % len(d_choices)]
        out.append(random_instance(seed * 100003 + i, fam, loss, d, n_points))
    return out


# ---------------------------------------------------------------------------
# Finite differences


def _single(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("expected a single input vector")
    return x


def fd_input_gradient(model, ctrl, x, eps=1e-4, richardson=False):
    """Central-difference gradient of ``loss_j`` at one input.

    Warns with :class:`FDPrecisionWarning` when the roundoff estimate exceeds
    the gradient; ``richardson`` combines steps ``eps`` and ``eps/2``.
    """
    x = _single(x)
    d = len(x)
    E = np.eye(d) * eps

    def central(step):
        vals = loss_j(model, ctrl, np.concatenate([x + step * E / eps, x - step * E / eps]))
        return (vals[:d] - vals[d:]) / (2 * step), vals

    g, vals = central(eps)
    if richardson:
        g = (4.0 * central(eps / 2)[0] - g) / 3.0
    noise = 4.0 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(vals)))) / eps
    if noise > np.linalg.norm(g):
        warnings.warn(f"finite-difference noise {noise:.2e} exceeds the gradient estimate", FDPrecisionWarning)
    return g


def fd_input_hessian(model, ctrl, x, eps=1e-3):
    """Central-difference Hessian of ``loss_j`` at one input, symmetrised."""
    x = _single(x)
    d = len(x)
    E = np.eye(d) * eps
    pts = []
    for i in range(d):
        for j in range(d):
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                pts.append(x + si * E[i] + sj * E[j])
    v = loss_j(model, ctrl, np.array(pts)).reshape(d, d, 4)
    H = (v[..., 0] - v[..., 1] - v[..., 2] + v[..., 3]) / (4 * eps * eps)
    return 0.5 * (H + H.T)


def loglog_fit(xs, ys):
    """Least-squares slope and R^2 of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    ss = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    return float(coef[0]), r2


# ---------------------------------------------------------------------------
# Costate identity


def _continuous_j(inst, pts, rtol=1e-12, atol=1e-12):
    """Terminal loss of the exact flow (piecewise-constant control) for a batch of inputs."""
    model = inst.model
    dyn = model.dynamics
    if model.running.state_dependent:
        raise ValueError("continuous reference supports state-independent running costs only")
    B, d = pts.shape
    y = pts.ravel().copy()
    M = len(inst.pieces)
    for m in range(M):
        th = inst.pieces[m]
        sol = solve_ivp(
            lambda t, z: dyn.f(z.reshape(B, d), th).ravel(),
            (0.0, inst.T / M), y, method="DOP853", rtol=rtol, atol=atol,
        )
        y = sol.y[:, -1]
    XT = y.reshape(B, d)
    out = model.loss.value(XT, inst.terminal)
    if model.running.active:
        out = out + inst.T / M * sum(model.running.value(XT, th) for th in inst.pieces)
    return out


def continuous_input_gradient(inst, x, eps=1e-5):
    """Finite-difference gradient of the continuous-time loss at one input."""
    d = len(x)
    E = np.eye(d) * eps
    vals = _continuous_j(inst, np.concatenate([x + E, x - E]))
    return (vals[:d] - vals[d:]) / (2 * eps)


def check_costate_identity(instances=None, hs=(1e-2, 5e-3, 2e-3, 1e-3), eps=1e-5, tol=1e-3,
                           slope_range=(0.8, 1.2)):
    """Compare ``-P_0`` with the gradient of the continuous-time loss under step refinement.

    Passes when the relative error at the finest ``h`` is at most ``tol`` and
    every instance's error decays with log-log slope inside ``slope_range``.
    Instances whose error is at roundoff level (e.g. zero dynamics) are exact
    and excluded from the slope fit.
    """
    instances = default_instances() if instances is None else instances
    hs = sorted(hs, reverse=True)
    finest, slopes, worst_abs = [], [], 0.0
    per_instance = []
    for inst in instances:
        refs = np.array([continuous_input_gradient(inst, x, eps) for x in inst.points])
        errs, abs_errs = [], []
        for h in hs:
            ctrl = inst.ctrl_at(h)
            P0 = backward_costate(inst.model, ctrl, forward_state(inst.model, ctrl, inst.points))[0]
            diff = np.linalg.norm(-P0 - refs, axis=1)
            scale = np.maximum(np.linalg.norm(refs, axis=1), 1e-300)
            errs.append(float(np.max(diff / scale)))
            abs_errs.append(float(np.max(diff)))
        worst_abs = max(worst_abs, abs_errs[-1])
        finest.append(errs[-1])
        if max(errs) < 1e-9:
            per_instance.append({"label": inst.label, "errors": errs, "slope": None})
            continue
        s, _ = loglog_fit(hs, errs)
        slopes.append(s)
        per_instance.append({"label": inst.label, "errors": errs, "slope": s})
    worst_rel = max(finest)
    lo, hi = slope_range
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    slope_violation = max((abs(s - mid) / half for s in slopes), default=0.0)
    score = max(worst_rel / tol, slope_violation)
    return CheckReport(
        "costate_identity", worst_abs, score, 1.0,
        metadata={
            "h": list(hs), "eps": eps, "rel_error_finest_h": worst_rel, "tol": tol,
            "slopes": slopes, "slope_range": list(slope_range), "instances": per_instance,
        },
    )


# ---------------------------------------------------------------------------
# Second adjoint and direction pair identities


def _norm_power_fd(model, ctrl, x, ns, eps):
    d = len(x)
    E = np.eye(d) * eps
    pts = np.concatenate([x + E, x - E])
    P0 = backward_costate(model, ctrl, forward_state(model, ctrl, pts))[0]
    v = dual_norm(P0, ns) ** ns.q
    return (v[:d] - v[d:]) / (2 * eps)


def check_alpha_hat_identity(instances=None, norms=None, delta=0.1, h=0.05, eps_g=1e-5, eps_h=1e-3, tol=1e-3):
    """FD checks of ``grad_x |P_0|^q = -q kappa alpha_hat_0`` and
    ``|grad j|^(q-2) D2j grad j = -kappa alpha_hat_0`` (euclidean ground norm).

    The batch moment entering ``kappa`` and ``beta_0`` is held fixed, as it is
    a batch constant.
    """
    instances = default_instances() if instances is None else instances
    norms = [NormSpec(2), NormSpec(4), NormSpec(math.inf)] if norms is None else norms
    worst_rel, worst_abs = 0.0, 0.0
    for inst in instances:
        ctrl = inst.ctrl_at(h)
        model = inst.model
        X = forward_state(model, ctrl, inst.points)
        P = backward_costate(model, ctrl, X)
        hessians = [fd_input_hessian(model, ctrl, x, eps_h) for x in inst.points]
        for ns in norms:
            stats = batch_stats(P[0], ns, delta)
            beta = forward_beta(model, ctrl, X, P[0], ns, delta, stats=stats)
            ah0 = backward_alpha(model, ctrl, X, P, beta)[1][0]
            if delta == 0:
                # kappa is infinite and both sides reduce to alpha_hat = 0
                err = float(np.max(np.abs(ah0)))
                worst_abs = max(worst_abs, err)
                worst_rel = max(worst_rel, err)
                continue
            for i, x in enumerate(inst.points):
                lhs = _norm_power_fd(model, ctrl, x, ns, eps_g)
                rhs = -ns.q * stats.kappa * ah0[i]
                g = fd_input_gradient(model, ctrl, x, eps_g)
                ng = np.linalg.norm(g)
                lhs2 = ng ** (ns.q - 2.0) * hessians[i] @ g
                rhs2 = -stats.kappa * ah0[i]
                for a, b in ((lhs, rhs), (lhs2, rhs2)):
                    err = float(np.linalg.norm(a - b))
                    worst_abs = max(worst_abs, err)
                    worst_rel = max(worst_rel, err / max(np.linalg.norm(a), 1e-12))
    return CheckReport("alpha_hat_identity", worst_abs, worst_rel, tol,
                       metadata={"h": h, "eps_grad": eps_g, "eps_hess": eps_h, "delta": delta,
                                 "norms": [(n.p, n.ground_norm) for n in norms], "n_instances": len(instances)})


def check_rho_identity(instances=None, h=0.05, eps_g=1e-5, eps_h=1e-3, tol=1e-3, seed=0):
    """FD checks of ``grad_x(P_0 . z) = -rho_0`` and of ``rho_0 . z`` against ``z^T D2j z``.

    ``metadata["orientation"]`` is the sign relating ``rho_0 . z`` to the
    curvature; it must be the same (+1) on every instance.
    """
    instances = default_instances() if instances is None else instances
    rng = np.random.default_rng(seed)
    worst_rel, worst_abs = 0.0, 0.0
    signs = set()
    for inst in instances:
        ctrl = inst.ctrl_at(h)
        model = inst.model
        X = forward_state(model, ctrl, inst.points)
        P = backward_costate(model, ctrl, X)
        d = model.d
        for i, x in enumerate(inst.points):
            z = rng.standard_normal(d)
            z /= np.linalg.norm(z)
            rho0 = direction_pair(model, ctrl, X[:, i : i + 1], P[:, i : i + 1], z)[1][0, 0]
            E = np.eye(d) * eps_g
            Pp = backward_costate(model, ctrl, forward_state(model, ctrl, np.concatenate([x + E, x - E])))[0]
            fd = (Pp[:d] @ z - Pp[d:] @ z) / (2 * eps_g)
            err = float(np.linalg.norm(fd + rho0))
            worst_abs = max(worst_abs, err)
            worst_rel = max(worst_rel, err / max(np.linalg.norm(fd), 1e-12))
            curv = float(z @ fd_input_hessian(model, ctrl, x, eps_h) @ z)
            q = float(rho0 @ z)
            if abs(curv) > 1e-6:
                signs.add(int(np.sign(q / curv)))
            err2 = abs(q - curv)
            worst_abs = max(worst_abs, err2)
            worst_rel = max(worst_rel, err2 / max(abs(curv), 1e-3))
    orientation = signs.pop() if len(signs) == 1 else 0
    rel = worst_rel if orientation == 1 else math.inf
    return CheckReport("rho_identity", worst_abs, rel, tol,
                       metadata={"h": h, "orientation": orientation, "n_instances": len(instances)})


# ---------------------------------------------------------------------------
# Expansion order and Monte-Carlo curvature


def expansion_order_estimate(model, mu, ctrl, ns, delta_grid, min_slope=1.9, min_r2=0.98,
                             floor=1e-13, **oracle_settings):
    """Fit the order of ``|oracle(delta) - first_order_objective(delta)|`` in ``delta``.

    Returns ``(slope, report)``.  When every residual sits at the roundoff
    floor (first-order objective exact), the slope test is skipped and the
    report says so.
    """
    delta_grid = np.asarray(delta_grid, dtype=float)
    if delta_grid.size < 3:
        raise ValueError("need at least 3 radii for a slope fit")
    mu = mu if isinstance(mu, EmpiricalMeasure) else EmpiricalMeasure(mu)
    gaps = []
    for dl in delta_grid:
        o = robust_risk_oracle(model, mu, ctrl, dl, ns, **oracle_settings)
        f = first_order_objective(model, mu, ctrl, dl, ns)
        gaps.append(abs(o - f))
    gaps = np.array(gaps)
    scale = max(1.0, abs(first_order_objective(model, mu, ctrl, 0.0, ns)))
    meta = {"deltas": delta_grid.tolist(), "gaps": gaps.tolist(), "p": ns.p, "ground_norm": ns.ground_norm}
    if np.all(gaps <= floor * scale):
        meta["skipped"] = "residuals at roundoff floor; first-order expansion is exact"
        return math.nan, CheckReport("expansion_order", float(gaps.max()), 0.0, 1.0, metadata=meta)
    slope, r2 = loglog_fit(delta_grid, np.maximum(gaps, 1e-300))
    meta.update(slope=slope, r2=r2, min_slope=min_slope, min_r2=min_r2)
    score = max(max(0.0, min_slope - slope) / 0.1, max(0.0, min_r2 - r2) / 0.02)
    return slope, CheckReport("expansion_order", float(gaps.max()), score, 1e-12, metadata=meta)


def quadrature_curvature_mean(A):
    """``(1/2pi) int_0^{2pi} (z^T A z)_+ dt`` with ``z = (cos t, sin t)``, for a symmetric 2x2 ``A``.

    The integrand is written in the eigenbasis of ``A`` (the integral is
    rotation invariant) and the sign changes are passed to the integrator.
    """
    l1, l2 = np.linalg.eigvalsh(0.5 * (np.asarray(A, float) + np.asarray(A, float).T))
    f = lambda t: max(l1 * math.cos(t) ** 2 + l2 * math.sin(t) ** 2, 0.0)
    points = None
    if l1 < 0.0 < l2:
        t0 = math.atan(math.sqrt(-l1 / l2))
        points = sorted({t0, math.pi - t0, math.pi + t0, 2 * math.pi - t0})
    val, _ = quad(f, 0.0, 2 * math.pi, points=points, limit=200, epsabs=1e-13, epsrel=1e-12)
    return val / (2 * math.pi)


def _mc_estimates(model, ctrl, x, m, seeds, chunk=64):
    """The Monte-Carlo curvature estimator at one input for each seed."""
    X1 = forward_state(model, ctrl, x[None])
    P1 = backward_costate(model, ctrl, X1)
    d = model.d
    out = np.empty(len(seeds))
    for s0 in range(0, len(seeds), chunk):
        group = seeds[s0 : s0 + chunk]
        Z = np.concatenate([sphere_directions(d, m, s) for s in group])
        X = np.repeat(X1, len(Z), axis=1)
        P = np.repeat(P1, len(Z), axis=1)
        rho0 = direction_pair(model, ctrl, X, P, Z)[1][0]
        q = np.maximum(np.sum(rho0 * Z, axis=1), 0.0)
        out[s0 : s0 + len(group)] = q.reshape(len(group), m).mean(axis=1)
    return out


def mc_curvature_convergence(model, ctrl, x, m_grid=(8, 32, 128, 512), seeds=4000, slope_target=-0.5,
                             slope_tol=0.1, mean_tol=1e-3):
    """Across-seed spread of the MC curvature estimator versus ``m``, plus a quadrature check at d = 2.

    If the estimator vanishes identically (no positive curvature), the slope is
    undefined and only the zero mean is checked.
    """
    x = _single(x)
    seed_list = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    stds, means = [], []
    for m in m_grid:
        est = _mc_estimates(model, ctrl, x, m, seed_list)
        stds.append(float(np.std(est, ddof=1)))
        means.append(float(np.mean(est)))
    meta = {"m_grid": list(m_grid), "stds": stds, "means": means, "n_seeds": len(seed_list)}
    violations = []
    if max(stds) == 0.0:
        meta["slope"] = None
    else:
        slope, r2 = loglog_fit(m_grid, stds)
        meta.update(slope=slope, r2=r2)
        violations.append(abs(slope - slope_target) / slope_tol)
    abs_err = 0.0
    if model.d == 2:
        H = input_hessian(model, ctrl, x[None])[0]
        ref = quadrature_curvature_mean(H)
        abs_err = abs(means[-1] - ref)
        meta.update(reference=ref, mean_abs_error=abs_err, mean_tol=mean_tol)
        violations.append(abs_err / mean_tol)
    return CheckReport("mc_curvature_convergence", abs_err, max(violations, default=0.0), 1.0, metadata=meta)


# ---------------------------------------------------------------------------
# Control gradients and training


def _fd_control_gradient(fun, ctrl, eps):
    base = ctrl.flat()
    g = np.zeros_like(base)
    for i in range(base.size):
        e = np.zeros_like(base)
        e[i] = eps
        g[i] = (fun(ctrl.with_flat(base + e)) - fun(ctrl.with_flat(base - e))) / (2 * eps)
    return ctrl.with_flat(g)


def control_gradient_check(model, mu, ctrl, reg, ns, eps=1e-6, tol=1e-3):
    """Adjoint control gradient of ``reg``'s objective versus central differences in every block."""
    mu = mu if isinstance(mu, EmpiricalMeasure) else EmpiricalMeasure(mu)
    ev = evaluate(model, ctrl, mu.points, mu.weights, reg, ns)
    fd = _fd_control_gradient(lambda c: objective_value(model, mu, c, reg, ns), ctrl, eps)
    a, b = ev.grad.flat(), fd.flat()
    err = float(np.linalg.norm(a - b))
    nb = float(np.linalg.norm(b))
    rel = err / nb if nb > 0 else err
    return CheckReport(f"control_gradient[{reg.variant}]", err, rel, tol,
                       metadata={"eps": eps, "delta": reg.delta, "p": ns.p, "ground_norm": ns.ground_norm,
                                 "N": ctrl.n_layers, "d": model.d})


def double_backprop_check(model, mu, cfg, steps=50, eps=1e-6, tol=1e-3, init=None):
    """Compare first-order training iterates with gradient descent on FD gradients of the same objective.

    Uses full-batch steps so both runs see the same objective; the FD step
    applies the same metric (layer blocks divided by ``h``).
    """
    mu = mu if isinstance(mu, EmpiricalMeasure) else EmpiricalMeasure(mu)
    cfg = replace(cfg, batch_size=len(mu), epochs=steps, max_steps=0, convergence_tol=0.0)
    cur = ControlPath.zeros(model, cfg.N, cfg.h) if init is None else init.copy()
    fd_ctrl = cur.copy()
    iterates = []
    worst, worst_abs = 0.0, 0.0
    obj = lambda c: first_order_objective(model, mu, c, cfg.reg.delta, cfg.ns)
    # one epoch is one full-batch step, so the runs are compared step by step
    step_cfg = replace(cfg, epochs=1)
    for _ in range(steps):
        cur = train_first_order(model, mu, step_cfg, init=cur).ctrl
        g = _fd_control_gradient(obj, fd_ctrl, eps)
        fd_ctrl = ControlPath(fd_ctrl.layers - cfg.lr * g.layers / cfg.h, fd_ctrl.terminal - cfg.lr * g.terminal, cfg.h)
        diff = float(np.linalg.norm(cur.flat() - fd_ctrl.flat()))
        rel = diff / max(float(np.linalg.norm(fd_ctrl.flat())), 1e-12)
        iterates.append(rel)
        worst = max(worst, rel)
        worst_abs = max(worst_abs, diff)
    return CheckReport("double_backprop", worst_abs, worst, tol,
                       metadata={"steps": steps, "per_step_rel": iterates, "eps": eps, "lr": cfg.lr})


# ---------------------------------------------------------------------------
# Suite


def run_suite(quick=False, seed=0):
    """Default verification suite; ``quick`` shrinks instance counts for smoke runs."""
    n = 8 if quick else 50
    insts = default_instances(n, seed=seed)
    reports = [
        check_costate_identity(insts[: max(4, n // 5)] if quick else insts),
        check_alpha_hat_identity(insts),
        check_rho_identity(insts, seed=seed),
    ]
    inst = random_instance(seed + 7, "tanh_resnet", "logistic_margin", d=3, n_points=8)
    ctrl = inst.ctrl_at(0.25)
    deltas = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1]
    for ns in (NormSpec(2), NormSpec(4), NormSpec(math.inf), NormSpec(math.inf, "max_abs")):
        reports.append(expansion_order_estimate(inst.model, inst.measure(), ctrl, ns, deltas,
                                                restarts=2 if quick else 8)[1])
    for reg, ns in (
        (RegularizerSpec("clean"), NormSpec()),
        (RegularizerSpec("first_order", 0.1), NormSpec(math.inf)),
        (RegularizerSpec("first_order", 0.1), NormSpec(4)),
        (RegularizerSpec("second_order_v1", 0.1), NormSpec(math.inf)),
    ):
        reports.append(control_gradient_check(inst.model, inst.measure(), ctrl, reg, ns))
    i2 = random_instance(seed + 11, "tanh_resnet", "quadratic_to_target", d=2, n_points=1)
    reports.append(mc_curvature_convergence(i2.model, i2.ctrl_at(0.25), i2.points[0],
                                            seeds=500 if quick else 4000))
    return reports
