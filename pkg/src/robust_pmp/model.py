"""Network dynamics, losses, running costs and norm machinery.

Every state-dependent function works on a batch of states ``xi`` of shape
``(B, d)`` and a single flat parameter block ``th``.  Derivative tensors
follow the convention "output indices first, differentiation indices last":
``D_xi f`` has shape ``(B, d, d)`` with ``[b, i, j] = df_i / dxi_j``.

Two derivative surfaces are provided.  :func:`d_f` and :func:`d_loss` return
dense tensors.  The propagation sweeps instead call the contraction methods
(``vjp``, ``hess_contract`` ...), which never build the dense tensors; the test
suite checks one surface against the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapabilityError, ShapeError

INF = math.inf

__all__ = [
    "NormSpec",
    "conjugate_exponents",
    "dual_norm",
    "ground_norm",
    "dual_norm_subgradient",
    "power_mean",
    "Dynamics",
    "make_dynamics",
    "TerminalLoss",
    "make_loss",
    "RunningCost",
    "Model",
    "ControlPath",
    "eval_f",
    "d_f",
    "eval_loss",
    "d_loss",
]


# ---------------------------------------------------------------------------
# Norms and exponents


def _conjugate(r):
    if r == INF:
        return 1.0
    if r == 1.0:
        return INF
    return r / (r - 1.0)


def conjugate_exponents(p):
    """Return ``(q, q_tilde)`` with ``1/p + 1/q = 1`` and ``2/p + 1/q_tilde = 1``.

    >>> conjugate_exponents(4)
    (1.3333333333333333, 2.0)
    """
    p = float(p)
    if not p >= 2.0:
        raise ValueError(f"adversary exponent must lie in [2, inf], got {p}")
    q = _conjugate(p)
    q_tilde = INF if p == 2.0 else _conjugate(p / 2.0)
    return q, q_tilde


@dataclass(frozen=True)
class NormSpec:
    """Adversary exponent ``p`` and the ground norm on R^d."""

    p: float = INF
    ground_norm: str = "euclidean"

    def __post_init__(self):
        object.__setattr__(self, "p", float(self.p))
        if self.ground_norm not in ("euclidean", "max_abs"):
            raise ValueError(f"unknown ground norm {self.ground_norm!r}")
        conjugate_exponents(self.p)

    @property
    def q(self):
        return conjugate_exponents(self.p)[0]

    @property
    def q_tilde(self):
        return conjugate_exponents(self.p)[1]

    @property
    def euclidean(self):
        return self.ground_norm == "euclidean"


def _l2(v, keepdims=False):
    # scale by the largest entry so tiny or huge components neither underflow nor overflow
    top = np.max(np.abs(v), axis=-1, keepdims=True)
    safe = np.where(top > 0, top, 1.0)
    out = top * np.sqrt(np.sum((v / safe) ** 2, axis=-1, keepdims=True))
    return out if keepdims else out[..., 0]


def ground_norm(w, ns):
    """Norm used by the transport cost, over the last axis."""
    w = np.asarray(w, dtype=float)
    if ns.ground_norm == "euclidean":
        return _l2(w)
    return np.max(np.abs(w), axis=-1)


def dual_norm(v, ns):
    """Dual of the ground norm over the last axis (l2 for l2, l1 for l-inf)."""
    v = np.asarray(v, dtype=float)
    if ns.ground_norm == "euclidean":
        return _l2(v)
    return np.sum(np.abs(v), axis=-1)


def dual_norm_subgradient(v, ns):
    """A subgradient of :func:`dual_norm`; it has unit ground norm unless ``v = 0``.

    Uses the convention 0/0 = 0, so the zero vector maps to zero.
    """
    v = np.asarray(v, dtype=float)
    if ns.ground_norm == "max_abs":
        return np.sign(v)
    nrm = _l2(v, keepdims=True)
    safe = np.where(nrm > 0.0, nrm, 1.0)
    return np.where(nrm > 0.0, v / safe, 0.0)


def power_mean(a, weights, r):
    """``(sum_i w_i a_i^r)^(1/r)`` for nonnegative ``a``; ``r = inf`` gives the max.

    The largest entry is factored out first so large ``r`` cannot overflow.
    """
    a = np.asarray(a, dtype=float)
    w = np.asarray(weights, dtype=float)
    support = w > 0
    if not np.any(support):
        raise ValueError("weights have empty support")
    top = float(np.max(a[support]))
    if r == INF:
        return top
    if top == 0.0:
        return 0.0
    return top * float(np.sum(w * (a / top) ** r)) ** (1.0 / r)


# ---------------------------------------------------------------------------
# Dynamics


class Dynamics:
    """Base class: per-layer vector field ``f(xi, th)`` and its derivatives.

    Subclasses must implement :meth:`f`.  Derivative methods raise
    :class:`CapabilityError` unless overridden.
    """

    family = "abstract"
    n_params = 0
    #: highest xi-derivative order with a (possibly relaxed) oracle
    max_order = 0

    def __init__(self, d):
        if int(d) < 1:
            raise ValueError("state dimension must be positive")
        self.d = int(d)

    def check(self, xi, th):
        xi = np.asarray(xi, dtype=float)
        th = np.asarray(th, dtype=float)
        if xi.ndim != 2 or xi.shape[1] != self.d:
            raise ShapeError(f"expected states of shape (B, {self.d}), got {xi.shape}")
        if th.shape != (self.n_params,):
            raise ShapeError(f"expected parameter block of size {self.n_params}, got {th.shape}")
        return xi, th

    def _unsupported(self, what):
        raise CapabilityError(f"{self.family} does not provide {what}")

    def f(self, xi, th):
        self._unsupported("f")

    # dense tensors
    def jac(self, xi, th):
        self._unsupported("D_xi f")

    def hess(self, xi, th):
        self._unsupported("D2_xi f")

    def d3(self, xi, th):
        self._unsupported("D3_xi f")

    def dtheta(self, xi, th):
        self._unsupported("D_theta f")

    def dtheta_xi(self, xi, th):
        self._unsupported("D_theta,xi f")

    def dtheta_xixi(self, xi, th):
        self._unsupported("D_theta,xi,xi f")

    # contractions; defaults go through the dense tensors
    def jvp(self, xi, th, v):
        return np.einsum("nij,nj->ni", self.jac(xi, th), v)

    def vjp(self, xi, th, a):
        return np.einsum("nij,ni->nj", self.jac(xi, th), a)

    def hess_contract(self, xi, th, a, b):
        """``sum_ij a_i b_j d2f_i/dxi_j dxi_l``, indexed by ``l``."""
        return np.einsum("nijl,ni,nj->nl", self.hess(xi, th), a, b)

    def hess_contract_out(self, xi, th, b, c):
        """``sum_jl b_j c_l d2f_i/dxi_j dxi_l``, indexed by ``i``."""
        return np.einsum("nijl,nj,nl->ni", self.hess(xi, th), b, c)

    def d3_contract(self, xi, th, a, b, c):
        return np.einsum("nijlm,ni,nj,nl->nm", self.d3(xi, th), a, b, c)

    def theta_vjp(self, xi, th, a):
        return np.einsum("nip,ni->np", self.dtheta(xi, th), a)

    def theta_jac_contract(self, xi, th, a, b):
        return np.einsum("nijp,ni,nj->np", self.dtheta_xi(xi, th), a, b)

    def theta_hess_contract(self, xi, th, a, b, c):
        return np.einsum("nijlp,ni,nj,nl->np", self.dtheta_xixi(xi, th), a, b, c)

    def __repr__(self):
        return f"{type(self).__name__}(d={self.d})"


def _tanh_derivs(z):
    s = np.tanh(z)
    s1 = 1.0 - s * s
    s2 = -2.0 * s * s1
    s3 = -2.0 * s1 * (s1 - 2.0 * s * s)
    return s, s1, s2, s3


def _relu_derivs(z):
    # relaxed derivative: indicator of z > 0, tie at 0 gives 0; higher orders vanish
    s1 = (z > 0.0).astype(float)
    zero = np.zeros_like(z)
    return np.maximum(z, 0.0), s1, zero, zero


def _identity_derivs(z):
    one = np.ones_like(z)
    zero = np.zeros_like(z)
    return z, one, zero, zero


class ActivationResNet(Dynamics):
    """``f(xi) = mask * sigma(W xi + b)`` with elementwise ``sigma``.

    The parameter block is a selection of the entries of ``(W, b)``; the
    remaining entries are held at zero.  ``mask`` zeroes output coordinates.
    """

    max_order = 3

    def __init__(self, d, activation, family, mask=None, param_index=None):
        super().__init__(d)
        self.family = family
        self._act = {"tanh": _tanh_derivs, "relu": _relu_derivs, "identity": _identity_derivs}[activation]
        self.activation = activation
        self.mask = np.ones(d) if mask is None else np.asarray(mask, dtype=float)
        n_full = d * d + d
        self._index = np.arange(n_full) if param_index is None else np.asarray(param_index)
        self.n_params = len(self._index)

    def unpack(self, th):
        full = np.zeros(self.d * self.d + self.d)
        full[self._index] = th
        return full[: self.d * self.d].reshape(self.d, self.d), full[self.d * self.d :]

    def _reduce(self, w_part, b_part):
        # w_part [..., d, d], b_part [..., d] over the full (W, b) layout
        lead = w_part.shape[:-2]
        full = np.concatenate([w_part.reshape(lead + (self.d * self.d,)), b_part], axis=-1)
        return full[..., self._index]

    def _pre(self, xi, th):
        xi, th = self.check(xi, th)
        W, b = self.unpack(th)
        z = xi @ W.T + b
        s, s1, s2, s3 = self._act(z)
        m = self.mask
        return xi, W, m * s, m * s1, m * s2, m * s3

    def f(self, xi, th):
        return self._pre(xi, th)[2]

    # dense
    def jac(self, xi, th):
        _, W, _, s1, _, _ = self._pre(xi, th)
        return s1[:, :, None] * W[None]

    def hess(self, xi, th):
        _, W, _, _, s2, _ = self._pre(xi, th)
        return np.einsum("ni,ij,ik->nijk", s2, W, W)

    def d3(self, xi, th):
        _, W, _, _, _, s3 = self._pre(xi, th)
        return np.einsum("ni,ij,ik,il->nijkl", s3, W, W, W)

    def dtheta(self, xi, th):
        xi, W, _, s1, _, _ = self._pre(xi, th)
        eye = np.eye(self.d)
        w_part = np.einsum("ia,ni,nb->niab", eye, s1, xi)
        b_part = np.einsum("ia,ni->nia", eye, s1)
        return self._reduce(w_part, b_part)

    def dtheta_xi(self, xi, th):
        xi, W, _, s1, s2, _ = self._pre(xi, th)
        eye = np.eye(self.d)
        w_part = np.einsum("ia,ni,nb,ij->nijab", eye, s2, xi, W) + np.einsum(
            "ia,ni,jb->nijab", eye, s1, eye
        )
        b_part = np.einsum("ia,ni,ij->nija", eye, s2, W)
        return self._reduce(w_part, b_part)

    def dtheta_xixi(self, xi, th):
        xi, W, _, _, s2, s3 = self._pre(xi, th)
        eye = np.eye(self.d)
        w_part = (
            np.einsum("ia,ni,nb,ij,ik->nijkab", eye, s3, xi, W, W)
            + np.einsum("ia,ni,jb,ik->nijkab", eye, s2, eye, W)
            + np.einsum("ia,ni,ij,kb->nijkab", eye, s2, W, eye)
        )
        b_part = np.einsum("ia,ni,ij,ik->nijka", eye, s3, W, W)
        return self._reduce(w_part, b_part)

    # contractions
    def jvp(self, xi, th, v):
        _, W, _, s1, _, _ = self._pre(xi, th)
        return s1 * (v @ W.T)

    def vjp(self, xi, th, a):
        _, W, _, s1, _, _ = self._pre(xi, th)
        return (s1 * a) @ W

    def hess_contract(self, xi, th, a, b):
        _, W, _, _, s2, _ = self._pre(xi, th)
        return (a * s2 * (b @ W.T)) @ W

    def hess_contract_out(self, xi, th, b, c):
        _, W, _, _, s2, _ = self._pre(xi, th)
        return s2 * (b @ W.T) * (c @ W.T)

    def d3_contract(self, xi, th, a, b, c):
        _, W, _, _, _, s3 = self._pre(xi, th)
        return (a * s3 * (b @ W.T) * (c @ W.T)) @ W

    def theta_vjp(self, xi, th, a):
        xi, _, _, s1, _, _ = self._pre(xi, th)
        g = a * s1
        return self._reduce(g[:, :, None] * xi[:, None, :], g)

    def theta_jac_contract(self, xi, th, a, b):
        xi, W, _, s1, s2, _ = self._pre(xi, th)
        g2 = a * s2 * (b @ W.T)
        g1 = a * s1
        w_part = g2[:, :, None] * xi[:, None, :] + g1[:, :, None] * b[:, None, :]
        return self._reduce(w_part, g2)

    def theta_hess_contract(self, xi, th, a, b, c):
        xi, W, _, _, s2, s3 = self._pre(xi, th)
        wb = b @ W.T
        wc = c @ W.T
        g3 = a * s3 * wb * wc
        w_part = (
            g3[:, :, None] * xi[:, None, :]
            + (a * s2 * wc)[:, :, None] * b[:, None, :]
            + (a * s2 * wb)[:, :, None] * c[:, None, :]
        )
        return self._reduce(w_part, g3)

    def __repr__(self):
        return f"ActivationResNet(family={self.family!r}, d={self.d})"


DYNAMICS_FAMILIES = ("tanh_resnet", "relu_resnet", "regression_frozen_label", "zero", "linear")


def make_dynamics(family, d):
    """Build a dynamics family.

    ``tanh_resnet`` / ``relu_resnet``: ``sigma(W xi + b)`` with full ``(W, b)``.
    ``regression_frozen_label``: ``(tanh(W v), 0)`` with ``v = xi[:d-1]``, no bias;
    the label coordinate is carried unchanged.
    ``zero``: ``f = 0`` (parameters exist but are inert).
    ``linear``: affine ``W xi + b``.
    """
    if family == "tanh_resnet":
        return ActivationResNet(d, "tanh", family)
    if family == "relu_resnet":
        return ActivationResNet(d, "relu", family)
    if family == "linear":
        return ActivationResNet(d, "identity", family)
    if family == "zero":
        return ActivationResNet(d, "identity", family, mask=np.zeros(d))
    if family == "regression_frozen_label":
        if d < 2:
            raise ValueError("regression_frozen_label needs d >= 2")
        k = d - 1
        index = [i * d + j for i in range(k) for j in range(k)]
        mask = np.ones(d)
        mask[-1] = 0.0
        return ActivationResNet(d, "tanh", family, mask=mask, param_index=index)
    raise ValueError(f"unknown dynamics family {family!r}")


# ---------------------------------------------------------------------------
# Terminal losses


class TerminalLoss:
    """Terminal cost ``l(xi, th_T)`` with dense derivatives in ``xi`` and ``th_T``.

    Methods take states ``(B, d)`` and return per-sample arrays:
    ``value (B,)``, ``grad (B, d)``, ``hess (B, d, d)``, ``d3 (B, d, d, d)``,
    ``grad_theta (B, n)``, ``dtheta_grad (B, d, n)``, ``dtheta_hess (B, d, d, n)``.
    """

    kind = "abstract"
    n_params = 0

    def __init__(self, d):
        self.d = int(d)

    def check(self, xi, th):
        xi = np.asarray(xi, dtype=float)
        th = np.asarray(th, dtype=float)
        if xi.ndim != 2 or xi.shape[1] != self.d:
            raise ShapeError(f"expected states of shape (B, {self.d}), got {xi.shape}")
        if th.shape != (self.n_params,):
            raise ShapeError(f"expected terminal parameters of size {self.n_params}, got {th.shape}")
        return xi, th

    def __repr__(self):
        return f"{type(self).__name__}(d={self.d})"


class SquaredRegression(TerminalLoss):
    """``(th . xi[:d-1] - xi[d-1])^2``: squared error with the label as last coordinate."""

    kind = "squared_regression"

    def __init__(self, d):
        super().__init__(d)
        if d < 2:
            raise ValueError("squared_regression needs d >= 2")
        self.n_params = d - 1

    def _a(self, th):
        return np.append(th, -1.0)

    def _residual(self, xi, th):
        return xi[:, :-1] @ th - xi[:, -1]

    def value(self, xi, th):
        xi, th = self.check(xi, th)
        return self._residual(xi, th) ** 2

    def grad(self, xi, th):
        xi, th = self.check(xi, th)
        return 2.0 * self._residual(xi, th)[:, None] * self._a(th)[None]

    def hess(self, xi, th):
        xi, th = self.check(xi, th)
        a = self._a(th)
        return np.broadcast_to(2.0 * np.outer(a, a), (len(xi), self.d, self.d)).copy()

    def d3(self, xi, th):
        xi, th = self.check(xi, th)
        return np.zeros((len(xi), self.d, self.d, self.d))

    def grad_theta(self, xi, th):
        xi, th = self.check(xi, th)
        return 2.0 * self._residual(xi, th)[:, None] * xi[:, :-1]

    def _da(self):
        # d a_i / d th_c
        e = np.zeros((self.d, self.n_params))
        e[: self.n_params] = np.eye(self.n_params)
        return e

    def dtheta_grad(self, xi, th):
        xi, th = self.check(xi, th)
        r = self._residual(xi, th)
        a = self._a(th)
        return 2.0 * (a[None, :, None] * xi[:, None, :-1] + r[:, None, None] * self._da()[None])

    def dtheta_hess(self, xi, th):
        xi, th = self.check(xi, th)
        a = self._a(th)
        e = self._da()
        t = 2.0 * (e[:, None, :] * a[None, :, None] + a[:, None, None] * e[None, :, :])
        return np.broadcast_to(t, (len(xi),) + t.shape).copy()


class QuadraticToTarget(TerminalLoss):
    """``0.5 * |xi - th|^2`` with a trainable target ``th``."""

    kind = "quadratic_to_target"

    def __init__(self, d):
        super().__init__(d)
        self.n_params = d

    def value(self, xi, th):
        xi, th = self.check(xi, th)
        return 0.5 * np.sum((xi - th) ** 2, axis=1)

    def grad(self, xi, th):
        xi, th = self.check(xi, th)
        return xi - th

    def hess(self, xi, th):
        xi, th = self.check(xi, th)
        return np.broadcast_to(np.eye(self.d), (len(xi), self.d, self.d)).copy()

    def d3(self, xi, th):
        xi, th = self.check(xi, th)
        return np.zeros((len(xi), self.d, self.d, self.d))

    def grad_theta(self, xi, th):
        xi, th = self.check(xi, th)
        return th - xi

    def dtheta_grad(self, xi, th):
        xi, th = self.check(xi, th)
        return np.broadcast_to(-np.eye(self.d), (len(xi), self.d, self.d)).copy()

    def dtheta_hess(self, xi, th):
        xi, th = self.check(xi, th)
        return np.zeros((len(xi), self.d, self.d, self.d))


def _sigmoid(m):
    return 0.5 * (1.0 + np.tanh(0.5 * m))


class LogisticMargin(TerminalLoss):
    """``log(1 + exp(-y (w . v + c)))`` with ``xi = (v, y)`` and ``th = (w, c)``."""

    kind = "logistic_margin"

    def __init__(self, d):
        super().__init__(d)
        if d < 2:
            raise ValueError("logistic_margin needs d >= 2")
        self.n_params = d

    def _parts(self, xi, th):
        w, c = th[:-1], th[-1]
        v, y = xi[:, :-1], xi[:, -1]
        score = v @ w + c
        m = y * score
        sp, sm = _sigmoid(m), _sigmoid(-m)
        g1 = -sm
        g2 = sp * sm
        g3 = g2 * (sm - sp)
        # dm/dxi
        m_x = np.concatenate([y[:, None] * w[None], score[:, None]], axis=1)
        # d2m/dxi2 (constant in xi)
        m_xx = np.zeros((self.d, self.d))
        m_xx[:-1, -1] = w
        m_xx[-1, :-1] = w
        # dm/dth
        m_t = np.concatenate([y[:, None] * v, y[:, None]], axis=1)
        # d2m/dxi dth
        n = self.n_params
        m_xt = np.zeros((len(xi), self.d, n))
        m_xt[:, : self.d - 1, : self.d - 1] = y[:, None, None] * np.eye(self.d - 1)[None]
        m_xt[:, -1, : self.d - 1] = v
        m_xt[:, -1, -1] = 1.0
        # d3m/dxi2 dth
        m_xxt = np.zeros((self.d, self.d, n))
        for c_ in range(self.d - 1):
            m_xxt[c_, -1, c_] = 1.0
            m_xxt[-1, c_, c_] = 1.0
        return m, g1, g2, g3, m_x, m_xx, m_t, m_xt, m_xxt

    def value(self, xi, th):
        xi, th = self.check(xi, th)
        m = self._parts(xi, th)[0]
        return np.logaddexp(0.0, -m)

    def grad(self, xi, th):
        xi, th = self.check(xi, th)
        _, g1, _, _, m_x, *_ = self._parts(xi, th)
        return g1[:, None] * m_x

    def hess(self, xi, th):
        xi, th = self.check(xi, th)
        _, g1, g2, _, m_x, m_xx, *_ = self._parts(xi, th)
        return g2[:, None, None] * m_x[:, :, None] * m_x[:, None, :] + g1[:, None, None] * m_xx[None]

    def d3(self, xi, th):
        xi, th = self.check(xi, th)
        _, _, g2, g3, m_x, m_xx, *_ = self._parts(xi, th)
        t = g3[:, None, None, None] * np.einsum("ni,nj,nk->nijk", m_x, m_x, m_x)
        sym = (
            np.einsum("ij,nk->nijk", m_xx, m_x)
            + np.einsum("ik,nj->nijk", m_xx, m_x)
            + np.einsum("jk,ni->nijk", m_xx, m_x)
        )
        return t + g2[:, None, None, None] * sym

    def grad_theta(self, xi, th):
        xi, th = self.check(xi, th)
        _, g1, _, _, _, _, m_t, _, _ = self._parts(xi, th)
        return g1[:, None] * m_t

    def dtheta_grad(self, xi, th):
        xi, th = self.check(xi, th)
        _, g1, g2, _, m_x, _, m_t, m_xt, _ = self._parts(xi, th)
        return g2[:, None, None] * m_x[:, :, None] * m_t[:, None, :] + g1[:, None, None] * m_xt

    def dtheta_hess(self, xi, th):
        xi, th = self.check(xi, th)
        _, g1, g2, g3, m_x, m_xx, m_t, m_xt, m_xxt = self._parts(xi, th)
        out = g3[:, None, None, None] * np.einsum("ni,nj,nc->nijc", m_x, m_x, m_t)
        out += g2[:, None, None, None] * (
            np.einsum("nic,nj->nijc", m_xt, m_x) + np.einsum("ni,njc->nijc", m_x, m_xt)
        )
        out += g2[:, None, None, None] * np.einsum("ij,nc->nijc", m_xx, m_t)
        out += g1[:, None, None, None] * m_xxt[None]
        return out


LOSS_KINDS = ("squared_regression", "quadratic_to_target", "logistic_margin")


def make_loss(kind, d):
    if kind == "squared_regression":
        return SquaredRegression(d)
    if kind == "quadratic_to_target":
        return QuadraticToTarget(d)
    if kind == "logistic_margin":
        return LogisticMargin(d)
    raise ValueError(f"unknown terminal loss {kind!r}")


# ---------------------------------------------------------------------------
# Running cost


class RunningCost:
    """Running cost ``Phi(xi, th)``.

    ``zero`` or ``ridge_on_params`` (``ridge * |th|^2``).  Subclasses may add
    state dependence by overriding the ``*_xi`` methods and setting
    ``state_dependent = True``.
    """

    state_dependent = False

    def __init__(self, kind="zero", ridge=0.0):
        if kind not in ("zero", "ridge_on_params"):
            raise ValueError(f"unknown running cost {kind!r}")
        self.kind = kind
        self.ridge = float(ridge) if kind == "ridge_on_params" else 0.0

    @property
    def active(self):
        return self.ridge != 0.0 or self.state_dependent

    def value(self, xi, th):
        return np.full(len(xi), self.ridge * float(np.dot(th, th)))

    def grad_xi(self, xi, th):
        return np.zeros_like(xi)

    def hess_xi(self, xi, th):
        return np.zeros(xi.shape + (xi.shape[1],))

    def grad_theta(self, xi, th):
        return np.broadcast_to(2.0 * self.ridge * th, (len(xi), len(th))).copy()

    def dtheta_xi(self, xi, th):
        return np.zeros(xi.shape + (len(th),))

    def __repr__(self):
        return f"RunningCost(kind={self.kind!r}, ridge={self.ridge})"


# ---------------------------------------------------------------------------
# Model and controls


@dataclass
class Model:
    """Dynamics, terminal loss and running cost acting on the same state space."""

    dynamics: Dynamics
    loss: TerminalLoss
    running: RunningCost = field(default_factory=RunningCost)

    def __post_init__(self):
        if self.dynamics.d != self.loss.d:
            raise ShapeError("dynamics and loss disagree on the state dimension")

    @classmethod
    def build(cls, family, loss, d, running="zero", ridge=0.0):
        return cls(make_dynamics(family, d), make_loss(loss, d), RunningCost(running, ridge))

    @property
    def d(self):
        return self.dynamics.d

    def describe(self):
        return {
            "family": self.dynamics.family,
            "loss": self.loss.kind,
            "running": self.running.kind,
            "ridge": self.running.ridge,
            "d": self.d,
        }


@dataclass
class ControlPath:
    """Per-layer parameter blocks ``layers[k]`` (k < N), terminal block, step ``h``."""

    layers: np.ndarray
    terminal: np.ndarray
    h: float

    def __post_init__(self):
        self.layers = np.array(self.layers, dtype=float)
        self.terminal = np.array(self.terminal, dtype=float).reshape(-1)
        if self.layers.ndim != 2 or self.layers.shape[0] < 1:
            raise ShapeError("layers must have shape (N, n_params) with N >= 1")
        if not self.h > 0:
            raise ValueError("step size h must be positive")
        self.h = float(self.h)

    @classmethod
    def zeros(cls, model, n_layers, h):
        return cls(np.zeros((n_layers, model.dynamics.n_params)), np.zeros(model.loss.n_params), h)

    @property
    def n_layers(self):
        return self.layers.shape[0]

    @property
    def depth(self):
        return self.n_layers * self.h

    def check(self, model):
        if self.layers.shape[1] != model.dynamics.n_params:
            raise ShapeError("layer blocks do not match the dynamics family")
        if self.terminal.shape != (model.loss.n_params,):
            raise ShapeError("terminal block does not match the loss")

    def copy(self):
        return ControlPath(self.layers.copy(), self.terminal.copy(), self.h)

    def flat(self):
        return np.concatenate([self.layers.ravel(), self.terminal])

    def with_flat(self, vec):
        n = self.layers.size
        return ControlPath(vec[:n].reshape(self.layers.shape), vec[n:], self.h)


# ---------------------------------------------------------------------------
# Functional surface


def _as_batch(xi):
    xi = np.asarray(xi, dtype=float)
    return (xi[None], True) if xi.ndim == 1 else (xi, False)


def eval_f(dyn, xi, th):
    """``f(xi, th)`` for one state ``(d,)`` or a batch ``(B, d)``."""
    xb, single = _as_batch(xi)
    out = dyn.f(xb, th)
    return out[0] if single else out


_F_KINDS = {
    "Dxi": "jac",
    "D2xi": "hess",
    "D3xi": "d3",
    "Dtheta": "dtheta",
    "Dtheta_xi": "dtheta_xi",
    "Dtheta_xixi": "dtheta_xixi",
}


def d_f(dyn, xi, th, kind):
    """Dense derivative tensor of ``f``; ``kind`` in Dxi, D2xi, D3xi, Dtheta, Dtheta_xi, Dtheta_xixi."""
    if kind not in _F_KINDS:
        raise ValueError(f"unknown derivative kind {kind!r}")
    xb, single = _as_batch(xi)
    out = getattr(dyn, _F_KINDS[kind])(xb, th)
    return out[0] if single else out


def eval_loss(loss, xi, th):
    xb, single = _as_batch(xi)
    out = loss.value(xb, th)
    return float(out[0]) if single else out


_L_KINDS = {
    "grad_xi": "grad",
    "D2xi": "hess",
    "D3xi": "d3",
    "grad_theta": "grad_theta",
    "Dtheta_xi": "dtheta_grad",
    "Dtheta_xixi": "dtheta_hess",
}


def d_loss(loss, xi, th, kind):
    """Dense derivative of the terminal loss; ``kind`` in grad_xi, D2xi, D3xi, grad_theta, Dtheta_xi, Dtheta_xixi."""
    if kind not in _L_KINDS:
        raise ValueError(f"unknown derivative kind {kind!r}")
    xb, single = _as_batch(xi)
    out = getattr(loss, _L_KINDS[kind])(xb, th)
    return out[0] if single else out
