import math

import numpy as np
import pytest

from robust_pmp.errors import CapabilityError, DegenerateGradientError, NumericOverflowError
from robust_pmp.model import ControlPath, Model, NormSpec, RunningCost
from robust_pmp.objectives import loss_j
from robust_pmp.propagation import (
    backward_alpha,
    backward_costate,
    batch_stats,
    direction_pair,
    directional_costate,
    directional_state,
    first_order_sweeps,
    forward_beta,
    forward_state,
    initial_beta,
    second_order_sweeps,
)

from conftest import central_diff, make_case, rel_err


class StateCost(RunningCost):
    """``c * |xi|^2 / 2`` plus ``xi . th[:d]`` - a running cost that depends on the state."""

    state_dependent = True

    def __init__(self, c, d):
        super().__init__("zero")
        self.c, self.d = c, d

    def value(self, xi, th):
        return 0.5 * self.c * np.sum(xi**2, axis=1) + xi @ th[: self.d]

    def grad_xi(self, xi, th):
        return self.c * xi + th[: self.d]

    def hess_xi(self, xi, th):
        return np.broadcast_to(self.c * np.eye(self.d), xi.shape + (self.d,)).copy()

    def grad_theta(self, xi, th):
        g = np.zeros((len(xi), len(th)))
        g[:, : self.d] = xi
        return g

    def dtheta_xi(self, xi, th):
        out = np.zeros(xi.shape + (len(th),))
        out[:, :, : self.d] = np.eye(self.d)
        return out


def linear_model(A, d):
    model = Model.build("linear", "quadratic_to_target", d)
    th = np.concatenate([np.asarray(A).ravel(), np.zeros(d)])
    return model, th


# --- forward state --------------------------------------------------------------


def test_zero_dynamics_constant_trajectory(rng):
    model, ctrl, _ = make_case("zero", "quadratic_to_target", 3)
    x = rng.normal(size=(4, 3))
    X = forward_state(model, ctrl, x)
    assert np.array_equal(X, np.broadcast_to(x, X.shape))


def test_one_layer_constant_field():
    # linear family with W = 0 gives f = b = c
    model = Model.build("linear", "quadratic_to_target", 2)
    c = np.array([0.5, -2.0])
    ctrl = ControlPath(np.concatenate([np.zeros(4), c])[None], np.zeros(2), 1.0)
    X = forward_state(model, ctrl, np.array([1.0, 1.0]))
    assert np.array_equal(X[1, 0], [1.5, -1.0])


def test_euler_refinement_is_first_order(rng):
    model = Model.build("tanh_resnet", "quadratic_to_target", 2)
    th = rng.normal(size=6)
    x = rng.normal(size=(1, 2))
    ref = forward_state(model, ControlPath(np.tile(th, (4096, 1)), np.zeros(2), 1 / 4096), x)[-1]
    errs = []
    hs = [1 / 16, 1 / 32, 1 / 64]
    for h in hs:
        N = int(round(1 / h))
        errs.append(np.linalg.norm(forward_state(model, ControlPath(np.tile(th, (N, 1)), np.zeros(2), h), x)[-1] - ref))
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert 0.9 < slope < 1.1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_overflow_detected():
    model = Model.build("linear", "quadratic_to_target", 1)
    ctrl = ControlPath(np.tile([1e200, 0.0], (10, 1)), np.zeros(1), 1.0)
    with pytest.raises(NumericOverflowError):
        forward_state(model, ctrl, np.array([1.0]))


# --- costate -----------------------------------------------------------------------


def test_zero_dynamics_costate_constant(rng):
    model, ctrl, _ = make_case("zero", "quadratic_to_target", 3)
    x = rng.normal(size=(2, 3))
    P = backward_costate(model, ctrl, forward_state(model, ctrl, x))
    expected = -(x - ctrl.terminal)
    assert np.allclose(P, np.broadcast_to(expected, P.shape), atol=0, rtol=0)


def test_linear_costate_matrix_product(rng):
    d, N, h = 3, 5, 0.2
    A = rng.normal(size=(d, d))
    model, th = linear_model(A, d)
    ctrl = ControlPath(np.tile(th, (N, 1)), rng.normal(size=d), h)
    x = rng.normal(size=(1, d))
    X = forward_state(model, ctrl, x)
    P = backward_costate(model, ctrl, X)
    M = np.linalg.matrix_power(np.eye(d) + h * A.T, N)
    assert np.allclose(P[0, 0], M @ (-(X[-1, 0] - ctrl.terminal)), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("family,loss", [("tanh_resnet", "logistic_margin"), ("regression_frozen_label", "squared_regression")])
def test_costate_is_exact_discrete_gradient(family, loss, rng):
    model, ctrl, _ = make_case(family, loss, 3)
    x = rng.normal(size=3)
    P0 = backward_costate(model, ctrl, forward_state(model, ctrl, x))[0, 0]
    fd = central_diff(lambda z: loss_j(model, ctrl, z), x)
    assert rel_err(-P0, fd) < 1e-8


def test_costate_with_state_dependent_running_cost(rng):
    model, ctrl, _ = make_case("tanh_resnet", "quadratic_to_target", 3)
    model = Model(model.dynamics, model.loss, StateCost(0.7, 3))
    x = rng.normal(size=3)
    P0 = backward_costate(model, ctrl, forward_state(model, ctrl, x))[0, 0]
    fd = central_diff(lambda z: loss_j(model, ctrl, z), x)
    assert rel_err(-P0, fd) < 1e-8


def test_costate_increment_is_hamiltonian_derivative(rng):
    model, ctrl, _ = make_case("tanh_resnet", "quadratic_to_target", 3)
    X = forward_state(model, ctrl, rng.normal(size=(2, 3)))
    P = backward_costate(model, ctrl, X)
    for k in range(ctrl.n_layers):
        th = ctrl.layers[k]
        # grad_xi of P_{k+1} . f evaluated at X_k
        grad = np.stack([
            central_diff(lambda z: P[k + 1, i] @ model.dynamics.f(z[None], th)[0], X[k, i]) for i in range(2)
        ])
        assert np.allclose(P[k] - P[k + 1], ctrl.h * grad, atol=1e-9)
        assert np.allclose(X[k + 1] - X[k], ctrl.h * model.dynamics.f(X[k], th), rtol=0, atol=1e-15)


# --- beta and alpha ---------------------------------------------------------------------


def test_beta_zero_radius_is_zero(rng):
    model, ctrl, _ = make_case("tanh_resnet", "quadratic_to_target", 2)
    X = forward_state(model, ctrl, rng.normal(size=(3, 2)))
    P = backward_costate(model, ctrl, X)
    beta = forward_beta(model, ctrl, X, P[0], NormSpec(2), 0.0)
    assert not np.any(beta)
    alpha, alpha_hat = backward_alpha(model, ctrl, X, P, beta)
    assert not np.any(alpha_hat) and np.array_equal(alpha, P)


def test_beta_initial_examples():
    P0 = np.array([[3.0, 4.0]])
    b = initial_beta(P0, NormSpec(2), 0.5)
    assert np.allclose(b, 0.5 / 5 * P0, rtol=1e-15)
    b = initial_beta(P0, NormSpec(math.inf), 0.5)
    assert np.allclose(b, 0.5 * P0 / 5, rtol=1e-15)
    b = initial_beta(np.array([[3.0, -4.0]]), NormSpec(math.inf, "max_abs"), 0.5)
    assert np.array_equal(b, [[0.5, -0.5]])
    assert not np.any(initial_beta(np.zeros((1, 2)), NormSpec(4), 0.5))


def test_beta_rejects_finite_p_with_max_abs():
    with pytest.raises(CapabilityError):
        initial_beta(np.ones((1, 2)), NormSpec(4, "max_abs"), 0.1)


def test_batch_stats_kappa():
    P0 = np.array([[3.0, 4.0], [0.0, 1.0]])
    st = batch_stats(P0, NormSpec(2), 0.5)
    assert st.mean_dual_q == pytest.approx(13.0)
    assert st.kappa == pytest.approx(math.sqrt(13.0) / 0.5)


def test_zero_dynamics_alpha_hat_constant(rng):
    model, ctrl, _ = make_case("zero", "quadratic_to_target", 3)
    b1 = first_order_sweeps(model, ctrl, rng.normal(size=(2, 3)), NormSpec(2), 0.3)
    # D2 l = I, so alpha_hat_k = beta_N for every k
    assert np.allclose(b1.alpha_hat, np.broadcast_to(b1.beta[-1], b1.alpha_hat.shape), atol=1e-15)
    assert np.allclose(b1.alpha, b1.P + b1.alpha_hat, atol=0)


@pytest.mark.parametrize("p", [2.0, 4.0, math.inf])
def test_alpha_hat_is_gradient_of_norm_power(p, rng):
    model, ctrl, _ = make_case("tanh_resnet", "logistic_margin", 3, seed=3)
    ns = NormSpec(p)
    x = rng.normal(size=(4, 3))
    b1 = first_order_sweeps(model, ctrl, x, ns, 0.2)
    for i in range(4):
        def norm_q(z):
            P0 = backward_costate(model, ctrl, forward_state(model, ctrl, z))[0, 0]
            return np.linalg.norm(P0) ** ns.q
        fd = central_diff(norm_q, x[i])
        assert rel_err(-ns.q * b1.stats.kappa * b1.alpha_hat[0, i], fd) < 1e-6


def test_alpha_hat_with_state_dependent_running_cost(rng):
    model, ctrl, _ = make_case("tanh_resnet", "quadratic_to_target", 3)
    model = Model(model.dynamics, model.loss, StateCost(0.4, 3))
    x = rng.normal(size=(1, 3))
    b1 = first_order_sweeps(model, ctrl, x, NormSpec(math.inf), 1.0)
    H = central_diff(lambda z: -backward_costate(model, ctrl, forward_state(model, ctrl, z))[0, 0], x[0])
    assert rel_err(b1.alpha_hat[0, 0], H @ b1.beta[0, 0]) < 1e-6


# --- directional sweeps ------------------------------------------------------------------


def test_directional_state_and_costate(rng):
    model, ctrl, _ = make_case("tanh_resnet", "logistic_margin", 3, seed=5)
    x = rng.normal(size=3)
    dx = rng.normal(size=3)
    dx /= np.linalg.norm(dx)
    X = forward_state(model, ctrl, x)
    P = backward_costate(model, ctrl, X)
    zeta = directional_state(model, ctrl, X, dx)
    fdX = central_diff(lambda t: forward_state(model, ctrl, x + t[0] * dx)[-1, 0], np.zeros(1))[:, 0]
    assert rel_err(zeta[-1, 0], fdX) < 1e-8
    eta = directional_costate(model, ctrl, X, P, zeta)
    fdP = central_diff(lambda t: backward_costate(model, ctrl, forward_state(model, ctrl, x + t[0] * dx))[0, 0], np.zeros(1))[:, 0]
    assert rel_err(eta[0, 0], fdP) < 1e-7


def test_directional_zero_dynamics(rng):
    model, ctrl, _ = make_case("zero", "quadratic_to_target", 2)
    x = rng.normal(size=(1, 2))
    dx = np.array([0.6, 0.8])
    X = forward_state(model, ctrl, x)
    P = backward_costate(model, ctrl, X)
    zeta = directional_state(model, ctrl, X, dx)
    assert np.array_equal(zeta[:, 0], np.broadcast_to(dx, (ctrl.n_layers + 1, 2)))
    eta = directional_costate(model, ctrl, X, P, zeta)
    assert np.allclose(eta[:, 0], -dx)


def test_relu_costate_direction_is_linear_recursion(rng):
    model, ctrl, _ = make_case("relu_resnet", "quadratic_to_target", 3)
    X = forward_state(model, ctrl, rng.normal(size=(1, 3)))
    P = backward_costate(model, ctrl, X)
    zeta = directional_state(model, ctrl, X, np.array([1.0, 0.0, 0.0]))
    eta = directional_costate(model, ctrl, X, P, zeta)
    for k in range(ctrl.n_layers):
        J = model.dynamics.jac(X[k], ctrl.layers[k])[0]
        assert np.allclose(eta[k, 0], (np.eye(3) + ctrl.h * J.T) @ eta[k + 1, 0], atol=1e-14)


def test_direction_pair_linear_and_zero(rng):
    d, N, h = 2, 3, 0.3
    A = rng.normal(size=(d, d))
    model, th = linear_model(A, d)
    ctrl = ControlPath(np.tile(th, (N, 1)), np.zeros(d), h)
    X = forward_state(model, ctrl, rng.normal(size=(1, d)))
    P = backward_costate(model, ctrl, X)
    z = np.array([0.6, -0.8])
    gamma, rho = direction_pair(model, ctrl, X, P, z)
    M = np.eye(d) + h * A
    assert np.allclose(gamma[-1, 0], np.linalg.matrix_power(M, N) @ z, atol=1e-14)
    # quadratic loss and linear flow: D2 j = M^N^T M^N
    MN = np.linalg.matrix_power(M, N)
    assert np.allclose(rho[0, 0], MN.T @ MN @ z, atol=1e-12)


def test_direction_pair_orientation_positive(rng):
    model, ctrl, _ = make_case("tanh_resnet", "logistic_margin", 3, seed=7)
    x = rng.normal(size=3)
    X = forward_state(model, ctrl, x)
    P = backward_costate(model, ctrl, X)
    H = central_diff(lambda z: -backward_costate(model, ctrl, forward_state(model, ctrl, z))[0, 0], x, eps=1e-5)
    for _ in range(5):
        z = rng.normal(size=3)
        z /= np.linalg.norm(z)
        rho0 = direction_pair(model, ctrl, X, P, z)[1][0, 0]
        assert rho0 @ z == pytest.approx(z @ H @ z, rel=1e-6, abs=1e-9)


# --- second-order sweeps ------------------------------------------------------------------


def test_second_order_zero_radius(rng):
    model, ctrl, _ = make_case("tanh_resnet", "logistic_margin", 3)
    b1 = first_order_sweeps(model, ctrl, rng.normal(size=(2, 3)), NormSpec(), 0.0)
    b2 = second_order_sweeps(model, ctrl, b1, NormSpec(), 0.0)
    assert not np.any(b2.lam) and not np.any(b2.psi)


def test_second_order_zero_dynamics_constant(rng):
    model, ctrl, _ = make_case("zero", "quadratic_to_target", 2)
    b1 = first_order_sweeps(model, ctrl, rng.normal(size=(2, 2)), NormSpec(), 0.3)
    b2 = second_order_sweeps(model, ctrl, b1, NormSpec(), 0.3)
    for arr in (b2.lam, b2.psi, b2.pi, b2.phi):
        assert np.allclose(arr, np.broadcast_to(arr[0], arr.shape), atol=1e-15)


def test_second_order_degenerate_policy(rng):
    model, ctrl, _ = make_case("tanh_resnet", "quadratic_to_target", 2)
    X0 = forward_state(model, ctrl, np.zeros((1, 2)))
    # choose the target so that the input gradient vanishes at x = 0
    ctrl = ControlPath(ctrl.layers, X0[-1, 0], ctrl.h)
    b1 = first_order_sweeps(model, ctrl, np.zeros((1, 2)), NormSpec(), 0.1)
    with pytest.raises(DegenerateGradientError):
        second_order_sweeps(model, ctrl, b1, NormSpec(), 0.1)
    b2 = second_order_sweeps(model, ctrl, b1, NormSpec(), 0.1, on_degenerate="skip")
    assert b2.degenerate.tolist() == [True]
    assert not np.any(b2.pi) and not np.any(b2.lam)


def test_second_order_requirements(rng):
    model, ctrl, _ = make_case("tanh_resnet", "quadratic_to_target", 2)
    b1 = first_order_sweeps(model, ctrl, rng.normal(size=(1, 2)), NormSpec(math.inf, "max_abs"), 0.1)
    with pytest.raises(CapabilityError):
        second_order_sweeps(model, ctrl, b1, NormSpec(math.inf, "max_abs"), 0.1)
    with pytest.raises(CapabilityError):
        second_order_sweeps(model, ctrl, b1, NormSpec(2), 0.1)


def test_sweeps_are_bit_reproducible(rng):
    model, ctrl, _ = make_case("tanh_resnet", "logistic_margin", 3)
    x = rng.normal(size=(5, 3))
    a = first_order_sweeps(model, ctrl, x, NormSpec(4), 0.2)
    b = first_order_sweeps(model, ctrl, x, NormSpec(4), 0.2)
    for name in ("X", "P", "beta", "alpha", "alpha_hat"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
