import numpy as np
import pytest

from robust_pmp.model import ControlPath, Model


def central_diff(fun, x, eps=1e-6):
    """Central differences of ``fun`` (array-valued) with respect to the vector ``x``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = eps
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * eps))
    return np.stack(cols, axis=-1)


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def make_case(family, loss, d, N=4, h=0.25, seed=0, scale=0.7, running="zero", ridge=0.0):
    rng = np.random.default_rng(seed)
    model = Model.build(family, loss, d, running, ridge)
    ctrl = ControlPath(
        rng.normal(scale=scale, size=(N, model.dynamics.n_params)),
        rng.normal(size=model.loss.n_params),
        h,
    )
    return model, ctrl, rng


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
