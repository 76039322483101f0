"""Mini-batch training loops driven by the adjoint gradients.

Every variant uses the same loop: shuffle, sweep each contiguous batch,
and update the layers by plain gradient steps on the batch-mean Hamiltonian
gradient (``theta_k -= lr * E[grad_theta H_k]``) and the terminal block by its
exact gradient.  Results depend only on ``(seed, config, data)``: per-sample
work is split into fixed-size chunks whose partial sums are added in order.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NumericOverflowError, TrainingDivergedError
from .model import ControlPath, NormSpec
from .objectives import EmpiricalMeasure, RegularizerSpec, evaluate

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "TrainReport",
    "train",
    "train_clean",
    "train_first_order",
    "train_second_order",
    "train_fgsm",
]


@dataclass(frozen=True)
class TrainConfig:
    reg: RegularizerSpec = field(default_factory=RegularizerSpec)
    ns: NormSpec = field(default_factory=NormSpec)
    lr: float = 0.1
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    h: float = 0.25
    N: int = 4
    convergence_tol: float = 0.0
    max_steps: int = 0  # 0 means no cap
    min_batch: int = 32
    full_batch_stats: bool = False
    chunk_size: int = 16
    workers: int = 1

    def validate(self, n_samples):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1 or self.N < 1 or self.batch_size < 1:
            raise ValueError("epochs, N and batch_size must be positive")
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.batch_size > n_samples:
            raise ValueError(f"batch_size {self.batch_size} exceeds dataset size {n_samples}")
        small_ok = self.ns.p == math.inf or self.reg.variant not in ("first_order", "curvature_mc")
        if not small_ok and self.reg.delta > 0 and self.batch_size < self.min_batch:
            raise ValueError(
                f"batch_size {self.batch_size} is below the minimum {self.min_batch} for finite p; "
                "small batches make the batch moment unreliable"
            )
        if self.chunk_size < 1 or self.workers < 1:
            raise ValueError("chunk_size and workers must be positive")


@dataclass
class TrainReport:
    records: list
    ctrl: ControlPath
    steps: int
    converged: bool

    def metrics(self):
        """Records without wall-clock fields (these are the reproducible part)."""
        return [{k: v for k, v in r.items() if k != "wall_time"} for r in self.records]


def _grad_norm(grad, h):
    per_layer = np.linalg.norm(grad.layers / h, axis=1)
    return float(max(per_layer.max(), np.linalg.norm(grad.terminal) if grad.terminal.size else 0.0))


def _on_degenerate(cfg):
    return "skip" if cfg.reg.variant == "second_order_v1" else "raise"


def train(model, mu, cfg, init=None, callback=None):
    """Train with the variant named by ``cfg.reg.variant``.

    ``callback(record)`` is invoked after each epoch with the full-data record
    ``{epoch, steps, clean_risk, reg_term, objective, control_grad_norm,
    degenerate, wall_time}``.
    """
    mu = mu if isinstance(mu, EmpiricalMeasure) else EmpiricalMeasure(mu)
    cfg.validate(len(mu))
    if init is None:
        ctrl = ControlPath.zeros(model, cfg.N, cfg.h)
    else:
        ctrl = init.copy()
        if ctrl.n_layers != cfg.N or ctrl.h != cfg.h:
            raise ValueError("initial control does not match N and h of the config")
    ctrl.check(model)

    rng = np.random.default_rng(cfg.seed)
    n = len(mu)
    records = []
    steps = 0
    converged = False
    stats_pts = mu.points if cfg.full_batch_stats else None
    stats_w = mu.weights if cfg.full_batch_stats else None
    executor = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    t0 = time.perf_counter()
    last_good = ctrl.copy()

    def full_eval(c):
        return evaluate(
            model, c, mu.points, mu.weights, cfg.reg, cfg.ns,
            on_degenerate=_on_degenerate(cfg), chunk_size=cfg.chunk_size, executor=executor,
        )

    def diverged(msg):
        return TrainingDivergedError(msg, last_good=last_good.copy(), report=TrainReport(records, last_good.copy(), steps, False))

    try:
        for epoch in range(1, cfg.epochs + 1):
            perm = rng.permutation(n)
            for start in range(0, n - cfg.batch_size + 1, cfg.batch_size):
                idx = perm[start : start + cfg.batch_size]
                w = mu.weights[idx] / mu.weights[idx].sum()
                try:
                    ev = evaluate(
                        model, ctrl, mu.points[idx], w, cfg.reg, cfg.ns,
                        stats_points=stats_pts, stats_weights=stats_w,
                        on_degenerate=_on_degenerate(cfg), chunk_size=cfg.chunk_size, executor=executor,
                    )
                except NumericOverflowError as exc:
                    raise diverged(f"overflow at step {steps}: {exc}") from exc
                if not (math.isfinite(ev.value) and np.all(np.isfinite(ev.grad.flat()))):
                    raise diverged(f"non-finite objective at step {steps}")
                last_good = ctrl.copy()
                ctrl = ControlPath(
                    ctrl.layers - cfg.lr * ev.grad.layers / ctrl.h,
                    ctrl.terminal - cfg.lr * ev.grad.terminal,
                    ctrl.h,
                )
                steps += 1
                if cfg.max_steps and steps >= cfg.max_steps:
                    break
            try:
                full = full_eval(ctrl)
            except NumericOverflowError as exc:
                raise diverged(f"overflow after epoch {epoch}: {exc}") from exc
            if not math.isfinite(full.value):
                raise diverged(f"non-finite objective after epoch {epoch}")
            last_good = ctrl.copy()
            gnorm = _grad_norm(full.grad, ctrl.h)
            rec = {
                "epoch": epoch,
                "steps": steps,
                "clean_risk": full.clean,
                "reg_term": full.reg_term,
                "objective": full.value,
                "control_grad_norm": gnorm,
                "degenerate": full.degenerate,
                "wall_time": time.perf_counter() - t0,
            }
            records.append(rec)
            log.info("epoch %d objective %.6g grad %.3g", epoch, full.value, gnorm)
            if callback is not None:
                callback(rec)
            if gnorm < cfg.convergence_tol:
                converged = True
                break
            if cfg.max_steps and steps >= cfg.max_steps:
                break
    finally:
        if executor is not None:
            executor.shutdown()
    return TrainReport(records, ctrl, steps, converged)


def _with_variant(cfg, variant):
    if cfg.reg.variant != variant:
        raise ValueError(f"config variant is {cfg.reg.variant!r}, expected {variant!r}")
    return cfg


def train_clean(model, mu, cfg, init=None, callback=None):
    """Unregularised empirical risk minimisation (any variant in ``cfg`` is replaced by clean)."""
    cfg = replace(cfg, reg=replace(cfg.reg, variant="clean"))
    return train(model, mu, cfg, init, callback)


def train_first_order(model, mu, cfg, init=None, callback=None):
    return train(model, mu, _with_variant(cfg, "first_order"), init, callback)


def train_second_order(model, mu, cfg, init=None, callback=None):
    """Second-order training; samples with vanishing input gradient fall back to the clean term."""
    return train(model, mu, _with_variant(cfg, "second_order_v1"), init, callback)


def train_fgsm(model, mu, cfg, init=None, callback=None):
    return train(model, mu, _with_variant(cfg, "fgsm"), init, callback)
