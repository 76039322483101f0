"""Command-line entry point: ``robust-pmp {train,attack,verify,sweep} --config FILE --out DIR``.

Exit status: 0 success, 1 a verification check failed, 2 configuration or
input error, 3 numerical failure.  Log level comes from ``ROBUST_PMP_LOG``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys
from importlib import metadata

import numpy as np
import scipy

from .adversary import AttackConfig, pga_attack_pointwise, pga_attack_wasserstein, robust_risk_oracle, solve_dual
from .config import SEED_KEYS, build_norm, build_reg, load_config
from .errors import (
    CapabilityError,
    ConfigError,
    DatasetParseError,
    DegenerateGradientError,
    NumericOverflowError,
    TrainingDivergedError,
    UnboundedDualError,
)
from .model import Model
from .objectives import first_order_objective, second_order_v1_objective
from .storage import load_checkpoint, load_dataset, save_checkpoint
from .trainer import TrainConfig, train
from .verify import run_suite

log = logging.getLogger("robust_pmp")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("train", "attack", "verify", "sweep")


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return _jsonable(v.item())
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    return v


def _dump(obj):
    return json.dumps(_jsonable(obj), sort_keys=True)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _version():
    try:
        return metadata.version("robust-pmp")
    except metadata.PackageNotFoundError:
        return "unknown"


def _resolve_path(cfg_path, p):
    if p is None or os.path.isabs(p):
        return p
    return os.path.join(os.path.dirname(os.path.abspath(cfg_path)), p)


def build_model(cfg, d):
    return Model.build(cfg["model.family"], cfg["model.loss"], d, cfg["model.running"], cfg["model.ridge"])


def _data(cfg, cfg_path):
    path = _resolve_path(cfg_path, cfg["data.path"])
    if path is None:
        raise ConfigError("data.path is required for this command")
    return path, load_dataset(path)


def _train_config(cfg, threads):
    return TrainConfig(
        reg=build_reg(cfg), ns=build_norm(cfg), lr=cfg["train.lr"], batch_size=cfg["train.batch_size"],
        epochs=cfg["train.epochs"], seed=cfg["train.seed"], h=cfg["model.h"], N=cfg["model.N"],
        convergence_tol=cfg["train.convergence_tol"], max_steps=cfg["train.max_steps"],
        min_batch=cfg["train.min_batch"], full_batch_stats=cfg["train.full_batch_stats"],
        chunk_size=cfg["train.chunk_size"], workers=threads,
    )


def _attack_config(cfg):
    return AttackConfig(
        delta=cfg["attack.delta"], ns=build_norm(cfg), steps=cfg["attack.steps"],
        step_size=cfg["attack.step_size"] or None, restarts=cfg["attack.restarts"],
        feature_mask=tuple(cfg["attack.feature_mask"]) if cfg["attack.feature_mask"] is not None else None,
        seed=cfg["attack.seed"],
    )


def _load_ctrl(cfg, cfg_path, model):
    path = _resolve_path(cfg_path, cfg["checkpoint.path"])
    if path is None:
        raise ConfigError("checkpoint.path is required for this command")
    _, ctrl = load_checkpoint(path, model)
    return ctrl


def cmd_train(cfg, cfg_path, out, threads):
    data_path, mu = _data(cfg, cfg_path)
    model = build_model(cfg, mu.d)
    tcfg = _train_config(cfg, threads)
    try:
        tcfg.validate(len(mu))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    metrics = open(os.path.join(out, "metrics.jsonl"), "w")
    timing = open(os.path.join(out, "timing.jsonl"), "w")

    def emit(rec):
        metrics.write(_dump({k: v for k, v in rec.items() if k != "wall_time"}) + "\n")
        timing.write(_dump({"epoch": rec["epoch"], "wall_time": rec["wall_time"]}) + "\n")
        metrics.flush()

    try:
        report = train(model, mu, tcfg, callback=emit)
    except TrainingDivergedError as exc:
        if exc.last_good is not None:
            save_checkpoint(os.path.join(out, "checkpoint_last_good.json"), model, exc.last_good)
        raise
    finally:
        metrics.close()
        timing.close()
    save_checkpoint(os.path.join(out, "checkpoint.json"), model, report.ctrl)
    last = report.records[-1]
    print(f"trained {report.steps} steps: objective {last['objective']:.6g}, clean risk {last['clean_risk']:.6g}")
    return EXIT_OK, {"data_sha256": _sha256(data_path)}


def cmd_attack(cfg, cfg_path, out, threads):
    data_path, mu = _data(cfg, cfg_path)
    model = build_model(cfg, mu.d)
    ctrl = _load_ctrl(cfg, cfg_path, model)
    acfg = _attack_config(cfg)
    attack = pga_attack_pointwise if acfg.ns.p == math.inf else pga_attack_wasserstein
    res = attack(model, mu, ctrl, acfg)
    rec = {
        "delta": acfg.delta, "p": acfg.ns.p, "ground_norm": acfg.ns.ground_norm,
        "value": res.value, "clean_risk": res.clean_risk, "transport_cost": res.transport_cost,
        "restart_values": res.restart_values, "bound": res.bound, "points": res.points,
    }
    if cfg["attack.check_duality"] and acfg.ns.p != math.inf and acfg.delta > 0:
        gamma, dval = solve_dual(model, mu, ctrl, acfg, seeds=res.points)
        rec.update(dual_value=dval, gamma=gamma)
    with open(os.path.join(out, "attack.json"), "w") as fh:
        fh.write(_dump(rec) + "\n")
    print(f"attack value {res.value:.12g} (clean risk {res.clean_risk:.12g}, transport {res.transport_cost:.3g})")
    return EXIT_OK, {"data_sha256": _sha256(data_path)}


def cmd_sweep(cfg, cfg_path, out, threads):
    data_path, mu = _data(cfg, cfg_path)
    model = build_model(cfg, mu.d)
    ctrl = _load_ctrl(cfg, cfg_path, model)
    ns = build_norm(cfg)
    acfg = _attack_config(cfg)
    settings = dict(steps=acfg.steps, restarts=acfg.restarts, seed=acfg.seed, feature_mask=acfg.feature_mask)
    if acfg.step_size is not None:
        settings["step_size"] = acfg.step_size
    rows = []
    best = -math.inf
    header = f"{'delta':>10} {'oracle':>14} {'first_order':>14} {'second_order':>14} {'gap':>12}"
    print(header)
    with open(os.path.join(out, "sweep.jsonl"), "w") as fh:
        for dl in sorted(cfg["sweep.deltas"]):
            # a point feasible for a smaller radius stays feasible, so the running max is a valid bound
            best = max(best, robust_risk_oracle(model, mu, ctrl, dl, ns, **settings))
            fo = first_order_objective(model, mu, ctrl, dl, ns, feature_mask=acfg.feature_mask)
            so = (second_order_v1_objective(model, mu, ctrl, dl, ns, feature_mask=acfg.feature_mask)
                  if ns.euclidean else None)
            row = {"delta": dl, "oracle": best, "first_order": fo, "second_order": so, "gap": best - fo}
            rows.append(row)
            fh.write(_dump(row) + "\n")
            so_s = f"{so:14.8g}" if so is not None else f"{'-':>14}"
            print(f"{dl:10.3g} {best:14.8g} {fo:14.8g} {so_s} {best - fo:12.3e}")
    return EXIT_OK, {"data_sha256": _sha256(data_path)}


def cmd_verify(cfg, cfg_path, out, threads):
    reports = run_suite(quick=cfg["verify.quick"], seed=cfg["verify.seed"])
    print(f"{'check':<36} {'rel_error':>12} {'tolerance':>10}  result")
    with open(os.path.join(out, "verify.jsonl"), "w") as fh:
        for r in reports:
            fh.write(_dump(r.as_record()) + "\n")
            print(f"{r.name:<36} {r.rel_error:12.3e} {r.tolerance:10.3g}  {'PASS' if r.passed else 'FAIL'}")
    return (EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK), {}


HANDLERS = {"train": cmd_train, "attack": cmd_attack, "verify": cmd_verify, "sweep": cmd_sweep}


def parser():
    ap = argparse.ArgumentParser(prog="robust-pmp", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="TOML configuration file")
    ap.add_argument("--out", required=True, help="output directory (created if missing)")
    ap.add_argument("--seed", type=int, default=None, help="override every seed in the config")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for per-sample sweeps")
    return ap


def run(cmd, config_path, out, seed=None, threads=1):
    """Execute one command; returns the exit status."""
    try:
        cfg = load_config(config_path)
        if seed is not None:
            for k in SEED_KEYS:
                cfg[k] = int(seed)
        if threads < 1:
            raise ConfigError("--threads must be at least 1")
        os.makedirs(out, exist_ok=True)
        status, extra = HANDLERS[cmd](cfg, config_path, out, threads)
        manifest = {
            "command": cmd,
            "config": cfg,
            "config_path": os.path.abspath(config_path),
            "config_sha256": _sha256(config_path),
            "seed_override": seed,
            "threads": threads,
            "versions": {
                "robust_pmp": _version(), "python": platform.python_version(),
                "numpy": np.__version__, "scipy": scipy.__version__,
            },
            "exit_status": status,
        } | extra
        with open(os.path.join(out, "manifest.json"), "w") as fh:
            fh.write(json.dumps(_jsonable(manifest), indent=1, sort_keys=True) + "\n")
        return status
    except (ConfigError, DatasetParseError, CapabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericOverflowError, TrainingDivergedError, DegenerateGradientError, UnboundedDualError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main(argv=None):
    level = os.environ.get("ROBUST_PMP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = parser().parse_args(argv)
    return run(args.command, args.config, args.out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())
