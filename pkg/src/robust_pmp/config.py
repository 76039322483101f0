"""Run configuration: TOML with flat dotted keys, validated against :data:`SCHEMA`.

Tables are allowed as a spelling of dotted keys, so ``[train]\\nlr = 0.1`` and
``"train.lr" = 0.1`` mean the same thing.  Unknown keys are rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .model import DYNAMICS_FAMILIES, LOSS_KINDS, NormSpec
from .objectives import VARIANTS, RegularizerSpec

__all__ = ["SCHEMA", "Option", "load_config", "resolve", "build_norm", "build_reg", "schema_markdown"]


@dataclass(frozen=True)
class Option:
    kind: str  # "str" | "int" | "float" | "bool" | "float_list" | "bool_list"
    default: object
    doc: str
    choices: tuple | None = None
    positive: bool = False
    nonnegative: bool = False


SCHEMA = {
    "data.path": Option("str", None, "delimited text file, one sample per row (relative to the config file)"),
    "model.family": Option("str", "tanh_resnet", "layer dynamics", DYNAMICS_FAMILIES),
    "model.loss": Option("str", "quadratic_to_target", "terminal loss", LOSS_KINDS),
    "model.running": Option("str", "zero", "running cost", ("zero", "ridge_on_params")),
    "model.ridge": Option("float", 0.0, "ridge coefficient for ridge_on_params", nonnegative=True),
    "model.N": Option("int", 4, "number of layers", positive=True),
    "model.h": Option("float", 0.25, "layer step size", positive=True),
    "norm.p": Option("float", math.inf, "adversary exponent in [2, inf] (TOML accepts inf)"),
    "norm.ground": Option("str", "euclidean", "ground norm", ("euclidean", "max_abs")),
    "reg.variant": Option("str", "clean", "training objective", VARIANTS),
    "reg.delta": Option("float", 0.0, "adversary radius", nonnegative=True),
    "reg.m": Option("int", 16, "Monte-Carlo directions for curvature_mc", positive=True),
    "reg.alpha_mix": Option("float", 0.5, "FGSM weight on the clean loss, in [0, 1)"),
    "reg.seed": Option("int", 0, "seed for Monte-Carlo directions"),
    "train.lr": Option("float", 0.1, "step size", positive=True),
    "train.batch_size": Option("int", 32, "batch size", positive=True),
    "train.epochs": Option("int", 10, "epoch budget", positive=True),
    "train.seed": Option("int", 0, "shuffling seed"),
    "train.convergence_tol": Option("float", 0.0, "stop when the control gradient norm falls below", nonnegative=True),
    "train.max_steps": Option("int", 0, "cap on parameter updates (0 = none)", nonnegative=True),
    "train.min_batch": Option("int", 32, "smallest batch allowed for finite p", positive=True),
    "train.full_batch_stats": Option("bool", False, "normalise with full-dataset statistics"),
    "train.chunk_size": Option("int", 16, "samples per work unit", positive=True),
    "checkpoint.path": Option("str", None, "checkpoint to load for attack and sweep"),
    "attack.delta": Option("float", 0.0, "attack radius", nonnegative=True),
    "attack.steps": Option("int", 200, "ascent steps", positive=True),
    "attack.step_size": Option("float", 0.0, "ascent step (0 = delta/10)", nonnegative=True),
    "attack.restarts": Option("int", 8, "restarts", positive=True),
    "attack.feature_mask": Option("bool_list", None, "per-coordinate flags; false freezes the coordinate"),
    "attack.seed": Option("int", 0, "seed for random restarts"),
    "attack.check_duality": Option("bool", False, "also solve the dual (finite p)"),
    "sweep.deltas": Option("float_list", [1e-3, 3e-3, 1e-2, 3e-2, 1e-1], "radii for the sweep table"),
    "verify.quick": Option("bool", False, "smaller instance counts"),
    "verify.seed": Option("int", 0, "instance seed"),
}

SEED_KEYS = ("reg.seed", "train.seed", "attack.seed", "verify.seed")


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key, opt, value):
    def bad(msg):
        return ConfigError(f"{key}: {msg} (got {value!r})")

    if opt.kind == "str":
        if not isinstance(value, str):
            raise bad("expected a string")
    elif opt.kind == "bool":
        if not isinstance(value, bool):
            raise bad("expected true or false")
    elif opt.kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad("expected an integer")
    elif opt.kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad("expected a number")
        value = float(value)
    elif opt.kind == "float_list":
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise bad("expected a list of numbers")
        value = [float(v) for v in value]
    elif opt.kind == "bool_list":
        if not isinstance(value, list) or not all(isinstance(v, bool) for v in value):
            raise bad("expected a list of booleans")
    if opt.choices is not None and value not in opt.choices:
        raise bad(f"must be one of {', '.join(opt.choices)}")
    if opt.positive and not value > 0:
        raise bad("must be positive")
    if opt.nonnegative and not value >= 0:
        raise bad("must be nonnegative")
    return value


def resolve(raw):
    """Validate a flat or nested mapping and fill defaults; returns a flat dict."""
    flat = _flatten(raw)
    unknown = sorted(set(flat) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    out = {}
    for key, opt in SCHEMA.items():
        out[key] = _coerce(key, opt, flat[key]) if key in flat else opt.default
    try:
        build_norm(out)
        build_reg(out)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return out


def load_config(path):
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return resolve(raw)


def build_norm(cfg):
    return NormSpec(cfg["norm.p"], cfg["norm.ground"])


def build_reg(cfg):
    return RegularizerSpec(cfg["reg.variant"], cfg["reg.delta"], cfg["reg.m"], cfg["reg.alpha_mix"], cfg["reg.seed"])


def schema_markdown():
    """The schema as a markdown table (used to generate the docs)."""
    lines = ["| key | type | default | description |", "|---|---|---|---|"]
    for key, opt in SCHEMA.items():
        doc = opt.doc + (f"; one of {', '.join(opt.choices)}" if opt.choices else "")
        lines.append(f"| `{key}` | {opt.kind} | `{opt.default!r}` | {doc} |")
    return "\n".join(lines)
