"""Dataset ingestion and checkpoint persistence.

Checkpoints are JSON documents with every float written by ``float.hex`` so a
reload is bit-identical; the layout is documented in docs/checkpoint.md.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from .errors import ConfigError, DatasetParseError
from .model import ControlPath
from .objectives import EmpiricalMeasure

__all__ = ["load_dataset", "save_dataset", "save_checkpoint", "load_checkpoint", "CHECKPOINT_FORMAT"]

CHECKPOINT_FORMAT = "robust_pmp.checkpoint"
CHECKPOINT_VERSION = 1


def _split(line, delim):
    return next(csv.reader([line], delimiter=delim)) if delim else line.split()


def _delimiter(lines):
    """First of comma, semicolon, tab present in the file; ``None`` means whitespace."""
    for c in ",;\t":
        if any(c in ln for ln in lines):
            return c
    return None


def load_dataset(path, d=None):
    """Read a delimited text file (comma, semicolon, tab or whitespace) into a uniform measure.

    A first row with any non-numeric cell is treated as a header.  Blank lines
    and lines starting with ``#`` are ignored.  Ragged rows, non-numeric cells
    and empty files raise :class:`DatasetParseError` naming the line.
    """
    try:
        with open(path, newline="") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DatasetParseError(f"{path}: {exc}") from exc
    body = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip() and not ln.lstrip().startswith("#")]
    if not body:
        raise DatasetParseError(f"{path}: empty dataset")
    delim = _delimiter([ln for _, ln in body])
    rows = []
    width = None
    for pos, (lineno, ln) in enumerate(body):
        cells = [c.strip() for c in _split(ln, delim)]
        try:
            vals = [float(c) for c in cells]
        except ValueError:
            if pos == 0:
                continue  # header
            raise DatasetParseError(f"{path}:{lineno}: non-numeric cell in {ln!r}") from None
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise DatasetParseError(f"{path}:{lineno}: expected {width} columns, found {len(vals)}")
        rows.append(vals)
    if not rows:
        raise DatasetParseError(f"{path}: no data rows")
    pts = np.array(rows, dtype=float)
    if d is not None and pts.shape[1] != d:
        raise DatasetParseError(f"{path}: rows have {pts.shape[1]} columns but the model state has d={d}")
    return EmpiricalMeasure(pts)


def save_dataset(path, points, header=None):
    """Write points with ``repr`` precision so loading reproduces them exactly."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(header)
        for row in np.asarray(points, dtype=float):
            w.writerow([repr(float(v)) for v in row])


def _hex(a):
    return [float(v).hex() for v in np.asarray(a, dtype=float).ravel()]


def _unhex(vals):
    return np.array([float.fromhex(v) for v in vals], dtype=float)


def save_checkpoint(path, model, ctrl):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": model.describe() | {"ridge": float(model.running.ridge).hex()},
        "N": ctrl.n_layers,
        "h": ctrl.h.hex(),
        "layer_size": int(ctrl.layers.shape[1]),
        "layers": _hex(ctrl.layers),
        "terminal": _hex(ctrl.terminal),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path, model=None):
    """Load ``(description, ControlPath)``; with ``model``, refuse any family/shape mismatch."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    try:
        desc = dict(doc["model"])
        desc["ridge"] = float.fromhex(desc["ridge"])
        n, size = int(doc["N"]), int(doc["layer_size"])
        layers = _unhex(doc["layers"]).reshape(n, size)
        ctrl = ControlPath(layers, _unhex(doc["terminal"]), float.fromhex(doc["h"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed checkpoint ({exc})") from exc
    if model is not None:
        mine = model.describe()
        for key in ("family", "loss", "running", "d"):
            if desc[key] != mine[key]:
                raise ConfigError(f"checkpoint {key}={desc[key]!r} does not match configured {mine[key]!r}")
        try:
            ctrl.check(model)
        except Exception as exc:
            raise ConfigError(f"checkpoint shapes do not match the model: {exc}") from exc
    return desc, ctrl
