import json
import math

import numpy as np
import pytest

from robust_pmp.config import SCHEMA, load_config, resolve, schema_markdown
from robust_pmp.errors import ConfigError, DatasetParseError
from robust_pmp.model import ControlPath, Model
from robust_pmp.storage import CHECKPOINT_FORMAT, load_checkpoint, load_dataset, save_checkpoint, save_dataset


def write(path, text):
    path.write_text(text)
    return path


# --- datasets -----------------------------------------------------------------------------


def test_small_csv(tmp_path):
    mu = load_dataset(write(tmp_path / "a.csv", "1,2\n3,4\n5,6\n"))
    assert mu.points.shape == (3, 2)
    assert np.array_equal(mu.weights, np.full(3, 1 / 3))


@pytest.mark.parametrize("text", ["v,y\n1,2\n3,4\n", "v y\n1 2\n3 4\n", "# note\nv;y\n1;2\n\n3;4\n", "a\tb\n1\t2\n3\t4\n"])
def test_header_and_delimiters(tmp_path, text):
    mu = load_dataset(write(tmp_path / "a.txt", text))
    assert np.array_equal(mu.points, [[1, 2], [3, 4]])


def test_round_trip_exact(tmp_path, rng):
    pts = rng.normal(size=(20, 3)) * 10.0 ** rng.integers(-12, 12, size=(20, 3))
    save_dataset(tmp_path / "d.csv", pts, header=["a", "b", "c"])
    assert np.array_equal(load_dataset(tmp_path / "d.csv").points, pts)


@pytest.mark.parametrize("text,line", [("1,2\n3\n", 2), ("x,y\n1,2\n3,z\n", 3), ("1,2\n1,2\n\n1,2,3\n", 4)])
def test_parse_errors_name_the_line(tmp_path, text, line):
    with pytest.raises(DatasetParseError, match=f":{line}:"):
        load_dataset(write(tmp_path / "bad.csv", text))


def test_empty_and_missing(tmp_path):
    with pytest.raises(DatasetParseError, match="empty"):
        load_dataset(write(tmp_path / "e.csv", "\n# only a comment\n"))
    with pytest.raises(DatasetParseError, match="no data"):
        load_dataset(write(tmp_path / "h.csv", "a,b\n"))
    with pytest.raises(DatasetParseError):
        load_dataset(tmp_path / "missing.csv")
    with pytest.raises(DatasetParseError, match="d=3"):
        load_dataset(write(tmp_path / "w.csv", "1,2\n"), d=3)


# --- checkpoints ------------------------------------------------------------------------


def make_ctrl(model, rng, N=3, h=0.1):
    return ControlPath(rng.normal(size=(N, model.dynamics.n_params)) / 3.0, rng.normal(size=model.loss.n_params), h)


def test_checkpoint_bit_exact(tmp_path, rng):
    model = Model.build("tanh_resnet", "logistic_margin", 3, "ridge_on_params", 0.1)
    ctrl = make_ctrl(model, rng)
    save_checkpoint(tmp_path / "c.json", model, ctrl)
    desc, back = load_checkpoint(tmp_path / "c.json", model)
    assert back.layers.tobytes() == ctrl.layers.tobytes()
    assert back.terminal.tobytes() == ctrl.terminal.tobytes()
    assert back.h == ctrl.h and desc["ridge"] == 0.1
    # saving the reloaded control reproduces the file byte for byte
    save_checkpoint(tmp_path / "c2.json", model, back)
    assert (tmp_path / "c.json").read_bytes() == (tmp_path / "c2.json").read_bytes()


def test_checkpoint_layout(tmp_path, rng):
    model = Model.build("regression_frozen_label", "squared_regression", 2)
    ctrl = make_ctrl(model, rng, N=2, h=0.25)
    save_checkpoint(tmp_path / "c.json", model, ctrl)
    doc = json.loads((tmp_path / "c.json").read_text())
    assert set(doc) == {"format", "version", "model", "N", "h", "layer_size", "layers", "terminal"}
    assert doc["format"] == CHECKPOINT_FORMAT and doc["version"] == 1
    assert doc["h"] == "0x1.0000000000000p-2"
    assert doc["model"] == {"family": "regression_frozen_label", "loss": "squared_regression", "running": "zero",
                            "ridge": "0x0.0p+0", "d": 2}
    assert [float.fromhex(v) for v in doc["layers"]] == ctrl.layers.ravel().tolist()
    assert len(doc["layers"]) == doc["N"] * doc["layer_size"]


def test_checkpoint_mismatch_and_corruption(tmp_path, rng):
    model = Model.build("tanh_resnet", "quadratic_to_target", 2)
    save_checkpoint(tmp_path / "c.json", model, make_ctrl(model, rng))
    with pytest.raises(ConfigError, match="family"):
        load_checkpoint(tmp_path / "c.json", Model.build("relu_resnet", "quadratic_to_target", 2))
    with pytest.raises(ConfigError, match="d="):
        load_checkpoint(tmp_path / "c.json", Model.build("tanh_resnet", "quadratic_to_target", 3))
    doc = json.loads((tmp_path / "c.json").read_text())
    doc["version"] = 2
    write(tmp_path / "v.json", json.dumps(doc))
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "v.json")
    del doc["layers"]
    doc["version"] = 1
    write(tmp_path / "m.json", json.dumps(doc))
    with pytest.raises(ConfigError, match="malformed"):
        load_checkpoint(tmp_path / "m.json")
    write(tmp_path / "j.json", "{not json")
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "j.json")


# --- configuration ------------------------------------------------------------------------


def test_defaults_and_spellings(tmp_path):
    cfg = resolve({})
    assert cfg == {k: o.default for k, o in SCHEMA.items()}
    a = load_config(write(tmp_path / "a.toml", '[train]\nlr = 0.5\n[norm]\np = inf\n'))
    b = load_config(write(tmp_path / "b.toml", '"train.lr" = 0.5\n"norm.p" = inf\n'))
    assert a == b and a["train.lr"] == 0.5 and a["norm.p"] == math.inf
    assert load_config(write(tmp_path / "c.toml", "[norm]\np = 4\n"))["norm.p"] == 4.0


@pytest.mark.parametrize("raw,match", [
    ({"train": {"lrr": 0.1}}, "unknown"),
    ({"train.lr": "fast"}, "expected a number"),
    ({"train.lr": -1.0}, "positive"),
    ({"train.epochs": 2.5}, "integer"),
    ({"train.epochs": True}, "integer"),
    ({"model.family": "lstm"}, "one of"),
    ({"norm.p": 1.5}, "p"),
    ({"reg.alpha_mix": 1.0}, "alpha_mix"),
    ({"attack.feature_mask": [1, 0]}, "booleans"),
    ({"sweep.deltas": "0.1"}, "list"),
    ({"train.full_batch_stats": 1}, "true or false"),
])
def test_schema_rejections(raw, match):
    with pytest.raises(ConfigError, match=match):
        resolve(raw)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.toml")
    with pytest.raises(ConfigError):
        load_config(write(tmp_path / "bad.toml", "train.lr = = 1\n"))


def test_schema_markdown_lists_every_key():
    md = schema_markdown()
    assert all(f"`{k}`" in md for k in SCHEMA)
