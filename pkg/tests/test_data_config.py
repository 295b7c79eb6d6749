import json

import numpy as np
import pytest

from larskit import nd
from larskit.config import ExperimentSpec, dump_config, load_config, spec_from_dict, spec_to_dict
from larskit.data import BlobParams, load_idx, make_synthetic, write_idx_images, write_idx_labels
from larskit.errors import ConfigError, FormatError, InvalidArgument
from larskit.nn import MLP, model_forward_backward
from larskit.optim import OptimizerConfig, ScheduleSpec, sgd_step


# --- synthetic blobs ---------------------------------------------------------

def test_synthetic_is_deterministic():
    p = BlobParams(4, 5, 20, 5, 2.0, 1.0)
    a = make_synthetic(p, nd.Rng(3))
    b = make_synthetic(p, nd.Rng(3))
    for x, y in zip(a, b):
        assert np.array_equal(x.inputs, y.inputs) and np.array_equal(x.labels, y.labels)
    train, test = a
    assert len(train) == 80 and len(test) == 20
    assert np.bincount(train.labels).tolist() == [20] * 4
    # disjoint: no test row appears in train
    assert not (train.inputs[:, None, :] == test.inputs[None, :, :]).all(axis=2).any()


def test_synthetic_validation():
    with pytest.raises(InvalidArgument):
        make_synthetic(BlobParams(classes=1), nd.Rng(0))
    with pytest.raises(InvalidArgument):
        make_synthetic(BlobParams(train_per_class=0), nd.Rng(0))


def _train_linear(train, epochs=30, lr=0.5):
    # softmax regression: no hidden layer
    m = MLP([train.inputs.shape[1], int(train.labels.max()) + 1], rng=nd.Rng(0))
    c = OptimizerConfig(base_lr=lr, total_steps=epochs, schedule=ScheduleSpec(decay="constant"))
    for t in range(epochs):
        model_forward_backward(m, train)
        sgd_step(m.groups, c, t)
    return m


def test_well_separated_blobs_are_linearly_separable():
    train, test = make_synthetic(BlobParams(5, 10, 100, 100, 20.0, 1.0), nd.Rng(0))
    m = _train_linear(train)
    assert m.evaluate(test)[1] > 0.99


def test_zero_separation_is_chance():
    train, test = make_synthetic(BlobParams(4, 10, 500, 500, 0.0, 1.0), nd.Rng(0))
    m = _train_linear(train)
    assert abs(m.evaluate(test)[1] - 0.25) < 0.05


# --- IDX ---------------------------------------------------------------------

def _fixture(tmp_path, n_img=2, n_lab=2):
    imgs = np.arange(n_img * 3 * 4, dtype=np.uint8).reshape(n_img, 3, 4) * 10
    write_idx_images(tmp_path / "img.idx", imgs)
    write_idx_labels(tmp_path / "lab.idx", [7, 3, 1][:n_lab])
    return tmp_path / "img.idx", tmp_path / "lab.idx", imgs


def test_idx_roundtrip(tmp_path):
    ip, lp, imgs = _fixture(tmp_path)
    ds = load_idx(ip, lp)
    assert ds.inputs.shape == (2, 12)
    assert ds.labels.tolist() == [7, 3]
    np.testing.assert_array_equal(ds.inputs, imgs.reshape(2, -1) / 255.0)
    assert ds.inputs.min() >= 0 and ds.inputs.max() <= 1


def test_idx_gzip(tmp_path):
    import gzip

    ip, lp, _ = _fixture(tmp_path)
    for p in (ip, lp):
        (tmp_path / (p.name + ".gz")).write_bytes(gzip.compress(p.read_bytes()))
    ds = load_idx(tmp_path / "img.idx.gz", tmp_path / "lab.idx.gz")
    assert ds.labels.tolist() == [7, 3]


def test_idx_errors(tmp_path):
    ip, lp, _ = _fixture(tmp_path, n_lab=3)
    with pytest.raises(FormatError, match="labels"):
        load_idx(ip, lp)
    ip, lp, _ = _fixture(tmp_path)
    with pytest.raises(FormatError, match="magic"):
        load_idx(lp, ip)
    ip.write_bytes(ip.read_bytes()[:-1])
    with pytest.raises(FormatError, match="truncated"):
        load_idx(ip, lp)


# --- config ------------------------------------------------------------------

def test_minimal_config_fills_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{}")
    spec = load_config(p)
    assert spec == ExperimentSpec()
    assert spec.model.hidden == [256, 128] and spec.optimizer.trust_coeff == 0.001


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigError, match="bogus"):
        spec_from_dict({"optimizer": {"bogus": 1}})
    with pytest.raises(ConfigError, match="unknown"):
        spec_from_dict({"batchsize": 3})


def test_config_divisibility():
    with pytest.raises(ConfigError, match="chunk_size"):
        spec_from_dict({"batch_size": 100, "chunk_size": 64})


def test_config_type_and_field_errors():
    with pytest.raises(ConfigError, match="optimizer.base_lr"):
        spec_from_dict({"optimizer": {"base_lr": "fast"}})
    with pytest.raises(ConfigError, match="optimizer.momentum"):
        spec_from_dict({"optimizer": {"momentum": 1.5}})
    with pytest.raises(ConfigError, match="dataset.kind"):
        spec_from_dict({"dataset": {"kind": "imagenet"}})
    with pytest.raises(ConfigError, match="train_images"):
        spec_from_dict({"dataset": {"kind": "idx"}})


def test_config_parse_error_has_line(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n  "epochs": 3,\n  "seed": ,\n}')
    with pytest.raises(ConfigError, match=r"c\.json:3:"):
        load_config(p)


def test_config_roundtrip(tmp_path):
    spec = spec_from_dict({
        "dataset": {"kind": "idx", "train_images": "a", "train_labels": "b",
                    "test_images": "c", "test_labels": "d"},
        "model": {"hidden": [16], "batchnorm": True},
        "optimizer": {"kind": "lars", "base_lr": 2, "trust_clip": 10.0, "lars_exclude": ["bias"]},
        "batch_size": 64, "chunk_size": 16, "epochs": 3,
    })
    p = tmp_path / "c.json"
    dump_config(spec, p)
    assert load_config(p) == spec
    assert spec_from_dict(json.loads(json.dumps(spec_to_dict(spec)))) == spec


@pytest.mark.parametrize("name", ["blobs_lars.json", "blobs_sgd_b32.json"])
def test_bundled_configs_load(name):
    from pathlib import Path

    spec = load_config(Path(__file__).parent.parent / "configs" / name)
    assert spec.batch_size % spec.chunk == 0
