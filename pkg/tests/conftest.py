import pytest

from larskit import nd
from larskit.config import spec_from_dict


@pytest.fixture
def rng():
    return nd.Rng(0)


def tiny_spec(tmp_path=None, **overrides):
    d = {
        "dataset": {"kind": "synthetic", "classes": 3, "dim": 6, "train_per_class": 64,
                    "test_per_class": 16, "separation": 3.0, "spread": 1.0},
        "model": {"hidden": [8], "batchnorm": False},
        "optimizer": {"kind": "sgd_momentum", "base_lr": 0.05, "momentum": 0.9},
        "batch_size": 16,
        "epochs": 2,
        "seed": 0,
    }
    for k, v in overrides.items():
        if isinstance(v, dict) and isinstance(d.get(k), dict):
            d[k] = {**d[k], **v}
        else:
            d[k] = v
    if tmp_path is not None:
        d["out_dir"] = str(tmp_path)
    return spec_from_dict(d)


@pytest.fixture
def make_spec():
    return tiny_spec


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
