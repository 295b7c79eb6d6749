import numpy as np
import pytest

from larskit import nd
from larskit.errors import InvalidArgument, OracleError
from larskit.gradcheck import check_model, finite_diff_grad
from larskit.nn import MLP, Batch


def test_quadratic_is_exact():
    w = nd.tensor([3.0])
    g = finite_diff_grad(lambda: float(w[0] ** 2), w, 1e-5)
    assert abs(g[0] - 6.0) < 1e-9


def test_constant_function_zero_gradient():
    w = nd.Rng(0).normal((3, 4))
    assert not finite_diff_grad(lambda: 1.5, w).any()


def test_bad_inputs():
    w = nd.tensor([1.0])
    with pytest.raises(InvalidArgument):
        finite_diff_grad(lambda: 0.0, w, 0.0)
    with pytest.raises(OracleError):
        finite_diff_grad(lambda: float("nan"), w)


def test_error_shrinks_quadratically_in_h():
    # cubic: central difference error is exactly h^2 (third derivative 6 / 6)
    w = nd.tensor([0.7])
    f = lambda: float(w[0] ** 3)  # noqa: E731
    exact = 3 * 0.7**2
    e1 = abs(finite_diff_grad(f, w, 1e-4)[0] - exact)
    e2 = abs(finite_diff_grad(f, w, 5e-5)[0] - exact)
    assert e1 / e2 == pytest.approx(4.0, rel=0.05)


def test_params_restored_bitwise():
    m = MLP([4, 5, 3], batchnorm=True, rng=nd.Rng(0))
    b = Batch(nd.Rng(1).normal((6, 4)), [0, 1, 2, 0, 1, 2])
    before = [g.value.copy() for g in m.groups]
    stats = {k: (v.mean.copy(), v.var.copy()) for k, v in m.running_stats().items()}
    check_model(m, b)
    for v, g in zip(before, m.groups):
        assert np.array_equal(v, g.value)
    for k, v in m.running_stats().items():
        assert np.array_equal(stats[k][0], v.mean) and np.array_equal(stats[k][1], v.var)


def test_mlp_seed0_passes():
    m = MLP([6, 8, 4], rng=nd.Rng(0))
    r = nd.Rng(1)
    reports = check_model(m, Batch(r.normal((5, 6)), r.integers(0, 4, 5)))
    assert len(reports) == len(m.groups)
    assert all(rep.passed for rep in reports), reports


def test_zero_gradient_point():
    # zero output layer and two samples per class: the output-layer gradient
    # vanishes and every hidden gradient is multiplied by it
    m = MLP([3, 4, 2], rng=nd.Rng(0))
    m.group("dense2.w").value[...] = 0.0
    x = nd.Rng(1).normal((1, 3))
    b = Batch(np.vstack([x, x]), [0, 1])
    for rep in check_model(m, b):
        assert rep.max_relative_error < 1e-5


def test_corrupted_gradient_is_caught(monkeypatch):
    import larskit.gradcheck as gc

    m = MLP([4, 6, 3], rng=nd.Rng(0))
    b = Batch(nd.Rng(1).normal((5, 4)), [0, 1, 2, 0, 1])
    real = gc.model_forward_backward

    def doubled(model, batch, update_stats=True):
        out = real(model, batch, update_stats)
        model.group("dense1.w").grad *= 2.0
        return out

    monkeypatch.setattr(gc, "model_forward_backward", doubled)
    reports = {r.group: r for r in check_model(m, b)}
    bad = reports["dense1.w"]
    assert not bad.passed
    assert bad.max_relative_error == pytest.approx(0.5, abs=1e-4)
    assert all(r.passed for name, r in reports.items() if name != "dense1.w")
