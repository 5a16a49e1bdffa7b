import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowshot.errors import NumericError
from lowshot.optim import Adam, RMSProp


def quadratic_run(opt, p0, steps):
    params = {"p": np.array([p0])}
    path = [abs(p0)]
    for _ in range(steps):
        opt.step(params, {"p": params["p"].copy()})  # gradient of p^2 / 2
        path.append(abs(float(params["p"][0])))
    return np.array(path)


@pytest.mark.parametrize("opt", [Adam(), RMSProp()])
def test_zero_gradient_keeps_params(opt):
    params = {"p": np.array([1.5, -2.0])}
    opt.step(params, {"p": np.zeros(2)})
    np.testing.assert_array_equal(params["p"], [1.5, -2.0])


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-6, 1e3), st.booleans())
def test_adam_first_step_closed_form(g, negative):
    g = -g if negative else g
    opt = Adam(lr=1e-3)
    params = {"p": np.array([0.0])}
    opt.step(params, {"p": np.array([g])})
    # bias correction turns m, v into g and g^2 exactly at t = 1
    expected = 1e-3 * abs(g) / (abs(g) + opt.eps)
    assert abs(params["p"][0]) == pytest.approx(expected, rel=1e-12)
    assert np.sign(params["p"][0]) == -np.sign(g)


def test_adam_first_step_is_about_lr():
    opt = Adam(lr=1e-3)
    params = {"p": np.array([0.0])}
    opt.step(params, {"p": np.array([0.4])})
    assert abs(params["p"][0]) == pytest.approx(1e-3, rel=1e-7)


def test_adam_quadratic_simulation():
    path = quadratic_run(Adam(lr=0.1), 1.0, 100)
    # Adam overshoots zero and rings before settling; |p| shrinks on every step until the first crossing
    first_cross = int(np.argmin(np.diff(path) < 0))
    assert first_cross >= 9
    assert path[-1] < 0.05


def test_rmsprop_quadratic_simulation():
    path = quadratic_run(RMSProp(lr=1e-3), 1.0, 200)
    assert path[-1] < path[0]


def test_rmsprop_without_momentum_is_plain_rmsprop(rng):
    grads = rng.standard_normal((20, 3))
    opt = RMSProp(lr=0.01, momentum=0.0)
    params = {"p": np.ones(3)}
    p, s = np.ones(3), np.zeros(3)
    for g in grads:
        opt.step(params, {"p": g})
        s = 0.99 * s + 0.01 * g * g
        p = p - 0.01 * g / (np.sqrt(s) + 1e-8)
    np.testing.assert_allclose(params["p"], p, rtol=1e-14)


def test_rmsprop_update_rule(rng):
    grads = rng.standard_normal((5, 4))
    opt = RMSProp(lr=0.05)
    params = {"p": np.zeros(4)}
    p, s, b = np.zeros(4), np.zeros(4), np.zeros(4)
    for g in grads:
        opt.step(params, {"p": g})
        s = 0.99 * s + 0.01 * g * g
        b = 0.9 * b + g / (np.sqrt(s) + 1e-8)
        p = p - 0.05 * b
    np.testing.assert_allclose(params["p"], p, rtol=1e-14)


@pytest.mark.parametrize("cls", [Adam, RMSProp])
def test_nonfinite_gradient_aborts_without_state_change(cls):
    opt = cls(lr=0.1)
    params = {"a": np.ones(2), "b": np.ones(2)}
    opt.step(params, {"a": np.ones(2), "b": np.ones(2)})
    before = {k: v.copy() for k, v in opt.state_dict().items()}
    snapshot = {k: v.copy() for k, v in params.items()}
    with pytest.raises(NumericError):
        opt.step(params, {"a": np.ones(2), "b": np.array([1.0, np.inf])})
    for k, v in opt.state_dict().items():
        np.testing.assert_array_equal(v, before[k])
    for k in params:
        np.testing.assert_array_equal(params[k], snapshot[k])


@pytest.mark.parametrize("cls", [Adam, RMSProp])
def test_trajectories_bit_identical_and_resumable(rng, cls):
    grads = rng.standard_normal((6, 3)).astype(np.float32)
    a, b = cls(lr=0.01), cls(lr=0.01)
    pa, pb = {"p": np.ones(3, np.float32)}, {"p": np.ones(3, np.float32)}
    for g in grads[:3]:
        a.step(pa, {"p": g})
        b.step(pb, {"p": g})
    c = cls(lr=0.01)
    c.load_state_dict({k: np.asarray(v).copy() for k, v in b.state_dict().items()})
    for g in grads[3:]:
        a.step(pa, {"p": g})
        c.step(pb, {"p": g})
    assert pa["p"].tobytes() == pb["p"].tobytes()
    assert pa["p"].shape == (3,) and pa["p"].dtype == np.float32
