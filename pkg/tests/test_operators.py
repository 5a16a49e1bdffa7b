import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowshot import engine
from lowshot.errors import ConfigError, ShapeError
from lowshot.operators import (
    LUMA_COEFFS,
    add_noise,
    gaussian_for_ratio,
    gaussian_operator,
    identity_operator,
    luma_8bit,
    luma_operator,
    make_operator,
    measure,
)

SHAPE = (3, 8, 8)


def to_signed(rgb8):
    """uint8 RGB triples -> [-1, 1] images of shape (3, 1, k)."""
    unit = np.asarray(rgb8, dtype=np.float64) / 255.0
    return (unit.T * 2 - 1)[:, None, :]


def test_gaussian_regenerable():
    a, b = gaussian_operator(20, 30, seed=9), gaussian_operator(20, 30, seed=9)
    assert a.matrix.tobytes() == b.matrix.tobytes()
    assert not np.array_equal(a.matrix, gaussian_operator(20, 30, seed=10).matrix)


def test_gaussian_distribution_bounds():
    op = gaussian_operator(1000, 1000, seed=0)
    assert op.matrix.size == 10**6
    assert abs(op.matrix.mean()) <= 0.005
    assert abs(op.matrix.var() - 1) <= 0.01


def test_ratio_accessor():
    op = gaussian_operator(410, 12288, seed=0)
    assert op.ratio == 410 / 12288
    assert op.ratio == pytest.approx(0.03336, abs=1e-5)


def test_ratio_builder_rounds():
    op = gaussian_for_ratio(0.1, (3, 32, 32), seed=0)
    assert op.m == 307 and op.n == 3072 and op.output_shape == (307,)


@pytest.mark.parametrize("m,n", [(0, 5), (5, 0), (-1, 3)])
def test_gaussian_rejects_nonpositive(m, n):
    with pytest.raises(ConfigError):
        gaussian_operator(m, n, seed=0)


def test_gaussian_apply_is_matvec(rng):
    op = gaussian_operator(10, SHAPE, seed=1)
    x = rng.standard_normal(SHAPE)
    np.testing.assert_allclose(op.apply(x), op.matrix @ x.ravel(), rtol=1e-12)
    batch = rng.standard_normal((2,) + SHAPE)
    np.testing.assert_allclose(op.apply(batch)[1], op.matrix @ batch[1].ravel(), rtol=1e-12)


def test_gaussian_flat_shape_batches(rng):
    op = gaussian_operator(4, 6, seed=1)
    x = rng.standard_normal((3, 6))
    np.testing.assert_allclose(op.apply(x), x @ op.matrix.T, rtol=1e-12)


def test_identity(rng):
    x = rng.standard_normal(SHAPE)
    np.testing.assert_array_equal(identity_operator(SHAPE).apply(x), x)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        luma_operator(SHAPE).apply(np.zeros((3, 4, 4)))


def test_luma_coefficients_sum_to_one():
    assert abs(sum(LUMA_COEFFS) - 1) <= 1e-9
    with pytest.raises(ConfigError):
        luma_operator(SHAPE, coeffs=(0.3, 0.6, 0.2))


def test_luma_white_and_red():
    op = luma_operator(SHAPE)
    assert np.allclose(op.apply(np.ones(SHAPE)), 1.0, rtol=0, atol=1e-15)
    red = -np.ones(SHAPE)
    red[0] = 1
    np.testing.assert_allclose(op.apply(red), 0.299, rtol=1e-12)
    assert luma_8bit([255, 0, 0]) == 76


def test_luma_matches_8bit_reference(rng):
    triples = np.array(
        [[255, 0, 0], [0, 255, 0], [0, 0, 255], [0, 0, 0], [255, 255, 255]]
        + rng.integers(0, 256, (100, 3)).tolist()
    )
    op = luma_operator((3, 1, len(triples)))
    levels = op.apply(to_signed(triples))[0] * 255
    ref = luma_8bit(triples)
    assert np.all(np.abs(levels - ref) <= 1)
    assert np.all(np.floor(levels + 1e-9) == ref)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 255))
def test_luma_grayscale_fixed_point(v):
    op = luma_operator((3, 2, 2))
    x = np.full((3, 2, 2), v / 127.5 - 1)
    np.testing.assert_allclose(op.apply(x), v / 255, rtol=0, atol=1e-12)


@pytest.mark.parametrize("kind", ["gaussian", "identity"])
def test_linearity(rng, kind):
    op = make_operator(kind, SHAPE, 0.25, seed=3)
    x, y = rng.standard_normal(SHAPE), rng.standard_normal(SHAPE)
    a, b = 0.7, -1.9
    np.testing.assert_allclose(op.apply(a * x + b * y), a * op.apply(x) + b * op.apply(y), rtol=0, atol=1e-9)


def test_luma_linearity_on_unit_scale(rng):
    # Luma acts on the [0, 1]-scaled image; in those coordinates it is linear.
    op = luma_operator(SHAPE)
    u, v = rng.uniform(0, 1, SHAPE), rng.uniform(0, 1, SHAPE)
    a, b = 0.3, 1.7

    def lum(unit):
        return op.apply(2 * unit - 1)

    np.testing.assert_allclose(lum(a * u + b * v), a * lum(u) + b * lum(v), rtol=0, atol=1e-9)
    np.testing.assert_allclose(op.mix(u), lum(u), rtol=0, atol=1e-12)


@pytest.mark.parametrize("kind", ["gaussian", "luma", "identity"])
def test_apply_tensor_matches_apply(rng, kind):
    op = make_operator(kind, SHAPE, 0.2, seed=1)
    x = rng.uniform(-1, 1, (2,) + SHAPE)
    np.testing.assert_allclose(op.apply_tensor(engine.Tensor(x)).data, op.apply(x), rtol=1e-12, atol=1e-12)


def test_noise_zero_is_exact(rng):
    y = rng.standard_normal(50)
    out = add_noise(y, 0.0, seed=1)
    assert out.values.tobytes() == y.tobytes()


def test_noise_seeded(rng):
    y = rng.standard_normal(50)
    a, b = add_noise(y, 0.3, seed=4), add_noise(y, 0.3, seed=4)
    assert a.values.tobytes() == b.values.tobytes()
    assert not np.array_equal(a.values, add_noise(y, 0.3, seed=5).values)


def test_noise_std_concentration():
    y = np.zeros(10**5)
    noise = add_noise(y, 0.1, seed=0).values
    assert abs(noise.std() - 0.1) <= 0.002


def test_negative_noise_rejected():
    with pytest.raises(ConfigError):
        add_noise(np.zeros(3), -0.1, seed=0)


def test_measure_shapes(rng):
    x = rng.uniform(-1, 1, SHAPE)
    assert measure(luma_operator(SHAPE), x).values.shape == (8, 8)
    assert measure(gaussian_for_ratio(0.5, SHAPE, 0), x, 0.01, 2).values.shape == (96,)
