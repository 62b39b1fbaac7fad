import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossd import rotparam
from crossd.reference import aggregate_explicit, window_conv
from crossd.rotparam import RotationParams, RotParamHead
from crossd.tensorcore import ShapeError


def test_head_zero_input_gives_bias():
    head = RotParamHead(np.ones((4, 2, 3, 3)), np.array([0.5, -1.0, 2.0, 3.0]))
    out = rotparam.head_forward(head, np.zeros((2, 2, 5, 6)))
    assert out.shape == (2, 4, 5, 6)
    for c in range(4):
        np.testing.assert_array_equal(out[:, c], head.conv_bias[c])


def test_head_one_by_one():
    w = np.array([2.0, -1.0, 0.5, 3.0]).reshape(4, 1, 1, 1)
    b = np.array([0.1, 0.2, 0.3, 0.4])
    x = np.arange(12.0).reshape(1, 1, 3, 4)
    out = rotparam.head_forward(RotParamHead(w, b), x)
    for c in range(4):
        np.testing.assert_allclose(out[0, c], w[c, 0, 0, 0] * x[0, 0] + b[c], rtol=0, atol=1e-14)


def test_head_channel_mismatch():
    with pytest.raises(ShapeError):
        rotparam.head_forward(RotParamHead.zeros(3), np.zeros((1, 2, 4, 4)))


def test_head_matches_direct_oracle(rng):
    for _ in range(10):
        c = int(rng.integers(1, 4))
        h, w = rng.integers(3, 9, size=2)
        head = RotParamHead.random(c, scale=1.0, rng=rng)
        x = rng.normal(size=(2, c, h, w))
        expected = window_conv(x, head.conv_weights, (1, 1), (1, 1)) + head.conv_bias[None, :, None, None]
        np.testing.assert_allclose(rotparam.head_forward(head, x), expected, rtol=0, atol=1e-12)


def test_aggregate_constant_field():
    f = np.empty((1, 4, 3, 5))
    for c, v in enumerate([1.5, -2.0, 0.0, 7.0]):
        f[0, c] = v
    np.testing.assert_allclose(rotparam.aggregate_rotation_params(f)[0], [1.5, -2.0, 0.0, 7.0], atol=1e-14)


@pytest.mark.parametrize("m", [10.0, 50.0, 500.0])
def test_aggregate_saturates_to_spike(rng, m):
    f = rng.uniform(-1, 1, size=(1, 4, 4, 4))
    f[0, :, 2, 1] = m
    r = rotparam.aggregate_rotation_params(f)[0]
    # remaining softmax mass is at most 15 * exp(1 - m)
    np.testing.assert_allclose(r, m, atol=(m + 1) * 15 * math.exp(1 - m) + 1e-12)


def test_aggregate_matches_explicit_sum(rng):
    f = rng.normal(size=(3, 4, 2, 2))
    np.testing.assert_allclose(rotparam.aggregate_rotation_params(f), aggregate_explicit(f), rtol=0, atol=1e-12)


def test_aggregate_large_values_stable():
    f = np.full((1, 4, 2, 2), 1e4)
    f[0, 0, 0, 0] = 1e4 + 1
    assert np.all(np.isfinite(rotparam.aggregate_rotation_params(f)))


def test_aggregate_permutation_invariance(rng):
    f = rng.normal(size=(2, 4, 3, 3))
    perm = rng.permutation(9)
    g = f.reshape(2, 4, 9)[:, :, perm].reshape(f.shape)
    np.testing.assert_allclose(rotparam.aggregate_rotation_params(g), rotparam.aggregate_rotation_params(f),
                               rtol=0, atol=1e-13)


def test_normalize_examples():
    p = rotparam.normalize_rotation([3, 4, 0, 0])
    np.testing.assert_allclose(p.axis, [0.6, 0.8, 0.0], atol=1e-15)
    assert p.angle == 0.0 and not p.degenerate

    p = rotparam.normalize_rotation([0, 0, 0, 10])
    assert p.degenerate
    np.testing.assert_array_equal(p.axis, [0, 0, 1])
    assert p.angle == pytest.approx(math.pi / 4 * math.tanh(10.0), abs=1e-15)
    assert p.angle == pytest.approx(0.78537, abs=1e-4)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4),
       st.sampled_from([1.0, 1e-6, 1e-9, 1e-12, 0.0]))
def test_normalize_invariants(r, axis_scale):
    r = np.array(r)
    r[:3] *= axis_scale
    p = rotparam.normalize_rotation(r)
    assert abs(np.linalg.norm(p.axis) - 1.0) <= 1e-12
    assert abs(p.angle) <= math.pi / 4


def test_rodrigues_examples():
    np.testing.assert_array_equal(rotparam.rodrigues_approx(RotationParams(np.array([0.6, 0.8, 0]), 0.0)), np.eye(3))
    np.testing.assert_allclose(rotparam.rodrigues_approx(RotationParams(np.array([0.0, 0, 1]), 0.1)),
                               [[1, -0.1, 0], [0.1, 1, 0], [0, 0, 1]], atol=1e-15)
    np.testing.assert_allclose(rotparam.rodrigues_approx(RotationParams(np.array([1.0, 0, 0]), 0.2)),
                               [[1, 0, 0], [0, 1, -0.2], [0, 0.2, 1]], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=4, max_size=4))
def test_rodrigues_skew(r):
    p = rotparam.normalize_rotation(r)
    k = rotparam.rodrigues_approx(p) - np.eye(3)
    np.testing.assert_array_equal(k + k.T, np.zeros((3, 3)))
