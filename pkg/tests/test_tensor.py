import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dpconv.convspec import ConvSpec, ShapeError
from dpconv.tensor import (as_mask, batch_mask, concat_channels, conv2d, conv2d_backward,
                           conv2d_direct, mask_ratio, split_channels, upsample_nearest,
                           upsample_nearest_backward)
from dpconv.gradcheck import numerical_grad, rel_error

from oracles import conv_loops


def test_direct_sum_of_nine_ones():
    out = conv2d_direct(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), [0.0], ConvSpec.square(3))
    assert out.shape == (1, 1, 3, 3)
    assert out[0, 0, 1, 1] == 9.0
    assert out[0, 0, 0, 0] == 4.0


def test_direct_zero_kernel_gives_bias(rng):
    x = rng.normal(size=(2, 3, 6, 5))
    out = conv2d_direct(x, np.zeros((4, 3, 3, 3)), [1.5, -2.0, 0.0, 7.0], ConvSpec.square(3))
    for o, b in enumerate([1.5, -2.0, 0.0, 7.0]):
        assert np.all(out[:, o] == b)


def test_direct_dilated_identity_center():
    x = np.arange(25.0).reshape(1, 1, 5, 5)
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    out = conv2d_direct(x, w, [0.0], ConvSpec.square(3, dilation=2, padding=0))
    assert out.shape == (1, 1, 1, 1)
    assert out[0, 0, 0, 0] == 12.0


def test_direct_output_size_formula():
    spec = ConvSpec(1, 2, dilation=2, stride=3, padding=1)
    out = conv2d_direct(np.ones((1, 1, 11, 13)), np.ones((1, 1, 3, 5)), None, spec)
    assert out.shape[2:] == ((11 + 2 - 4 - 1) // 3 + 1, (13 + 2 - 8 - 1) // 3 + 1)


def test_direct_rejects_bad_shapes():
    spec = ConvSpec.square(3)
    with pytest.raises(ShapeError, match="input channels"):
        conv2d_direct(np.ones((1, 2, 4, 4)), np.ones((1, 3, 3, 3)), None, spec)
    with pytest.raises(ShapeError, match="kernel"):
        conv2d_direct(np.ones((1, 1, 4, 4)), np.ones((1, 1, 5, 5)), None, spec)
    with pytest.raises(ShapeError, match="bias"):
        conv2d_direct(np.ones((1, 1, 4, 4)), np.ones((2, 1, 3, 3)), [1.0], spec)
    with pytest.raises(ShapeError, match="exceeds"):
        conv2d_direct(np.ones((1, 1, 2, 2)), np.ones((1, 1, 3, 3)), None,
                      ConvSpec.square(3, dilation=2, padding=0))
    with pytest.raises(ShapeError):
        conv2d_direct(np.ones((4, 4)), np.ones((1, 1, 3, 3)), None, spec)


@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_direct_is_linear(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    spec = ConvSpec(1, 0, dilation=int(rng.integers(1, 3)), stride=int(rng.integers(1, 3)),
                    padding=int(rng.integers(0, 3)))
    f1, f2 = rng.normal(size=(2, 1, 2, 6, 5))
    w = rng.normal(size=(2, 2, 3, 1))
    lhs = conv2d_direct(alpha * f1 + beta * f2, w, None, spec)
    rhs = alpha * conv2d_direct(f1, w, None, spec) + beta * conv2d_direct(f2, w, None, spec)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_gemm_path_matches_direct_on_200_configs(rng):
    worst = 0.0
    for _ in range(200):
        hh, hw = (int(v) for v in rng.integers(0, 3, size=2))
        d, s = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        p = int(rng.integers(0, 4))
        spec = ConvSpec(hh, hw, dilation=d, stride=s, padding=p)
        eh, ew = spec.extent
        h = int(rng.integers(max(1, eh - 2 * p), max(1, eh - 2 * p) + 6))
        w_ = int(rng.integers(max(1, ew - 2 * p), max(1, ew - 2 * p) + 6))
        x = rng.normal(size=(int(rng.integers(1, 3)), int(rng.integers(1, 4)), h, w_))
        w = rng.normal(size=(int(rng.integers(1, 4)), x.shape[1]) + spec.kernel_size)
        b = rng.normal(size=w.shape[0])
        ref = conv2d_direct(x, w, b, spec)
        worst = max(worst, float(np.abs(conv2d(x, w, b, s, p, d) - ref).max()))
    assert worst < 1e-10


def test_direct_matches_independent_loops(rng):
    for _ in range(10):
        spec = ConvSpec(1, 1, dilation=int(rng.integers(1, 3)), stride=int(rng.integers(1, 3)),
                        padding=int(rng.integers(0, 3)))
        x = rng.normal(size=(2, 2, 7, 8))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        np.testing.assert_allclose(conv2d_direct(x, w, b, spec),
                                   conv_loops(x, w, b, spec.stride, spec.padding, spec.dilation),
                                   atol=1e-12)


def test_conv2d_accepts_even_kernels(rng):
    x = rng.normal(size=(1, 2, 8, 8))
    w = rng.normal(size=(3, 2, 4, 4))
    out = conv2d(x, w, None, stride=2, padding=1)
    assert out.shape == (1, 3, 4, 4)
    np.testing.assert_allclose(out, conv_loops(x, w, None, 2, 1, 1), atol=1e-12)


@pytest.mark.parametrize("stride,padding,dilation", [(1, 0, 1), (2, 1, 1), (1, 2, 2), (2, 3, 3)])
def test_conv2d_backward_matches_finite_differences(rng, stride, padding, dilation):
    x = rng.normal(size=(2, 2, 7, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out = conv2d(x, w, b, stride, padding, dilation)
    proj = rng.normal(size=out.shape)
    dx, dw, db = conv2d_backward(proj, x, w, stride, padding, dilation)

    def f():
        return float((conv2d(x, w, b, stride, padding, dilation) * proj).sum())

    assert rel_error(dx, numerical_grad(f, x)) < 1e-6
    assert rel_error(dw, numerical_grad(f, w)) < 1e-6
    assert rel_error(db, numerical_grad(f, b)) < 1e-6


def test_conv2d_backward_can_skip_input_gradient(rng):
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(1, 2, 3, 3))
    dx, dw, db = conv2d_backward(np.ones((1, 1, 3, 3)), x, w, need_input=False)
    assert dx is None and dw.shape == w.shape and db.shape == (1,)


# ------------------------------------------------------------ upsample / concat

def test_upsample_factor_one_is_identity(rng):
    x = rng.normal(size=(2, 3, 4, 5))
    np.testing.assert_array_equal(upsample_nearest(x, 1), x)


def test_upsample_single_pixel():
    np.testing.assert_array_equal(upsample_nearest(np.full((1, 1, 1, 1), 5.0), 2),
                                  np.full((1, 1, 2, 2), 5.0))


def test_upsample_block_constant():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    expected = [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]
    np.testing.assert_array_equal(upsample_nearest(x, 2)[0, 0], expected)


def test_upsample_rejects_zero_factor():
    with pytest.raises(ValueError):
        upsample_nearest(np.ones((1, 1, 2, 2)), 0)


@given(arrays(np.float64, (1, 2, 3, 3), elements=st.integers(-5, 5).map(float)),
       st.integers(1, 4))
def test_upsample_preserves_distinct_values(x, factor):
    up = upsample_nearest(x, factor)
    assert set(np.unique(up)) == set(np.unique(x))
    assert up.shape == (1, 2, 3 * factor, 3 * factor)


def test_upsample_backward_is_adjoint(rng):
    x = rng.normal(size=(2, 3, 4, 5))
    dy = rng.normal(size=(2, 3, 12, 15))
    lhs = (upsample_nearest(x, 3) * dy).sum()
    rhs = (x * upsample_nearest_backward(dy, 3)).sum()
    assert abs(lhs - rhs) < 1e-10


def test_concat_with_empty_channels_is_identity(rng):
    x = rng.normal(size=(2, 3, 4, 4))
    np.testing.assert_array_equal(concat_channels(x, np.zeros((2, 0, 4, 4))), x)


def test_concat_ordering_and_round_trip(rng):
    a, b = rng.normal(size=(1, 2, 3, 3)), rng.normal(size=(1, 3, 3, 3))
    c = concat_channels(a, b)
    assert c.shape[1] == 5
    np.testing.assert_array_equal(c[:, :2], a)
    np.testing.assert_array_equal(c[:, 2:], b)
    a2, b2 = split_channels(c, 2)
    np.testing.assert_array_equal(a2, a)
    np.testing.assert_array_equal(b2, b)


def test_concat_rejects_spatial_mismatch():
    with pytest.raises(ShapeError):
        concat_channels(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 4)))


# ------------------------------------------------------------------- masks

def test_mask_validation():
    assert as_mask(np.array([[0, 1], [1, 1]], dtype=bool)).dtype == np.uint8
    with pytest.raises(ValueError):
        as_mask(np.array([[0, 2]]))
    with pytest.raises(ValueError):
        as_mask(np.array([[0.5, 1.0]]))
    with pytest.raises(ShapeError):
        as_mask(np.ones(4))


def test_mask_ratio_counts_holes():
    m = np.ones((4, 5), np.uint8)
    m[0, :3] = 0
    assert mask_ratio(m) == 3 / 20


def test_batch_mask_broadcasts_and_checks():
    m = np.ones((3, 3), np.uint8)
    assert batch_mask(m, 4).shape == (4, 3, 3)
    with pytest.raises(ShapeError):
        batch_mask(np.ones((2, 3, 3), np.uint8), 4)
