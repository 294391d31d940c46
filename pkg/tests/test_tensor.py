import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from didfuse import tensor as T
from didfuse.errors import NumericError, ShapeError
from helpers import REL_TOL, conv_oracle, numeric_grad, rel_error


def f32(a):
    return np.asarray(a, dtype=np.float32)


# -- convolution -------------------------------------------------------------


def test_conv_all_ones_zero_padding():
    x = np.ones((1, 1, 3, 3), np.float32)
    k = np.ones((1, 1, 3, 3), np.float32)
    out = T.conv2d_forward(x, k, np.zeros(1, np.float32), "zero")
    assert out[0, 0, 1, 1] == 9
    assert out[0, 0, 0, 0] == out[0, 0, 0, 2] == out[0, 0, 2, 0] == out[0, 0, 2, 2] == 4
    assert out[0, 0, 0, 1] == 6


def test_conv_all_ones_reflection_padding():
    x = np.ones((1, 1, 3, 3), np.float32)
    k = np.ones((1, 1, 3, 3), np.float32)
    out = T.conv2d_forward(x, k, np.zeros(1, np.float32), "reflection")
    np.testing.assert_array_equal(out, np.full((1, 1, 3, 3), 9, np.float32))


@pytest.mark.parametrize("padding", ["zero", "reflection"])
def test_conv_matches_nested_loops(rng, padding):
    x = f32(rng.standard_normal((2, 3, 8, 8)))
    k = f32(rng.standard_normal((4, 3, 3, 3)))
    b = f32(rng.standard_normal(4))
    out = T.conv2d_forward(x, k, b, padding)
    assert out.shape == (2, 4, 8, 8) and out.dtype == np.float32
    np.testing.assert_allclose(out, conv_oracle(x, k, b, padding), atol=1e-5, rtol=0)


def test_conv_preserves_spatial_size_and_dtype(rng):
    x = rng.standard_normal((1, 2, 5, 7))
    out = T.conv2d_forward(x, rng.standard_normal((3, 2, 3, 3)), np.zeros(3), "reflection")
    assert out.shape == (1, 3, 5, 7) and out.dtype == np.float64


def test_conv_errors(rng):
    x = f32(rng.standard_normal((1, 2, 4, 4)))
    with pytest.raises(ShapeError) as info:
        T.conv2d_forward(x, f32(np.ones((1, 3, 3, 3))), np.zeros(1), "zero")
    assert "(1, 3, 3, 3)" in str(info.value) and "(1, 2, 4, 4)" in str(info.value)
    with pytest.raises(ShapeError):
        T.conv2d_forward(x, f32(np.ones((1, 2, 5, 5))), np.zeros(1), "zero")
    bad = x.copy()
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(NumericError):
        T.conv2d_forward(bad, f32(np.ones((1, 2, 3, 3))), np.zeros(1), "zero")
    with pytest.raises(ShapeError):
        T.conv2d_forward(f32(np.ones((1, 1, 1, 4))), f32(np.ones((1, 1, 3, 3))), np.zeros(1), "reflection")
    with pytest.raises(ShapeError):
        T.conv2d_backward(np.ones((1, 1, 3, 3)), x, f32(np.ones((1, 2, 3, 3))), "zero")


def test_conv_backward_zero_grad(rng):
    x = f32(rng.standard_normal((2, 3, 5, 5)))
    k = f32(rng.standard_normal((4, 3, 3, 3)))
    gi, gk, gb = T.conv2d_backward(np.zeros((2, 4, 5, 5), np.float32), x, k, "reflection")
    assert not gi.any() and not gk.any() and not gb.any()


def test_conv_backward_is_rotated_kernel_convolution():
    # 2x2 input, zero padding: grad_input = grad_out correlated with the 180-degree rotated kernel
    k = np.arange(1, 10, dtype=np.float64).reshape(1, 1, 3, 3)
    g = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    gi, _, _ = T.conv2d_backward(g, np.zeros((1, 1, 2, 2)), k, "zero")
    # by hand: gi[p, q] = sum_{y, x} g[y, x] * k[p - y + 1, q - x + 1]
    expected = np.array([[1 * 5 + 2 * 4 + 3 * 2 + 4 * 1, 1 * 6 + 2 * 5 + 3 * 3 + 4 * 2],
                         [1 * 8 + 2 * 7 + 3 * 5 + 4 * 4, 1 * 9 + 2 * 8 + 3 * 6 + 4 * 5]])
    np.testing.assert_array_equal(gi[0, 0], expected)
    rotated = k[0, 0, ::-1, ::-1]
    via_rotation = T.conv2d_forward(g, rotated[None, None].copy(), np.zeros(1), "zero")
    np.testing.assert_array_equal(gi, via_rotation)


@pytest.mark.parametrize("padding", ["zero", "reflection"])
def test_conv_gradients_finite_difference(rng, padding):
    x = rng.standard_normal((2, 4, 6, 6))
    k = rng.standard_normal((3, 4, 3, 3))
    b = rng.standard_normal(3)
    g = rng.standard_normal((2, 3, 6, 6))
    gi, gk, gb = T.conv2d_backward(f32(g), f32(x), f32(k), padding)

    def obj(xx, kk, bb):
        return float(np.sum(g * T.conv2d_forward(xx, kk, bb, padding)))

    assert rel_error(gi, numeric_grad(lambda v: obj(v, k, b), x)) < REL_TOL
    assert rel_error(gk, numeric_grad(lambda v: obj(x, v, b), k)) < REL_TOL
    assert rel_error(gb, numeric_grad(lambda v: obj(x, k, v), b)) < REL_TOL


def test_padding_invariants(rng):
    const = np.full((1, 2, 4, 5), 3.5)
    np.testing.assert_array_equal(T.pad(const, "reflection"), np.full((1, 2, 6, 7), 3.5))
    assert not T.pad(np.zeros((1, 1, 3, 3)), "zero").any()
    x = rng.standard_normal((1, 1, 4, 4))
    p = T.pad(x, "reflection")
    assert p[0, 0, 0, 1] == x[0, 0, 1, 0]  # index -1 maps to 1
    assert p[0, 0, 5, 5] == x[0, 0, 2, 2]


@pytest.mark.parametrize("padding", ["zero", "reflection"])
def test_pad_backward_is_adjoint(rng, padding):
    x = rng.standard_normal((2, 2, 3, 4))
    g = rng.standard_normal((2, 2, 5, 6))
    lhs = np.sum(T.pad(x, padding) * g)
    rhs = np.sum(x * T.pad_backward(g, padding))
    assert abs(lhs - rhs) < 1e-12


# -- batch norm --------------------------------------------------------------


def test_batchnorm_eval_identity(rng):
    x = f32(rng.standard_normal((2, 3, 4, 4)))
    out, m, v = T.batchnorm_forward(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), "eval")
    np.testing.assert_allclose(out, x, rtol=1e-5, atol=1e-6)
    assert (m == 0).all() and (v == 1).all()


def test_batchnorm_train_normalizes(rng):
    x = f32(rng.normal(3.0, 2.0, (4, 3, 5, 5)))
    out, m, v = T.batchnorm_forward(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), "train")
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-4)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-4)
    x64 = x.astype(np.float64)
    np.testing.assert_allclose(m, 0.1 * x64.mean(axis=(0, 2, 3)), rtol=1e-6)
    np.testing.assert_allclose(v, 0.9 + 0.1 * x64.var(axis=(0, 2, 3), ddof=1), rtol=1e-6)


def test_batchnorm_zero_variance_channel_is_finite():
    x = np.ones((2, 1, 3, 3), np.float32)
    out, _, _ = T.batchnorm_forward(x, np.ones(1), np.zeros(1), np.zeros(1), np.ones(1), "train")
    assert np.isfinite(out).all() and not out.any()
    with pytest.raises(ShapeError):
        T.batchnorm_forward(np.ones((1, 1, 1, 1)), np.ones(1), np.zeros(1), np.zeros(1), np.ones(1), "train")


@pytest.mark.parametrize("mode", ["train", "eval"])
def test_batchnorm_gradients_finite_difference(rng, mode):
    x = rng.normal(0.5, 1.5, (2, 4, 6, 6))
    gamma, beta = rng.uniform(0.5, 1.5, 4), rng.standard_normal(4)
    rm, rv = rng.standard_normal(4), rng.uniform(0.5, 2, 4)
    g = rng.standard_normal(x.shape)
    gi, gg, gb = T.batchnorm_backward(f32(g), f32(x), f32(gamma), f32(rm), f32(rv), mode)

    def obj(xx, ga, be):
        return float(np.sum(g * T.batchnorm_forward(xx, ga, be, rm, rv, mode)[0]))

    assert rel_error(gi, numeric_grad(lambda v: obj(v, gamma, beta), x)) < REL_TOL
    assert rel_error(gg, numeric_grad(lambda v: obj(x, v, beta), gamma)) < REL_TOL
    assert rel_error(gb, numeric_grad(lambda v: obj(x, gamma, v), beta)) < REL_TOL


# -- activations -------------------------------------------------------------


def test_activation_values():
    assert T.prelu_forward(np.array([-2.0]), 0.25)[0] == -0.5
    assert T.prelu_forward(np.array([3.0]), 0.25)[0] == 3.0
    assert T.sigmoid_forward(np.array([0.0]))[0] == 0.5
    assert T.tanh_forward(np.array([0.0]))[0] == 0.0
    _, gslope = T.prelu_backward(np.array([1.0]), np.array([-2.0]), 0.25)
    assert gslope == -2.0


def test_sigmoid_extremes_finite():
    out = T.sigmoid_forward(np.array([-1000.0, 1000.0], np.float32))
    assert np.isfinite(out).all() and out[0] == 0 and out[1] == 1


@pytest.mark.parametrize("kind", ["prelu", "tanh", "sigmoid"])
def test_activation_gradients_finite_difference(rng, kind):
    x = rng.standard_normal((2, 4, 6, 6))
    x[np.abs(x) < 0.01] = 0.5  # keep away from the PReLU kink
    slope = 0.25
    g = rng.standard_normal(x.shape)
    out = T.activation_forward(f32(x), kind, np.float32(slope))
    gi, gs = T.activation_backward(f32(g), f32(x), out, kind, np.float32(slope))
    num = numeric_grad(lambda v: float(np.sum(g * T.activation_forward(v, kind, slope))), x)
    assert rel_error(gi, num) < REL_TOL
    if kind == "prelu":
        num_s = numeric_grad(lambda s: float(np.sum(g * T.prelu_forward(x, s[0]))), np.array([slope]))
        assert rel_error(gs, num_s[0]) < REL_TOL
    else:
        assert gs is None


# -- concat ------------------------------------------------------------------


def test_concat_shapes_and_split_round_trip(rng):
    a = f32(rng.standard_normal((1, 64, 5, 6)))
    b = f32(rng.standard_normal((1, 64, 5, 6)))
    c = T.concat_channels(a, b)
    assert c.shape == (1, 128, 5, 6)
    ga, gb = T.split_channels(c, 64)
    np.testing.assert_array_equal(ga, a)
    np.testing.assert_array_equal(gb, b)


def test_concat_errors():
    with pytest.raises(ShapeError):
        T.concat_channels(np.ones((1, 2, 4, 4)), np.ones((1, 2, 4, 5)))
    with pytest.raises(ShapeError):
        T.concat_channels(np.ones((1, 2, 4, 4)), np.ones((1, 0, 4, 4)))


def test_concat_gradient_finite_difference(rng):
    a, b = rng.standard_normal((2, 2, 3, 3)), rng.standard_normal((2, 3, 3, 3))
    g = rng.standard_normal((2, 5, 3, 3))
    ga, gb = T.split_channels(g, 2)
    assert rel_error(ga, numeric_grad(lambda v: float(np.sum(g * T.concat_channels(v, b))), a)) < REL_TOL
    assert rel_error(gb, numeric_grad(lambda v: float(np.sum(g * T.concat_channels(a, v))), b)) < REL_TOL


# -- properties --------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 2), c=st.integers(1, 3),
       h=st.integers(2, 6), w=st.integers(2, 6), padding=st.sampled_from(["zero", "reflection"]))
def test_forward_ops_deterministic(seed, n, c, h, w, padding):
    rng = np.random.default_rng(seed)
    x = f32(rng.standard_normal((n, c, h, w)))
    k = f32(rng.standard_normal((2, c, 3, 3)))
    b = f32(rng.standard_normal(2))
    first = T.conv2d_forward(x, k, b, padding)
    assert np.isfinite(first).all()
    assert first.tobytes() == T.conv2d_forward(x.copy(), k.copy(), b.copy(), padding).tobytes()
    bn1 = T.batchnorm_forward(first, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), "eval")[0]
    bn2 = T.batchnorm_forward(first, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), "eval")[0]
    assert bn1.tobytes() == bn2.tobytes()
