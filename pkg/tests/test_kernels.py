"""Kernel-level tests against independent naive-loop oracles.

The oracles here are written from the mathematical definitions with plain
Python loops and scalar accumulation, on purpose sharing no code with the
package kernels. Frozen constants were computed once from those oracles (or
closed forms) and are asserted directly.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from effmod.errors import ConfigError, NumericalError, PreconditionError
from effmod.kernels import (
    ConvSpec,
    batched_matmul,
    conv2d,
    conv2d_vjp,
    elementwise,
    fuse_modulate,
    gelu,
    gelu_grad,
    global_avg_pool,
    layer_norm,
    pointwise,
    set_validation,
    sigmoid,
    softmax,
)

RNG = np.random.default_rng(20240817)


# ------------------------------------------------------------- oracles


def conv2d_oracle(x, w, b, stride=1, dilation=1, groups=1, pad=0):
    """Direct per-output-pixel accumulation; the definition, slowly."""
    n, c_in, h, wd = x.shape
    c_out, cig, k, _ = w.shape
    xp = np.zeros((n, c_in, h + 2 * pad, wd + 2 * pad), dtype=np.float64)
    xp[:, :, pad : pad + h, pad : pad + wd] = x
    span = dilation * (k - 1) + 1
    oh = (h + 2 * pad - span) // stride + 1
    ow = (wd + 2 * pad - span) // stride + 1
    cog = c_out // groups
    out = np.zeros((n, c_out, oh, ow), dtype=np.float64)
    for ni in range(n):
        for co in range(c_out):
            g = co // cog
            for oi in range(oh):
                for oj in range(ow):
                    acc = 0.0
                    for ci in range(cig):
                        for ki in range(k):
                            for kj in range(k):
                                acc += (
                                    xp[ni, g * cig + ci, oi * stride + ki * dilation,
                                       oj * stride + kj * dilation]
                                    * w[co, ci, ki, kj]
                                )
                    if b is not None:
                        acc += b[co]
                    out[ni, co, oi, oj] = acc
    return out


def matmul_oracle(a, b):
    """Triple loop over the last two axes, python-float accumulation."""
    batch = a.shape[:-2]
    m, kk = a.shape[-2:]
    nn = b.shape[-1]
    out = np.zeros(batch + (m, nn), dtype=np.float64)
    for idx in np.ndindex(*batch):
        for i in range(m):
            for j in range(nn):
                acc = 0.0
                for t in range(kk):
                    acc += float(a[idx + (i, t)]) * float(b[idx + (t, j)])
                out[idx + (i, j)] = acc
    return out


def layer_norm_oracle(x, gamma, beta, eps, axis):
    """Per-slice mean/variance with python floats, then affine."""
    axis = axis % x.ndim
    c = x.shape[axis]
    moved = np.moveaxis(x, axis, -1)
    out = np.empty_like(moved, dtype=np.float64)
    for idx in np.ndindex(*moved.shape[:-1]):
        row = [float(v) for v in moved[idx]]
        mu = sum(row) / c
        var = sum((v - mu) ** 2 for v in row) / c
        inv = 1.0 / math.sqrt(var + eps)
        out[idx] = [gamma[i] * (row[i] - mu) * inv + beta[i] for i in range(c)]
    return np.moveaxis(out, -1, axis)


def softmax_oracle(x, axis):
    moved = np.moveaxis(np.asarray(x, dtype=np.float64), axis, -1)
    out = np.empty_like(moved)
    for idx in np.ndindex(*moved.shape[:-1]):
        row = moved[idx]
        m = float(row.max())
        e = [math.exp(float(v) - m) for v in row]
        s = sum(e)
        out[idx] = [v / s for v in e]
    return np.moveaxis(out, -1, axis)


def rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return np.abs(a - b).max() / denom


# --------------------------------------------------------------- conv2d


def test_conv_ones_same_padding():
    x = np.ones((1, 1, 3, 3))
    w = np.ones((1, 1, 3, 3))
    out = conv2d(x, w, None, ConvSpec(3))
    expected = np.array([[4.0, 6.0, 4.0], [6.0, 9.0, 6.0], [4.0, 6.0, 4.0]])
    np.testing.assert_array_equal(out[0, 0], expected)


def test_conv_identity_1x1():
    x = RNG.normal(size=(2, 3, 5, 5))
    w = np.eye(3).reshape(3, 3, 1, 1)
    out = conv2d(x, w, None, ConvSpec(1))
    np.testing.assert_allclose(out, x, rtol=0, atol=1e-15)


def test_conv_zero_input():
    w = RNG.normal(size=(4, 2, 3, 3))
    out = conv2d(np.zeros((1, 2, 6, 6)), w, None, ConvSpec(3))
    assert not out.any()


@pytest.mark.parametrize(
    "case",
    [
        dict(n=2, c_in=3, c_out=4, h=7, w=6, k=3, stride=1, dilation=1, groups=1, bias=True),
        dict(n=1, c_in=4, c_out=4, h=8, w=8, k=5, stride=1, dilation=1, groups=4, bias=True),
        dict(n=2, c_in=6, c_out=6, h=9, w=9, k=3, stride=1, dilation=3, groups=6, bias=False),
        dict(n=1, c_in=3, c_out=5, h=9, w=8, k=7, stride=4, dilation=1, groups=1, bias=True),
        dict(n=2, c_in=4, c_out=6, h=6, w=7, k=3, stride=2, dilation=1, groups=2, bias=True),
        dict(n=1, c_in=2, c_out=2, h=9, w=9, k=7, stride=1, dilation=3, groups=2, bias=True),
    ],
    ids=["dense", "depthwise5", "depthwise-dil3", "stride4", "grouped", "dw7-dil3"],
)
def test_conv_matches_loop_oracle(case):
    spec = ConvSpec(
        case["k"], stride=case["stride"], dilation=case["dilation"], groups=case["groups"]
    )
    x = RNG.normal(size=(case["n"], case["c_in"], case["h"], case["w"]))
    w = RNG.normal(size=(case["c_out"], case["c_in"] // case["groups"], case["k"], case["k"]))
    b = RNG.normal(size=case["c_out"]) if case["bias"] else None
    got = conv2d(x, w, b, spec)
    want = conv2d_oracle(
        x, w, b, stride=case["stride"], dilation=case["dilation"],
        groups=case["groups"], pad=spec.pad,
    )
    assert rel_err(got, want) <= 1e-10


def test_conv_same_padding_preserves_shape():
    for k, d in [(3, 1), (5, 1), (7, 1), (7, 3), (5, 2)]:
        x = RNG.normal(size=(1, 2, 16, 16))
        w = RNG.normal(size=(2, 2, k, k))
        out = conv2d(x, w, None, ConvSpec(k, dilation=d))
        assert out.shape == x.shape, (k, d)


def test_conv_even_kernel_same_padding_rejected():
    with pytest.raises(ConfigError):
        ConvSpec(4)


def test_conv_explicit_even_kernel_ok():
    x = RNG.normal(size=(1, 1, 8, 8))
    w = RNG.normal(size=(1, 1, 2, 2))
    out = conv2d(x, w, None, ConvSpec(2, stride=2, padding=0))
    want = conv2d_oracle(x, w, None, stride=2, pad=0)
    assert rel_err(out, want) <= 1e-10


def test_conv_shape_errors_name_dimension():
    x = RNG.normal(size=(1, 3, 6, 6))
    w = RNG.normal(size=(4, 2, 3, 3))
    with pytest.raises(PreconditionError, match="channel"):
        conv2d(x, w, None, ConvSpec(3))
    with pytest.raises(PreconditionError, match="kernel"):
        conv2d(x, RNG.normal(size=(4, 3, 5, 5)), None, ConvSpec(3))
    with pytest.raises(PreconditionError, match="4-D"):
        conv2d(x[0], w, None, ConvSpec(3))


def test_conv_input_too_small_rejected():
    x = RNG.normal(size=(1, 1, 3, 3))
    with pytest.raises(PreconditionError):
        conv2d(x, np.ones((1, 1, 5, 5)), None, ConvSpec(5, padding=0))


def test_conv_vjp_matches_finite_differences():
    x = RNG.normal(size=(1, 2, 5, 5))
    w = RNG.normal(size=(3, 2, 3, 3))
    spec = ConvSpec(3)
    go = RNG.normal(size=(1, 3, 5, 5))
    dx, dw, db = conv2d_vjp(x, w, spec, go, need_bias=True)
    eps = 1e-6

    def loss(xx, ww, bb):
        return float((conv2d(xx, ww, bb, spec) * go).sum())

    b0 = np.zeros(3)
    for arr, grad in ((x, dx), (w, dw), (b0, db)):
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in RNG.choice(flat.size, size=min(10, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + eps
            fp = loss(x, w, b0)
            flat[i] = orig - eps
            fm = loss(x, w, b0)
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            assert abs(num - gflat[i]) <= 1e-5 * max(1.0, abs(num))


# ------------------------------------------------------------ pointwise


def test_pointwise_equals_1x1_conv():
    x = RNG.normal(size=(2, 5, 4, 4))
    w = RNG.normal(size=(7, 5))
    b = RNG.normal(size=7)
    got = pointwise(x, w, b)
    want = conv2d(x, w.reshape(7, 5, 1, 1), b, ConvSpec(1))
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_pointwise_rejects_bad_weight():
    with pytest.raises(PreconditionError):
        pointwise(RNG.normal(size=(1, 3, 2, 2)), RNG.normal(size=(4, 5)))


# ------------------------------------------------- gelu, sigmoid, norms


def test_gelu_frozen_values():
    assert gelu(np.array([0.0]))[0] == 0.0
    # 0.5 * (1 + erf(1/sqrt(2))) closed form at double precision
    assert abs(gelu(np.array([1.0]))[0] - 0.8413447460685429) < 1e-12
    assert abs(gelu(np.array([-10.0]))[0]) < 1e-8


def test_gelu_monotone_on_positive_axis():
    xs = np.linspace(0, 6, 200)
    ys = gelu(xs)
    assert (np.diff(ys) > 0).all()


def test_gelu_matches_scalar_oracle():
    x = RNG.normal(size=257) * 3
    want = np.array([0.5 * v * (1 + math.erf(v / math.sqrt(2))) for v in x])
    np.testing.assert_allclose(gelu(x), want, rtol=1e-13, atol=1e-15)


def test_gelu_grad_matches_central_difference():
    x = RNG.normal(size=64)
    eps = 1e-6
    num = (gelu(x + eps) - gelu(x - eps)) / (2 * eps)
    np.testing.assert_allclose(gelu_grad(x), num, rtol=1e-7, atol=1e-9)


def test_sigmoid_range_and_symmetry():
    x = np.array([-800.0, -5.0, 0.0, 5.0, 800.0])
    s = sigmoid(x)
    assert np.isfinite(s).all()
    assert s[2] == 0.5
    np.testing.assert_allclose(s + s[::-1], np.ones_like(s), rtol=0, atol=1e-15)


def test_layer_norm_frozen_example():
    x = np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1, 1)
    out = layer_norm(x, np.ones(3), np.zeros(3), eps=1e-12)
    want = np.array([-1.224745, 0.0, 1.224745])
    np.testing.assert_allclose(out[0, :, 0, 0], want, rtol=0, atol=1e-6)


def test_layer_norm_constant_channel_gives_beta():
    x = np.full((1, 4, 2, 2), 7.0)
    beta = np.array([1.0, 2.0, 3.0, 4.0])
    out = layer_norm(x, np.ones(4), beta)
    np.testing.assert_allclose(out, beta.reshape(1, 4, 1, 1) * np.ones((1, 4, 2, 2)), atol=1e-12)


def test_layer_norm_zero_gamma_gives_beta():
    x = RNG.normal(size=(2, 3, 2, 2))
    beta = RNG.normal(size=3)
    out = layer_norm(x, np.zeros(3), beta)
    np.testing.assert_allclose(out, np.broadcast_to(beta.reshape(1, 3, 1, 1), out.shape))


def test_layer_norm_statistics():
    x = RNG.normal(size=(2, 16, 3, 3)).astype(np.float64) * 3 + 1
    out = layer_norm(x, np.ones(16), np.zeros(16))
    assert np.abs(out.mean(axis=1)).max() < 1e-9
    assert np.abs(out.var(axis=1) - 1.0).max() < 1e-6


def test_layer_norm_matches_loop_oracle():
    for axis, shape in [(1, (2, 5, 3, 3)), (2, (2, 4, 6)), (-1, (3, 7))]:
        x = RNG.normal(size=shape) * 2
        c = shape[axis]
        gamma = RNG.normal(size=c)
        beta = RNG.normal(size=c)
        got = layer_norm(x, gamma, beta, eps=1e-6, axis=axis)
        want = layer_norm_oracle(x, gamma, beta, 1e-6, axis)
        assert rel_err(got, want) <= 1e-10


def test_layer_norm_validates():
    with pytest.raises(PreconditionError):
        layer_norm(RNG.normal(size=(1, 3, 2, 2)), np.ones(4), np.zeros(4))
    with pytest.raises(PreconditionError):
        layer_norm(RNG.normal(size=(1, 3, 2, 2)), np.ones(3), np.zeros(3), eps=0.0)


# -------------------------------------------------------------- softmax


def test_softmax_frozen_values():
    np.testing.assert_allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(softmax(np.array([1000.0, 1000.0])), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(
        softmax(np.array([0.0, math.log(3)])), [0.25, 0.75], rtol=0, atol=1e-12
    )


def test_softmax_rows_sum_to_one():
    x = RNG.normal(size=(3, 4, 6)) * 5
    s = softmax(x, axis=-1)
    np.testing.assert_allclose(s.sum(axis=-1), np.ones((3, 4)), rtol=0, atol=1e-12)
    assert (s >= 0).all()


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8), st.floats(-100, 100))
@settings(max_examples=60, deadline=None)
def test_softmax_shift_invariance(row, shift):
    x = np.array(row)
    np.testing.assert_allclose(softmax(x), softmax(x + shift), rtol=0, atol=1e-12)


def test_softmax_matches_loop_oracle():
    for axis, shape in [(-1, (2, 3, 5)), (1, (4, 6)), (0, (5, 2))]:
        x = RNG.normal(size=shape) * 4
        assert rel_err(softmax(x, axis=axis), softmax_oracle(x, axis)) <= 1e-10


# --------------------------------------------------------------- matmul


def test_matmul_identity_and_zero():
    b = RNG.normal(size=(2, 3))
    np.testing.assert_array_equal(batched_matmul(np.eye(2), b), b)
    assert not batched_matmul(np.zeros((3, 4)), RNG.normal(size=(4, 2))).any()


def test_matmul_matches_loop_oracle():
    a = RNG.normal(size=(3, 4))
    b = RNG.normal(size=(4, 2))
    assert np.abs(batched_matmul(a, b) - matmul_oracle(a, b)).max() < 1e-12
    a = RNG.normal(size=(2, 3, 4, 5))
    b = RNG.normal(size=(2, 3, 5, 2))
    assert rel_err(batched_matmul(a, b), matmul_oracle(a, b)) <= 1e-10


def test_matmul_strict_batch_and_inner_dims():
    with pytest.raises(PreconditionError):
        batched_matmul(RNG.normal(size=(2, 3, 4)), RNG.normal(size=(3, 4, 5)))
    with pytest.raises(PreconditionError):
        batched_matmul(RNG.normal(size=(3, 4)), RNG.normal(size=(3, 4)))
    with pytest.raises(PreconditionError):
        batched_matmul(RNG.normal(size=4), RNG.normal(size=(4, 2)))


# -------------------------------------------------------- fuse_modulate


def test_fuse_modulate_frozen_example():
    ctx = np.zeros((1, 2, 1, 1))
    ctx[0, 0] = 2.0
    ctx[0, 1] = 3.0
    v = np.ones((1, 4, 1, 1))
    out = fuse_modulate(ctx, v)
    np.testing.assert_array_equal(out[0, :, 0, 0], [2.0, 3.0, 2.0, 3.0])


def test_fuse_modulate_r1_is_elementwise():
    ctx = RNG.normal(size=(2, 3, 4, 4))
    v = RNG.normal(size=(2, 3, 4, 4))
    np.testing.assert_array_equal(fuse_modulate(ctx, v), ctx * v)


def test_fuse_modulate_index_mapping_oracle():
    ctx = RNG.normal(size=(2, 3, 4, 5))
    v = RNG.normal(size=(2, 12, 4, 5))
    out = fuse_modulate(ctx, v)
    for i in range(12):
        np.testing.assert_array_equal(out[:, i], v[:, i] * ctx[:, i % 3])


@given(
    st.integers(1, 3), st.integers(1, 4), st.integers(1, 4),
    st.integers(1, 5), st.integers(1, 5),
    st.sampled_from(["mul", "sum"]),
)
@settings(max_examples=40, deadline=None)
def test_fuse_modulate_modes_bit_identical(n, c, r, h, w, combine):
    rng = np.random.default_rng((n, c, r, h, w))
    ctx = rng.normal(size=(n, c, h, w))
    v = rng.normal(size=(n, r * c, h, w))
    a = fuse_modulate(ctx, v, mode="repeat", combine=combine)
    b = fuse_modulate(ctx, v, mode="reshape", combine=combine)
    assert a.tobytes() == b.tobytes()


def test_fuse_modulate_rejects_bad_shapes():
    with pytest.raises(PreconditionError):
        fuse_modulate(RNG.normal(size=(1, 3, 2, 2)), RNG.normal(size=(1, 4, 2, 2)))
    with pytest.raises(PreconditionError):
        fuse_modulate(RNG.normal(size=(1, 2, 2, 2)), RNG.normal(size=(1, 4, 3, 3)))
    with pytest.raises(ConfigError):
        fuse_modulate(
            RNG.normal(size=(1, 2, 2, 2)), RNG.normal(size=(1, 4, 2, 2)), mode="inplace"
        )


# ------------------------------------------------- pool and elementwise


def test_global_avg_pool_frozen_values():
    out = global_avg_pool(np.full((1, 2, 3, 3), 5.0))
    np.testing.assert_array_equal(out, np.full((1, 2, 1, 1), 5.0))
    x = np.array([[1.0, 3.0], [5.0, 7.0]]).reshape(1, 1, 2, 2)
    assert global_avg_pool(x)[0, 0, 0, 0] == 4.0
    assert not global_avg_pool(np.zeros((2, 3, 4, 4))).any()


def test_elementwise_identities():
    x = RNG.normal(size=(1, 2, 3, 3))
    np.testing.assert_array_equal(elementwise(x, np.ones_like(x)), x)
    np.testing.assert_array_equal(elementwise(x, np.zeros_like(x), op="add"), x)
    assert not elementwise(np.zeros_like(x), x).any()
    with pytest.raises(PreconditionError):
        elementwise(x, RNG.normal(size=(1, 2, 3, 4)))
    with pytest.raises(ConfigError):
        elementwise(x, x, op="div")


# ------------------------------------------------------------ validation


def test_validation_toggle_catches_nonfinite():
    x = np.array([[np.inf]]).reshape(1, 1, 1, 1)
    w = np.ones((1, 1, 1, 1))
    set_validation(True)
    try:
        with pytest.raises(NumericalError):
            conv2d(x, w, None, ConvSpec(1))
    finally:
        set_validation(False)
    conv2d(x, w, None, ConvSpec(1))  # no error when validation is off
