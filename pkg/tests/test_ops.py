"""Dense kernels vs loop oracles: convolution, pooling, BN, and the rest."""

import numpy as np
import pytest

from ssanet import (
    Conv2dKernel,
    DimensionError,
    TemporalPoolSpec,
    conv2d_framewise,
    conv2d_framewise_backward,
    global_avg_pool,
    linear,
    max_pool3d,
    max_pool3d_backward,
    relu,
    set_num_threads,
    temporal_max_pool,
    temporal_max_pool_backward,
)
from ssanet.ops import (
    RunningStats,
    batch_norm,
    batch_norm_backward,
    batch_norm_forward,
    check_feature_map,
    feature_map,
    global_avg_pool_backward,
    linear_backward,
    relu_backward,
)
from ssanet.training import op_gradient_errors

from conftest import conv_oracle, pool3d_oracle, rand_map


# ------------------------------------------------------------------ convolution

def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(0)
    cases = [
        # (c_in, c_out, k, stride, padding, groups, bias)
        (1, 1, 1, 1, 0, 1, False),
        (3, 4, 3, 1, 1, 1, True),
        (4, 6, 3, 2, 1, 2, True),
        (8, 8, 3, 1, 1, 4, False),
        (2, 5, 5, 1, 2, 1, True),
        (6, 6, 1, 2, 0, 3, False),
        (4, 4, 3, 2, 0, 1, True),
    ]
    for c_in, c_out, k, stride, padding, groups, bias in cases:
        x = rand_map(rng, (2, c_in, 3, 9, 8), np.float64)
        w = rand_map(rng, (c_out, c_in // groups, k, k), np.float64)
        b = rand_map(rng, (c_out,), np.float64) if bias else None
        kern = Conv2dKernel(w, b, stride=stride, padding=padding, groups=groups)
        np.testing.assert_allclose(
            conv2d_framewise(x, kern),
            conv_oracle(x, w, b, stride, padding, groups),
            rtol=1e-10, atol=1e-10,
        )


def test_conv_scalar_kernel_scales_input():
    rng = np.random.default_rng(1)
    x = rand_map(rng, (1, 1, 2, 4, 4))
    kern = Conv2dKernel(np.array([[[[2.0]]]], dtype=np.float32))
    np.testing.assert_array_equal(conv2d_framewise(x, kern), 2.0 * x)


def test_conv_delta_kernel_is_identity():
    rng = np.random.default_rng(2)
    x = rand_map(rng, (2, 1, 3, 5, 5))
    w = np.zeros((1, 1, 3, 3), dtype=np.float32)
    w[0, 0, 1, 1] = 1.0
    out = conv2d_framewise(x, Conv2dKernel(w, padding=1))
    np.testing.assert_array_equal(out, x)


def test_conv_treats_frames_independently():
    # a framewise kernel must commute with any shuffle of the frame axis
    rng = np.random.default_rng(3)
    x = rand_map(rng, (2, 3, 6, 8, 8))
    w = rand_map(rng, (4, 3, 3, 3))
    kern = Conv2dKernel(w, padding=1)
    perm = rng.permutation(6)
    np.testing.assert_array_equal(
        conv2d_framewise(x[:, :, perm], kern), conv2d_framewise(x, kern)[:, :, perm]
    )


def test_conv_kernel_validation():
    with pytest.raises(DimensionError):
        Conv2dKernel(np.zeros((4, 2, 3, 2), dtype=np.float32))  # not square
    with pytest.raises(DimensionError):
        Conv2dKernel(np.zeros((4, 2, 3), dtype=np.float32))  # missing an axis
    with pytest.raises(DimensionError):
        Conv2dKernel(np.zeros((5, 2, 3, 3), dtype=np.float32), groups=2)
    with pytest.raises(DimensionError):
        Conv2dKernel(np.zeros((4, 2, 3, 3), dtype=np.float32), stride=0)
    with pytest.raises(DimensionError):
        Conv2dKernel(np.zeros((4, 2, 3, 3), dtype=np.float32), padding=-1)
    with pytest.raises(DimensionError):
        Conv2dKernel(
            np.zeros((4, 2, 3, 3), dtype=np.float32),
            bias=np.zeros(3, dtype=np.float32),
        )


def test_conv_input_validation():
    kern = Conv2dKernel(np.zeros((4, 2, 3, 3), dtype=np.float32), padding=1)
    with pytest.raises(DimensionError):
        conv2d_framewise(np.zeros((1, 3, 2, 8, 8), dtype=np.float32), kern)
    with pytest.raises(DimensionError):
        conv2d_framewise(np.zeros((1, 2, 8, 8), dtype=np.float32), kern)
    x = np.zeros((1, 2, 2, 8, 8), dtype=np.float32)
    good = conv2d_framewise(x, kern)
    with pytest.raises(DimensionError):
        conv2d_framewise_backward(x, kern, np.zeros_like(good)[:, :, :, :-1])


def test_conv_param_count():
    w = np.zeros((8, 4, 3, 3), dtype=np.float32)
    assert Conv2dKernel(w).param_count() == 8 * 4 * 9
    assert Conv2dKernel(w, bias=np.zeros(8, dtype=np.float32)).param_count() == 8 * 4 * 9 + 8


def test_conv_backward_matches_finite_differences():
    errs = op_gradient_errors("conv", seed=5)
    assert max(errs.values()) < 1e-4


# ---------------------------------------------------------------------- pooling

def test_temporal_pool_hand_case():
    x = np.asarray([1.0, 3.0, 2.0, 5.0], np.float32).reshape(1, 1, 4, 1, 1)
    out, idx = temporal_max_pool(x, TemporalPoolSpec(2, 2))
    np.testing.assert_array_equal(out.reshape(-1), [3.0, 5.0])
    g = np.asarray([10.0, 20.0], np.float32).reshape(1, 1, 2, 1, 1)
    grad = temporal_max_pool_backward(idx, g)
    np.testing.assert_array_equal(grad.reshape(-1), [0.0, 10.0, 0.0, 20.0])


def test_pool_ties_pick_earliest_position():
    x = np.zeros((1, 1, 4, 1, 1), dtype=np.float32)
    out, idx = temporal_max_pool(x, TemporalPoolSpec(4, 4))
    grad = temporal_max_pool_backward(idx, np.ones((1, 1, 1, 1, 1), dtype=np.float32))
    np.testing.assert_array_equal(grad.reshape(-1), [1.0, 0.0, 0.0, 0.0])


def test_pool3d_matches_loop_oracle():
    rng = np.random.default_rng(6)
    for _ in range(15):
        f, h, w = (int(rng.integers(2, 7)) for _ in range(3))
        kernel = tuple(int(rng.integers(1, s + 1)) for s in (f, h, w))
        stride = tuple(int(rng.integers(1, k + 1)) for k in kernel)
        x = rand_map(rng, (2, 3, f, h, w))
        out, _ = max_pool3d(x, kernel, stride)
        np.testing.assert_array_equal(out, pool3d_oracle(x, kernel, stride))


def test_pool_output_depth_formula():
    rng = np.random.default_rng(7)
    for _ in range(100):
        f = int(rng.integers(1, 20))
        k = int(rng.integers(1, f + 1))
        s = int(rng.integers(1, k + 2))
        x = rand_map(rng, (1, 1, f, 2, 2))
        out, _ = temporal_max_pool(x, TemporalPoolSpec(k, s))
        assert out.shape[2] == (f - k) // s + 1


def test_pool_backward_scatters_every_gradient():
    rng = np.random.default_rng(8)
    x = rand_map(rng, (2, 2, 6, 5, 5))
    out, idx = max_pool3d(x, (2, 2, 2), (2, 2, 2))
    g = rand_map(rng, out.shape)
    back = max_pool3d_backward(idx, g)
    assert back.shape == x.shape
    # non-overlapping windows: the scattered mass equals the incoming mass
    assert np.isclose(back.sum(), g.sum(), rtol=1e-5)


def test_pool_kernel_larger_than_input_raises():
    x = np.zeros((1, 1, 2, 4, 4), dtype=np.float32)
    with pytest.raises(DimensionError):
        max_pool3d(x, (3, 1, 1), (1, 1, 1))
    with pytest.raises(DimensionError):
        temporal_max_pool(x, TemporalPoolSpec(5, 1))


def test_pool_backward_matches_finite_differences():
    errs = op_gradient_errors("pool", seed=9)
    assert max(errs.values()) < 1e-4


# --------------------------------------------------------------- batch norm

def test_bn_training_matches_two_pass_oracle():
    rng = np.random.default_rng(10)
    x = rand_map(rng, (3, 4, 5, 6, 6), np.float64, scale=2.0)
    gamma = rand_map(rng, (4,), np.float64)
    beta = rand_map(rng, (4,), np.float64)
    stats = RunningStats.create(4, np.float64)
    y = batch_norm(x, gamma, beta, stats, training=True)
    mean = x.mean(axis=(0, 2, 3, 4))
    var = x.var(axis=(0, 2, 3, 4))
    want = (x - mean.reshape(1, 4, 1, 1, 1)) / np.sqrt(var + 1e-5).reshape(1, 4, 1, 1, 1)
    want = want * gamma.reshape(1, 4, 1, 1, 1) + beta.reshape(1, 4, 1, 1, 1)
    np.testing.assert_allclose(y, want, rtol=1e-12, atol=1e-12)


def test_bn_running_stat_update_rule():
    rng = np.random.default_rng(11)
    x = rand_map(rng, (4, 3, 2, 4, 4), np.float64)
    stats = RunningStats(np.full(3, 0.5), np.full(3, 2.0))
    batch_norm(x, np.ones(3), np.zeros(3), stats, training=True, momentum=0.1)
    count = 4 * 2 * 4 * 4
    unbiased = x.var(axis=(0, 2, 3, 4)) * count / (count - 1)
    np.testing.assert_allclose(stats.mean, 0.9 * 0.5 + 0.1 * x.mean(axis=(0, 2, 3, 4)))
    np.testing.assert_allclose(stats.var, 0.9 * 2.0 + 0.1 * unbiased)


def test_bn_eval_uses_running_stats_and_keeps_them():
    rng = np.random.default_rng(12)
    x = rand_map(rng, (2, 3, 2, 4, 4), np.float64)
    stats = RunningStats(np.array([1.0, -1.0, 0.0]), np.array([4.0, 1.0, 9.0]))
    before = (stats.mean.copy(), stats.var.copy())
    y = batch_norm(x, np.ones(3), np.zeros(3), stats, training=False)
    want = (x - stats.mean.reshape(1, 3, 1, 1, 1)) / np.sqrt(
        stats.var.reshape(1, 3, 1, 1, 1) + 1e-5
    )
    np.testing.assert_allclose(y, want, rtol=1e-12)
    np.testing.assert_array_equal(stats.mean, before[0])
    np.testing.assert_array_equal(stats.var, before[1])


def test_bn_normalizes_each_channel():
    rng = np.random.default_rng(13)
    for _ in range(100):
        c = int(rng.integers(1, 5))
        shape = (int(rng.integers(2, 5)), c, int(rng.integers(1, 4)),
                 int(rng.integers(2, 6)), int(rng.integers(2, 6)))
        x = rand_map(rng, shape, np.float64, scale=float(rng.uniform(0.5, 4.0)))
        stats = RunningStats.create(c, np.float64)
        y = batch_norm(x, np.ones(c), np.zeros(c), stats, training=True)
        np.testing.assert_allclose(y.mean(axis=(0, 2, 3, 4)), 0.0, atol=1e-10)
        np.testing.assert_allclose(y.var(axis=(0, 2, 3, 4)), 1.0, atol=1e-4)


def test_bn_rejects_single_element_batches():
    stats = RunningStats.create(2, np.float64)
    x = np.zeros((1, 2, 1, 1, 1))
    with pytest.raises(DimensionError):
        batch_norm(x, np.ones(2), np.zeros(2), stats, training=True)


def test_bn_backward_matches_finite_differences():
    errs = op_gradient_errors("bn", seed=14)
    assert max(errs.values()) < 1e-4


def test_bn_backward_eval_mode_is_elementwise():
    rng = np.random.default_rng(15)
    x = rand_map(rng, (2, 3, 2, 4, 4), np.float64)
    gamma = rand_map(rng, (3,), np.float64)
    stats = RunningStats(np.zeros(3), np.ones(3) * 2.0)
    _, cache = batch_norm_forward(x, gamma, np.zeros(3), stats, training=False)
    g = rand_map(rng, x.shape, np.float64)
    gi, ggamma, gbeta = batch_norm_backward(cache, g)
    scale = gamma / np.sqrt(2.0 + 1e-5)
    np.testing.assert_allclose(gi, g * scale.reshape(1, 3, 1, 1, 1), rtol=1e-12)
    np.testing.assert_allclose(gbeta, g.sum(axis=(0, 2, 3, 4)), rtol=1e-12)


# --------------------------------------------------- relu / pooling / dense

def test_relu_forward_and_mask():
    x = np.asarray([[-1.0, 0.0], [2.0, -3.0]], np.float32).reshape(1, 1, 1, 2, 2)
    np.testing.assert_array_equal(relu(x).reshape(-1), [0.0, 0.0, 2.0, 0.0])
    g = np.ones_like(x)
    np.testing.assert_array_equal(relu_backward(x, g).reshape(-1), [0.0, 0.0, 1.0, 0.0])


def test_global_avg_pool_is_mean_over_clip():
    rng = np.random.default_rng(16)
    x = rand_map(rng, (2, 5, 3, 4, 4), np.float64)
    np.testing.assert_allclose(global_avg_pool(x), x.mean(axis=(2, 3, 4)), rtol=1e-12)
    g = rand_map(rng, (2, 5), np.float64)
    back = global_avg_pool_backward(x.shape, g)
    np.testing.assert_allclose(back, np.broadcast_to(g.reshape(2, 5, 1, 1, 1) / 48, x.shape))


def test_linear_matches_matmul():
    rng = np.random.default_rng(17)
    x = rng.standard_normal((6, 10))
    w = rng.standard_normal((10, 4))
    b = rng.standard_normal(4)
    np.testing.assert_allclose(linear(x, w, b), x @ w + b, rtol=1e-12)
    g = rng.standard_normal((6, 4))
    grads = linear_backward(x, w, g)
    np.testing.assert_allclose(grads.grad_input, g @ w.T, rtol=1e-12)
    np.testing.assert_allclose(grads.grad_weights, x.T @ g, rtol=1e-12)
    np.testing.assert_allclose(grads.grad_bias, g.sum(axis=0), rtol=1e-12)


def test_linear_backward_matches_finite_differences():
    errs = op_gradient_errors("linear", seed=18)
    assert max(errs.values()) < 1e-4


# ------------------------------------------------------------------ validation

def test_feature_map_checks():
    with pytest.raises(DimensionError):
        check_feature_map(np.zeros((2, 3, 4, 5), dtype=np.float32))
    with pytest.raises(DimensionError):
        check_feature_map(np.zeros((1, 1, 1, 1, 1), dtype=np.int32))
    with pytest.raises(DimensionError):
        check_feature_map(np.zeros((1, 1, 1, 1, 1), dtype=np.float16))
    check_feature_map(np.zeros((1, 1, 1, 1, 1), dtype=np.float64))


def test_feature_map_builder():
    x = feature_map([[[[[1, 2], [3, 4]]]]])
    assert x.shape == (1, 1, 1, 2, 2)
    assert x.dtype == np.float32


# ------------------------------------------------------------------- threading

def test_threaded_forward_is_bitwise_identical():
    from ssanet import ssa_forward

    rng = np.random.default_rng(19)
    x = rand_map(rng, (7, 3, 6, 10, 10))
    w = rand_map(rng, (5, 3, 3, 3))
    kern = Conv2dKernel(w, padding=1)
    set_num_threads(1)
    conv_one = conv2d_framewise(x, kern)
    mix_one = ssa_forward(x)
    set_num_threads(4)
    np.testing.assert_array_equal(conv2d_framewise(x, kern), conv_one)
    np.testing.assert_array_equal(ssa_forward(x), mix_one)


@pytest.mark.parametrize("dtype,rtol", [(np.float64, 1e-6), (np.float32, 1e-3)])
def test_threaded_weight_grads_stay_close(dtype, rtol):
    # weight gradients sum over batch chunks, so only near-equality is promised
    rng = np.random.default_rng(20)
    x = rand_map(rng, (8, 3, 4, 8, 8), dtype)
    w = rand_map(rng, (6, 3, 3, 3), dtype)
    b = rand_map(rng, (6,), dtype)
    kern = Conv2dKernel(w, b, padding=1)
    g = rand_map(rng, conv2d_framewise(x, kern).shape, dtype)
    set_num_threads(1)
    one = conv2d_framewise_backward(x, kern, g)
    set_num_threads(4)
    many = conv2d_framewise_backward(x, kern, g)
    np.testing.assert_array_equal(many.grad_input, one.grad_input)
    np.testing.assert_allclose(many.grad_weights, one.grad_weights, rtol=rtol, atol=rtol)
    np.testing.assert_allclose(many.grad_bias, one.grad_bias, rtol=rtol, atol=rtol)


def test_thread_count_validation():
    with pytest.raises(ValueError):
        set_num_threads(0)
