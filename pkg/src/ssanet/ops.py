"""Core tensor operations on 5-D feature maps.

A feature map is a dense C-contiguous array of shape (n, c, f, h, w):
batch, channels, frames, height, width.  Production code uses float32;
gradient checking uses float64.  Every op is a pure function of its inputs
(``batch_norm`` additionally mutates the running stats passed to it) and
returns arrays of the same dtype as its input.

Spatial convolution here is strictly framewise: kernels have no temporal
extent, so each frame is convolved independently with shared weights.
Cross-frame mixing is the job of the temporal layers (see ``ssa``), not of
the convolutions.

Operations may split work over the batch axis when ``set_num_threads`` has
raised the thread count.  Forward results are bitwise identical to the
serial path; accumulated weight gradients may differ by floating-point
reassociation, within 1e-6 relative error for float64 data and about 1e-3
for float32.  Keep the default single thread for golden or
reproducibility-sensitive runs.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

_num_threads = 1


def set_num_threads(n: int) -> None:
    """Set the batch-axis parallelism level for subsequent op calls."""
    global _num_threads
    if int(n) < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    _num_threads = int(n)


def get_num_threads() -> int:
    return _num_threads


def _batch_slices(n: int, parts: int) -> list[slice]:
    parts = min(parts, n)
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _map_batch(fn, n: int) -> list:
    """Apply fn(slice) over batch chunks, in order, possibly on threads."""
    slices = _batch_slices(n, _num_threads)
    if len(slices) == 1:
        return [fn(slices[0])]
    with ThreadPoolExecutor(max_workers=len(slices)) as pool:
        return list(pool.map(fn, slices))


def check_feature_map(x: np.ndarray, name: str = "x") -> None:
    """Raise DimensionError unless x is a floating 5-D (n,c,f,h,w) array."""
    if not isinstance(x, np.ndarray):
        raise DimensionError(f"{name} must be a numpy array, got {type(x).__name__}")
    if x.ndim != 5:
        raise DimensionError(
            f"{name} must be 5-D (n, c, f, h, w), got shape {x.shape}"
        )
    if x.dtype not in (np.float32, np.float64):
        raise DimensionError(f"{name} must be float32 or float64, got {x.dtype}")


def feature_map(data, dtype=np.float32) -> np.ndarray:
    """Build a contiguous 5-D feature map from array-like data."""
    x = np.ascontiguousarray(data, dtype=dtype)
    check_feature_map(x)
    return x


@dataclass
class LayerGradients:
    """Gradients returned by a parametric op's backward pass."""

    grad_input: np.ndarray
    grad_weights: np.ndarray | None = None
    grad_bias: np.ndarray | None = None


# ---------------------------------------------------------------------------
# framewise 2-D convolution


@dataclass
class Conv2dKernel:
    """Weights for a framewise 2-D convolution.

    ``weights`` has shape (c_out, c_in_per_group, k, k).  There is no
    temporal axis at all: the kernel is 1 x k x k by construction, so no
    weight can index across frames.  ``bias`` is optional with shape
    (c_out,).  ``stride`` and ``padding`` act on the spatial axes only,
    and ``groups`` partitions channels as in grouped/cardinality convs.
    """

    weights: np.ndarray
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        w = self.weights
        if not isinstance(w, np.ndarray) or w.ndim != 4:
            raise DimensionError(
                "conv weights must be a 4-D (c_out, c_in_per_group, k, k) array"
            )
        if w.shape[2] != w.shape[3]:
            raise DimensionError(f"conv kernel must be square, got {w.shape[2:]}")
        if self.stride < 1:
            raise DimensionError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise DimensionError(f"padding must be >= 0, got {self.padding}")
        if self.groups < 1 or w.shape[0] % self.groups != 0:
            raise DimensionError(
                f"groups={self.groups} must divide c_out={w.shape[0]}"
            )
        if self.bias is not None and self.bias.shape != (w.shape[0],):
            raise DimensionError(
                f"bias shape {self.bias.shape} does not match c_out={w.shape[0]}"
            )

    @property
    def c_out(self) -> int:
        return self.weights.shape[0]

    @property
    def c_in(self) -> int:
        return self.weights.shape[1] * self.groups

    @property
    def k(self) -> int:
        return self.weights.shape[2]

    def param_count(self) -> int:
        n = self.weights.size
        if self.bias is not None:
            n += self.bias.size
        return n


def _window_view(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Read-only sliding-window view (N, C, oh, ow, k, k) of padded input."""
    n, c, hp, wp = xp.shape
    oh = (hp - k) // stride + 1
    ow = (wp - k) // stride + 1
    sn, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, oh, ow, k, k),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )


def _conv_geometry(x: np.ndarray, kernel: Conv2dKernel):
    check_feature_map(x)
    n, c, f, h, w = x.shape
    if c != kernel.c_in:
        raise DimensionError(
            f"input has {c} channels but kernel expects {kernel.c_in}"
        )
    k, s, p = kernel.k, kernel.stride, kernel.padding
    oh = (h + 2 * p - k) // s + 1
    ow = (w + 2 * p - k) // s + 1
    if h + 2 * p < k or w + 2 * p < k or oh < 1 or ow < 1:
        raise DimensionError(
            f"kernel {k}x{k} with padding {p} does not fit input {h}x{w}"
        )
    return n, c, f, h, w, k, s, p, oh, ow


def _im2col(frames: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    """(N, C, H, W) -> (N*oh*ow, C*k*k) patch matrix."""
    if padding:
        frames = np.pad(
            frames, ((0, 0), (0, 0), (padding, padding), (padding, padding))
        )
    win = _window_view(frames, k, stride)
    n, c, oh, ow = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * k * k)


def _col2im(cols, n, c, h, w, k, stride, padding, oh, ow, dtype):
    """Scatter-add (N*oh*ow, C*k*k) patch gradients back onto the input."""
    hp, wp = h + 2 * padding, w + 2 * padding
    gx = np.zeros((n, c, hp, wp), dtype=dtype)
    g = cols.reshape(n, oh, ow, c, k, k).transpose(0, 3, 1, 2, 4, 5)
    for u in range(k):
        for v in range(k):
            gx[
                :,
                :,
                u : u + stride * (oh - 1) + 1 : stride,
                v : v + stride * (ow - 1) + 1 : stride,
            ] += g[:, :, :, :, u, v]
    if padding:
        gx = gx[:, :, padding : padding + h, padding : padding + w]
    return gx


def _grouped_matmul(cols: np.ndarray, kernel: Conv2dKernel) -> np.ndarray:
    """(rows, C*k*k) x grouped weights -> (rows, c_out)."""
    g = kernel.groups
    k = kernel.k
    co_g = kernel.c_out // g
    ci_g = kernel.weights.shape[1]
    wmat = kernel.weights.reshape(g, co_g, ci_g * k * k)
    if g == 1:
        return cols @ wmat[0].T
    cols_g = cols.reshape(cols.shape[0], g, ci_g * k * k)
    out = np.empty((cols.shape[0], g, co_g), dtype=cols.dtype)
    for i in range(g):
        out[:, i] = cols_g[:, i] @ wmat[i].T
    return out.reshape(cols.shape[0], g * co_g)


def conv2d_framewise(x: np.ndarray, kernel: Conv2dKernel) -> np.ndarray:
    """Convolve each frame of x with a shared 2-D kernel.

    Computes cross-correlation (no kernel flip) with symmetric zero
    padding, returning (n, c_out, f, oh, ow).  Frames never mix: the
    output at frame i depends on input frame i alone.
    """
    n, c, f, h, w, k, s, p, oh, ow = _conv_geometry(x, kernel)

    def run(sl: slice) -> np.ndarray:
        xs = x[sl]
        nn = xs.shape[0]
        frames = np.ascontiguousarray(xs.transpose(0, 2, 1, 3, 4)).reshape(
            nn * f, c, h, w
        )
        cols = _im2col(frames, k, s, p)
        out = _grouped_matmul(cols, kernel)
        out = out.reshape(nn, f, oh, ow, kernel.c_out).transpose(0, 4, 1, 2, 3)
        return np.ascontiguousarray(out)

    y = np.concatenate(_map_batch(run, n), axis=0) if n else np.zeros(
        (0, kernel.c_out, f, oh, ow), dtype=x.dtype
    )
    if kernel.bias is not None:
        y += kernel.bias.reshape(1, -1, 1, 1, 1)
    return y


def conv2d_framewise_backward(
    x: np.ndarray, kernel: Conv2dKernel, grad_out: np.ndarray
) -> LayerGradients:
    """Gradients of conv2d_framewise w.r.t. input, weights, and bias."""
    n, c, f, h, w, k, s, p, oh, ow = _conv_geometry(x, kernel)
    expect = (n, kernel.c_out, f, oh, ow)
    if grad_out.shape != expect:
        raise DimensionError(
            f"grad_out shape {grad_out.shape} does not match output {expect}"
        )
    g = kernel.groups
    co_g = kernel.c_out // g
    ci_g = kernel.weights.shape[1]
    wmat = kernel.weights.reshape(g, co_g, ci_g * k * k)

    def run(sl: slice):
        xs = x[sl]
        gs = grad_out[sl]
        nn = xs.shape[0]
        frames = np.ascontiguousarray(xs.transpose(0, 2, 1, 3, 4)).reshape(
            nn * f, c, h, w
        )
        cols = _im2col(frames, k, s, p)
        gout = np.ascontiguousarray(gs.transpose(0, 2, 3, 4, 1)).reshape(
            nn * f * oh * ow, kernel.c_out
        )
        gw = np.empty_like(wmat)
        gcols = np.empty_like(cols)
        if g == 1:
            gw[0] = gout.T @ cols
            gcols[:] = gout @ wmat[0]
        else:
            cols_g = cols.reshape(-1, g, ci_g * k * k)
            gout_g = gout.reshape(-1, g, co_g)
            gcols_g = gcols.reshape(-1, g, ci_g * k * k)
            for i in range(g):
                gw[i] = gout_g[:, i].T @ cols_g[:, i]
                gcols_g[:, i] = gout_g[:, i] @ wmat[i]
        gframes = _col2im(gcols, nn * f, c, h, w, k, s, p, oh, ow, x.dtype)
        gx = np.ascontiguousarray(
            gframes.reshape(nn, f, c, h, w).transpose(0, 2, 1, 3, 4)
        )
        return gx, gw

    parts = _map_batch(run, n)
    grad_input = np.concatenate([p_[0] for p_ in parts], axis=0)
    grad_weights = sum(p_[1] for p_ in parts).reshape(kernel.weights.shape)
    grad_bias = None
    if kernel.bias is not None:
        grad_bias = grad_out.sum(axis=(0, 2, 3, 4))
    return LayerGradients(grad_input, grad_weights, grad_bias)


# ---------------------------------------------------------------------------
# max pooling


@dataclass(frozen=True)
class TemporalPoolSpec:
    """Kernel/stride pair for pooling along the frame axis."""

    kernel: int
    stride: int

    def __post_init__(self):
        if self.kernel < 1:
            raise DimensionError(f"pool kernel must be >= 1, got {self.kernel}")
        if self.stride < 1:
            raise DimensionError(f"pool stride must be >= 1, got {self.stride}")


@dataclass
class PoolIndices:
    """Argmax bookkeeping from a pooling forward pass.

    ``flat`` holds, per output position, the winning input position as a
    flat index into that sample/channel's (f*h*w) block.  Ties resolve to
    the earliest frame, then lowest row, then lowest column.
    """

    input_shape: tuple
    output_shape: tuple
    flat: np.ndarray


def max_pool3d(
    x: np.ndarray, kernel: tuple[int, int, int], stride: tuple[int, int, int]
) -> tuple[np.ndarray, PoolIndices]:
    """Max pool over (f, h, w) windows; returns pooled map and argmax indices."""
    check_feature_map(x)
    n, c, f, h, w = x.shape
    kf, kh, kw = kernel
    sf, sh, sw = stride
    for kk, ss in zip(kernel, stride):
        if kk < 1 or ss < 1:
            raise DimensionError(f"pool kernel/stride must be >= 1, got {kernel}/{stride}")
    if kf > f or kh > h or kw > w:
        raise DimensionError(f"pool kernel {kernel} exceeds input dims {(f, h, w)}")
    of = (f - kf) // sf + 1
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    st = x.strides
    win = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, of, oh, ow, kf, kh, kw),
        strides=(st[0], st[1], st[2] * sf, st[3] * sh, st[4] * sw, st[2], st[3], st[4]),
        writeable=False,
    )
    flat_win = win.reshape(n, c, of, oh, ow, kf * kh * kw)
    loc = flat_win.argmax(axis=-1)
    y = np.take_along_axis(flat_win, loc[..., None], axis=-1)[..., 0]
    df = loc // (kh * kw)
    rem = loc % (kh * kw)
    dh = rem // kw
    dw = rem % kw
    fi = np.arange(of).reshape(1, 1, of, 1, 1) * sf + df
    hi = np.arange(oh).reshape(1, 1, 1, oh, 1) * sh + dh
    wi = np.arange(ow).reshape(1, 1, 1, 1, ow) * sw + dw
    flat = (fi * h + hi) * w + wi
    idx = PoolIndices(x.shape, y.shape, flat.astype(np.int64))
    return np.ascontiguousarray(y), idx


def max_pool3d_backward(indices: PoolIndices, grad_out: np.ndarray) -> np.ndarray:
    """Scatter grad_out to the recorded argmax positions."""
    if grad_out.shape != indices.output_shape:
        raise DimensionError(
            f"grad_out shape {grad_out.shape} does not match pooled "
            f"output {indices.output_shape}"
        )
    n, c, f, h, w = indices.input_shape
    gx = np.zeros((n, c, f * h * w), dtype=grad_out.dtype)
    nn = np.arange(n).reshape(n, 1, 1, 1, 1)
    cc = np.arange(c).reshape(1, c, 1, 1, 1)
    np.add.at(gx, (nn, cc, indices.flat), grad_out)
    return gx.reshape(indices.input_shape)


def temporal_max_pool(
    x: np.ndarray, spec: TemporalPoolSpec
) -> tuple[np.ndarray, PoolIndices]:
    """Max pool along the frame axis only.  Ties pick the earliest frame."""
    return max_pool3d(x, (spec.kernel, 1, 1), (spec.stride, 1, 1))


def temporal_max_pool_backward(
    indices: PoolIndices, grad_out: np.ndarray
) -> np.ndarray:
    return max_pool3d_backward(indices, grad_out)


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class RunningStats:
    """Exponential running mean/variance for one normalization layer."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def create(cls, channels: int, dtype=np.float32) -> "RunningStats":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


_BN_AXES = (0, 2, 3, 4)


def batch_norm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    stats: RunningStats,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
):
    """Per-channel normalization over (n, f, h, w).

    Training mode normalizes with biased batch statistics and folds the
    unbiased batch variance into ``stats`` (mutated in place) with the
    given momentum.  Eval mode normalizes with the stored running stats.
    Returns (y, cache); pass the cache to batch_norm_backward.
    """
    check_feature_map(x)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"gamma/beta must have shape ({c},), got {gamma.shape}/{beta.shape}"
        )
    if training:
        count = x.shape[0] * x.shape[2] * x.shape[3] * x.shape[4]
        if count < 2:
            raise DimensionError(
                "batch_norm training mode needs at least 2 values per channel"
            )
        mu = x.mean(axis=_BN_AXES)
        var = x.var(axis=_BN_AXES)
        stats.mean[:] = (1.0 - momentum) * stats.mean + momentum * mu
        stats.var[:] = (1.0 - momentum) * stats.var + momentum * (
            var * count / (count - 1)
        )
    else:
        mu = stats.mean.astype(x.dtype)
        var = stats.var.astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu.reshape(1, c, 1, 1, 1)) * inv_std.reshape(1, c, 1, 1, 1)
    y = gamma.reshape(1, c, 1, 1, 1) * xhat + beta.reshape(1, c, 1, 1, 1)
    cache = (xhat, inv_std.astype(x.dtype), gamma, training)
    return y.astype(x.dtype, copy=False), cache


def batch_norm(x, gamma, beta, stats, training, momentum=0.1, eps=1e-5):
    """Forward-only convenience wrapper around batch_norm_forward."""
    return batch_norm_forward(x, gamma, beta, stats, training, momentum, eps)[0]


def batch_norm_backward(cache, grad_out: np.ndarray):
    """Returns (grad_input, grad_gamma, grad_beta) for the cached forward."""
    xhat, inv_std, gamma, training = cache
    if grad_out.shape != xhat.shape:
        raise DimensionError(
            f"grad_out shape {grad_out.shape} does not match input {xhat.shape}"
        )
    c = xhat.shape[1]
    grad_gamma = (grad_out * xhat).sum(axis=_BN_AXES)
    grad_beta = grad_out.sum(axis=_BN_AXES)
    gxhat = grad_out * gamma.reshape(1, c, 1, 1, 1)
    scale = inv_std.reshape(1, c, 1, 1, 1)
    if not training:
        return gxhat * scale, grad_gamma, grad_beta
    m = xhat.shape[0] * xhat.shape[2] * xhat.shape[3] * xhat.shape[4]
    sum_g = gxhat.sum(axis=_BN_AXES).reshape(1, c, 1, 1, 1)
    sum_gx = (gxhat * xhat).sum(axis=_BN_AXES).reshape(1, c, 1, 1, 1)
    grad_in = (scale / m) * (m * gxhat - sum_g - xhat * sum_gx)
    return grad_in, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# pointwise / head ops


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    if grad_out.shape != x.shape:
        raise DimensionError(
            f"grad_out shape {grad_out.shape} does not match input {x.shape}"
        )
    return grad_out * (x > 0)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Mean over (f, h, w): (n, c, f, h, w) -> (n, c)."""
    check_feature_map(x)
    return x.mean(axis=(2, 3, 4))


def global_avg_pool_backward(input_shape: tuple, grad_out: np.ndarray) -> np.ndarray:
    n, c, f, h, w = input_shape
    if grad_out.shape != (n, c):
        raise DimensionError(
            f"grad_out shape {grad_out.shape} does not match pooled shape {(n, c)}"
        )
    g = grad_out.reshape(n, c, 1, 1, 1) / float(f * h * w)
    return np.broadcast_to(g, input_shape).astype(grad_out.dtype).copy()


def linear(x: np.ndarray, weights: np.ndarray, bias: np.ndarray | None = None):
    """Affine map (n, d) @ (d, m) + (m,)."""
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise DimensionError(
            f"linear expects (n, d) @ (d, m); got {x.shape} and {weights.shape}"
        )
    y = x @ weights
    if bias is not None:
        if bias.shape != (weights.shape[1],):
            raise DimensionError(
                f"bias shape {bias.shape} does not match output dim {weights.shape[1]}"
            )
        y = y + bias
    return y


def linear_backward(
    x: np.ndarray, weights: np.ndarray, grad_out: np.ndarray, has_bias: bool = True
) -> LayerGradients:
    if grad_out.shape != (x.shape[0], weights.shape[1]):
        raise DimensionError(
            f"grad_out shape {grad_out.shape} does not match "
            f"output {(x.shape[0], weights.shape[1])}"
        )
    grad_input = grad_out @ weights.T
    grad_weights = x.T @ grad_out
    grad_bias = grad_out.sum(axis=0) if has_bias else None
    return LayerGradients(grad_input, grad_weights, grad_bias)
