"""Shift-subtract-add temporal layer.

The layer mixes information across frames without any learnable weights.
For a clip with f frames, frame i (1-based) becomes

    out_i = in_i + (1/f) * sum over earlier frames j of
            ((f - (i - j)) / f) * (in_i - in_j)

so every output frame keeps its own content plus a weighted sum of
differences against earlier frames, with nearby frames weighted more
heavily than distant ones.  Frame 1 passes through unchanged.  The map is
linear, causal, and acts independently on every (batch, channel, pixel)
fiber.

Two forward routes are provided.  ``ssa_forward_reference`` evaluates the
definition above directly, frame by frame.  ``ssa_forward`` accumulates
shifted differences one shift distance at a time:

    out = in;  for d in 1..cap:  out[d:] += w(d) * (in[d:] - in[:-d])

Both compute the same linear map (up to float reassociation); the
reference route exists as an independent oracle for the fast route.

``SsaConfig`` optionally caps the shift distance.  A cap of 0 makes the
layer an exact identity; the default uses every available shift (f - 1).
The per-frame normalizer stays 1/f regardless of the cap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, SpecError
from .ops import _map_batch, check_feature_map


@dataclass(frozen=True)
class SsaConfig:
    """Shift policy: ``shift_cap=None`` uses all f-1 shifts, an int caps them."""

    shift_cap: int | None = None

    def __post_init__(self):
        if self.shift_cap is not None and self.shift_cap < 0:
            raise SpecError(f"shift_cap must be >= 0, got {self.shift_cap}")

    @classmethod
    def all_shifts(cls) -> "SsaConfig":
        return cls(None)

    @classmethod
    def fixed(cls, cap: int) -> "SsaConfig":
        return cls(int(cap))

    def max_shift(self, depth: int) -> int:
        """Largest shift distance actually applied for a clip of this depth."""
        if depth < 1:
            raise DimensionError(f"depth must be >= 1, got {depth}")
        full = depth - 1
        return full if self.shift_cap is None else min(self.shift_cap, full)

    def describe(self) -> str:
        return "all" if self.shift_cap is None else str(self.shift_cap)


def shift_weight(distance: int, depth: int) -> float:
    """Weight of shift distance d for clip depth f: (f - d) / f**2."""
    if not 1 <= distance < depth:
        raise ValueError(f"shift distance {distance} out of range for depth {depth}")
    return (depth - distance) / float(depth * depth)


def ssa_param_count() -> int:
    """The layer is parameter free."""
    return 0


def ssa_forward_reference(x: np.ndarray, config: SsaConfig = SsaConfig()) -> np.ndarray:
    """Direct per-frame evaluation of the defining sum (oracle route)."""
    check_feature_map(x)
    f = x.shape[2]
    cap = config.max_shift(f)
    out = x.copy()
    inv_f = 1.0 / f
    for i in range(1, f):
        lo = max(0, i - cap)
        for j in range(lo, i):
            w = (f - (i - j)) * inv_f
            out[:, :, i] += inv_f * w * (x[:, :, i] - x[:, :, j])
    return out


def ssa_forward(x: np.ndarray, config: SsaConfig = SsaConfig()) -> np.ndarray:
    """Cumulative shifted-difference evaluation (production route)."""
    check_feature_map(x)
    f = x.shape[2]
    cap = config.max_shift(f)
    if cap == 0:
        return x.copy()

    def run(sl: slice) -> np.ndarray:
        xs = x[sl]
        out = xs.copy()
        for d in range(1, cap + 1):
            w = shift_weight(d, f)
            out[:, :, d:] += w * (xs[:, :, d:] - xs[:, :, :-d])
        return out

    return np.concatenate(_map_batch(run, x.shape[0]), axis=0) if x.shape[0] else x.copy()


def ssa_backward(
    grad_out: np.ndarray, config: SsaConfig = SsaConfig()
) -> np.ndarray:
    """Exact adjoint of the forward map applied to grad_out.

    Writing the forward as out = A @ in along the frame axis, with
    A[i][i] = 1 + sum of w(d) over applied shifts d and A[i][i-d] = -w(d),
    the input gradient is A^T @ grad_out:

        grad_in[j] = (1 + W(j)) * g[j] - sum over d of w(d) * g[j + d]

    where W(j) is the total weight of shifts feeding frame j.
    """
    check_feature_map(grad_out)
    f = grad_out.shape[2]
    cap = config.max_shift(f)
    if cap == 0:
        return grad_out.copy()
    weights = np.array([shift_weight(d, f) for d in range(1, cap + 1)])
    cum = np.concatenate(([0.0], np.cumsum(weights)))
    # frame j (0-based) has min(j, cap) earlier frames close enough to feed it
    coef = 1.0 + cum[np.minimum(np.arange(f), cap)]
    grad_in = grad_out * coef.astype(grad_out.dtype).reshape(1, 1, f, 1, 1)
    for d in range(1, cap + 1):
        grad_in[:, :, :-d] -= weights[d - 1] * grad_out[:, :, d:]
    return grad_in


def ssa_matrix(depth: int, config: SsaConfig = SsaConfig()) -> np.ndarray:
    """Dense (f, f) matrix of the linear map along the frame axis.

    Useful for small-scale verification: applying this matrix to each
    fiber reproduces the forward pass exactly.
    """
    a = np.eye(depth)
    cap = config.max_shift(depth)
    for i in range(1, depth):
        for d in range(1, min(cap, i) + 1):
            w = shift_weight(d, depth)
            a[i, i] += w
            a[i, i - d] -= w
    return a
