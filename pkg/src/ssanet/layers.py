"""Layer objects: stateful wrappers around the functional ops.

Each layer caches whatever its most recent forward pass needs for the
matching backward pass, so call order must be forward then backward with
nothing in between on the same layer.  Parameter gradients accumulate
into ``Parameter.grad``; call ``zero_grad`` before each backward sweep.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .errors import DimensionError, SpecError
from .ssa import SsaConfig, ssa_backward, ssa_forward


class Parameter:
    """A trainable array plus its gradient accumulator."""

    __slots__ = ("data", "grad")

    def __init__(self, data: np.ndarray):
        self.data = data
        self.grad = np.zeros_like(data)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


class Layer:
    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def children(self) -> list[tuple[str, "Layer"]]:
        return []

    def parameters(self) -> list[Parameter]:
        out = [p for _, p in self.named_parameters()]
        return out

    def named_parameters(self, prefix: str = ""):
        """Yield (dotted_name, Parameter) for this layer and its children."""
        for name, p in self._own_params():
            yield prefix + name, p
        for child_name, child in self.children():
            yield from child.named_parameters(prefix + child_name + ".")

    def state_entries(self, prefix: str = ""):
        """Yield (dotted_name, array, trainable) incl. non-trainable buffers."""
        for name, p in self._own_params():
            yield prefix + name, p.data, True
        for name, buf in self._own_buffers():
            yield prefix + name, buf, False
        for child_name, child in self.children():
            yield from child.state_entries(prefix + child_name + ".")

    def load_state(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        """Copy arrays (by dotted name) into parameters and buffers."""
        for name, p in self._own_params():
            key = prefix + name
            if key not in arrays:
                raise SpecError(f"checkpoint is missing entry {key!r}")
            if arrays[key].shape != p.data.shape:
                raise DimensionError(
                    f"checkpoint entry {key!r} has shape {arrays[key].shape}, "
                    f"expected {p.data.shape}"
                )
            p.data[...] = arrays[key]
        for name, buf in self._own_buffers():
            key = prefix + name
            if key not in arrays:
                raise SpecError(f"checkpoint is missing entry {key!r}")
            if arrays[key].shape != buf.shape:
                raise DimensionError(
                    f"checkpoint entry {key!r} has shape {arrays[key].shape}, "
                    f"expected {buf.shape}"
                )
            buf[...] = arrays[key]
        for child_name, child in self.children():
            child.load_state(arrays, prefix + child_name + ".")

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def output_shape(self, shape: tuple) -> tuple:
        """Analytic output shape for a given input shape."""
        return shape

    def _own_params(self) -> list[tuple[str, Parameter]]:
        return []

    def _own_buffers(self) -> list[tuple[str, np.ndarray]]:
        return []


def he_init(shape: tuple, fan_in: int, rng: np.random.Generator, dtype) -> np.ndarray:
    """Zero-mean normal draw with std sqrt(2 / fan_in)."""
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


def activation_signature(layer: "Layer") -> bytes:
    """Digest of every ReLU sign pattern and pool argmax from the last forward.

    Finite-difference checks compare this across perturbed evaluations: if
    the signature changes, the probe crossed a kink (ReLU boundary or pool
    tie) where the network is not differentiable, so the probe is invalid.
    """
    import hashlib

    h = hashlib.blake2b(digest_size=16)

    def walk(l: Layer) -> None:
        if isinstance(l, ReLU) and l._x is not None:
            h.update(np.packbits(l._x > 0).tobytes())
        if isinstance(l, (TemporalMaxPool, MaxPool3d)) and l._idx is not None:
            h.update(l._idx.flat.tobytes())
        for _, child in l.children():
            walk(child)

    walk(layer)
    return h.digest()


class Conv2d(Layer):
    """Framewise 2-D convolution with shared per-frame weights."""

    def __init__(
        self,
        c_in: int,
        c_out: int,
        k: int,
        stride: int = 1,
        padding: int = 0,
        groups: int = 1,
        bias: bool = False,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ):
        if c_in % groups != 0 or c_out % groups != 0:
            raise SpecError(f"groups={groups} must divide c_in={c_in} and c_out={c_out}")
        rng = rng or np.random.default_rng(0)
        ci_g = c_in // groups
        self.weight = Parameter(he_init((c_out, ci_g, k, k), ci_g * k * k, rng, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype)) if bias else None
        self.stride = stride
        self.padding = padding
        self.groups = groups
        self._x = None

    def _kernel(self) -> ops.Conv2dKernel:
        return ops.Conv2dKernel(
            self.weight.data,
            self.bias.data if self.bias is not None else None,
            self.stride,
            self.padding,
            self.groups,
        )

    def forward(self, x, training=False):
        self._x = x
        return ops.conv2d_framewise(x, self._kernel())

    def backward(self, grad_out):
        grads = ops.conv2d_framewise_backward(self._x, self._kernel(), grad_out)
        self.weight.grad += grads.grad_weights
        if self.bias is not None:
            self.bias.grad += grads.grad_bias
        return grads.grad_input

    def output_shape(self, shape):
        n, c, f, h, w = shape
        k, s, p = self.weight.data.shape[2], self.stride, self.padding
        if c != self.weight.data.shape[1] * self.groups:
            raise SpecError(
                f"conv expects {self.weight.data.shape[1] * self.groups} input "
                f"channels, shape has {c}"
            )
        oh = (h + 2 * p - k) // s + 1
        ow = (w + 2 * p - k) // s + 1
        if oh < 1 or ow < 1:
            raise SpecError(f"conv kernel does not fit input shape {shape}")
        return (n, self.weight.data.shape[0], f, oh, ow)

    def _own_params(self):
        out = [("weight", self.weight)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out


class BatchNorm(Layer):
    """Per-channel batch normalization over (n, f, h, w)."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=np.float32):
        self.weight = Parameter(np.ones(channels, dtype=dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype))
        self.stats = ops.RunningStats.create(channels, dtype)
        self.momentum = momentum
        self.eps = eps
        self._cache = None

    def forward(self, x, training=False):
        y, self._cache = ops.batch_norm_forward(
            x, self.weight.data, self.bias.data, self.stats, training,
            self.momentum, self.eps,
        )
        return y

    def backward(self, grad_out):
        grad_in, gg, gb = ops.batch_norm_backward(self._cache, grad_out)
        self.weight.grad += gg
        self.bias.grad += gb
        return grad_in

    def _own_params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def _own_buffers(self):
        return [("running_mean", self.stats.mean), ("running_var", self.stats.var)]


class ReLU(Layer):
    def __init__(self):
        self._x = None

    def forward(self, x, training=False):
        self._x = x
        return ops.relu(x)

    def backward(self, grad_out):
        return ops.relu_backward(self._x, grad_out)


class Ssa(Layer):
    """Parameter-free temporal mixing layer (see the ``ssa`` module)."""

    def __init__(self, config: SsaConfig = SsaConfig()):
        self.config = config

    def forward(self, x, training=False):
        return ssa_forward(x, self.config)

    def backward(self, grad_out):
        return ssa_backward(grad_out, self.config)


class TemporalMaxPool(Layer):
    """Max pool along frames.  ``kernel=None`` pools the full clip depth."""

    def __init__(self, kernel: int | None = 2, stride: int | None = None):
        self.kernel = kernel
        self.stride = stride if stride is not None else kernel
        self._idx = None

    def _spec_for(self, depth: int) -> ops.TemporalPoolSpec:
        if self.kernel is None:
            return ops.TemporalPoolSpec(depth, depth)
        return ops.TemporalPoolSpec(self.kernel, self.stride)

    def forward(self, x, training=False):
        y, self._idx = ops.temporal_max_pool(x, self._spec_for(x.shape[2]))
        return y

    def backward(self, grad_out):
        return ops.temporal_max_pool_backward(self._idx, grad_out)

    def output_shape(self, shape):
        n, c, f, h, w = shape
        spec = self._spec_for(f)
        if spec.kernel > f:
            raise SpecError(f"temporal pool kernel {spec.kernel} exceeds depth {f}")
        return (n, c, (f - spec.kernel) // spec.stride + 1, h, w)


class MaxPool3d(Layer):
    """Max pool over (f, h, w) windows."""

    def __init__(self, kernel: tuple[int, int, int], stride: tuple[int, int, int]):
        self.kernel = kernel
        self.stride = stride
        self._idx = None

    def forward(self, x, training=False):
        y, self._idx = ops.max_pool3d(x, self.kernel, self.stride)
        return y

    def backward(self, grad_out):
        return ops.max_pool3d_backward(self._idx, grad_out)

    def output_shape(self, shape):
        n, c, f, h, w = shape
        dims = []
        for size, kk, ss in zip((f, h, w), self.kernel, self.stride):
            if kk > size:
                raise SpecError(f"pool kernel {self.kernel} exceeds input {shape}")
            dims.append((size - kk) // ss + 1)
        return (n, c, *dims)


class GlobalAvgPool(Layer):
    def __init__(self):
        self._shape = None

    def forward(self, x, training=False):
        self._shape = x.shape
        return ops.global_avg_pool(x)

    def backward(self, grad_out):
        return ops.global_avg_pool_backward(self._shape, grad_out)

    def output_shape(self, shape):
        return (shape[0], shape[1])


class Flatten(Layer):
    def __init__(self):
        self._shape = None

    def forward(self, x, training=False):
        self._shape = x.shape
        return np.ascontiguousarray(x).reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._shape)

    def output_shape(self, shape):
        n = shape[0]
        return (n, int(np.prod(shape[1:])))


class Dense(Layer):
    """Affine head on flattened or pooled features: (n, d) -> (n, m)."""

    def __init__(self, d_in: int, d_out: int, bias: bool = True,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.weight = Parameter(he_init((d_in, d_out), d_in, rng, dtype))
        self.bias = Parameter(np.zeros(d_out, dtype=dtype)) if bias else None
        self._x = None

    def forward(self, x, training=False):
        self._x = x
        return ops.linear(x, self.weight.data,
                          self.bias.data if self.bias is not None else None)

    def backward(self, grad_out):
        grads = ops.linear_backward(
            self._x, self.weight.data, grad_out, has_bias=self.bias is not None
        )
        self.weight.grad += grads.grad_weights
        if self.bias is not None:
            self.bias.grad += grads.grad_bias
        return grads.grad_input

    def output_shape(self, shape):
        if shape[1] != self.weight.data.shape[0]:
            raise SpecError(
                f"dense layer expects {self.weight.data.shape[0]} features, "
                f"shape has {shape[1]}"
            )
        return (shape[0], self.weight.data.shape[1])

    def _own_params(self):
        out = [("weight", self.weight)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out


class Sequential(Layer):
    def __init__(self, layers: list[Layer], names: list[str] | None = None):
        if names is not None and len(names) != len(layers):
            raise SpecError("names must match layers one to one")
        self.layers = list(layers)
        self.names = list(names) if names else [str(i) for i in range(len(layers))]

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, grad_out):
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out

    def children(self):
        return list(zip(self.names, self.layers))

    def output_shape(self, shape):
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape


class Residual(Layer):
    """y = main(x) + shortcut(x); shortcut defaults to identity."""

    def __init__(self, main: Layer, shortcut: Layer | None = None):
        self.main = main
        self.shortcut = shortcut

    def forward(self, x, training=False):
        y = self.main.forward(x, training)
        s = self.shortcut.forward(x, training) if self.shortcut is not None else x
        if y.shape != s.shape:
            raise DimensionError(
                f"residual paths disagree: main {y.shape} vs shortcut {s.shape}"
            )
        return y + s

    def backward(self, grad_out):
        gx = self.main.backward(grad_out)
        if self.shortcut is not None:
            gx = gx + self.shortcut.backward(grad_out)
        else:
            gx = gx + grad_out
        return gx

    def children(self):
        out = [("main", self.main)]
        if self.shortcut is not None:
            out.append(("shortcut", self.shortcut))
        return out

    def output_shape(self, shape):
        main_shape = self.main.output_shape(shape)
        short_shape = (
            self.shortcut.output_shape(shape) if self.shortcut is not None else shape
        )
        if main_shape != short_shape:
            raise SpecError(
                f"residual paths disagree: main {main_shape} vs shortcut {short_shape}"
            )
        return main_shape


class Network(Layer):
    """A feature trunk plus a classification head.

    ``forward_features`` exposes the trunk output (the pre-head feature
    map), which is what temporal-behavior probes inspect.
    """

    def __init__(self, features: Sequential, head: Sequential, spec=None):
        self.features = features
        self.head = head
        self.spec = spec

    def forward_features(self, x, training=False):
        return self.features.forward(x, training)

    def forward(self, x, training=False):
        return self.head.forward(self.features.forward(x, training), training)

    def backward(self, grad_out):
        return self.features.backward(self.head.backward(grad_out))

    def children(self):
        return [("features", self.features), ("head", self.head)]

    def output_shape(self, shape):
        return self.head.output_shape(self.features.output_shape(shape))

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters())
