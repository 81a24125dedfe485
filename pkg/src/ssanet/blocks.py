"""Declarative network specs, block builders, and parameter counting.

A network is described by a ``NetworkSpec``: an ordered list of items
(stem convs, residual blocks, pools, head layers) plus a class count and
a nominal input size.  Specs support three consumers:

* ``build_network`` turns a spec into an executable ``Network``,
* ``param_count`` / ``param_breakdown`` count trainable scalars without
  building anything, which also covers the 3-D-kernel reference variants
  (``temporal_k > 1``) that exist purely for parameter comparison,
* ``render_network_spec`` / ``parse_network_spec`` round-trip specs
  through a plain-text key=value format (see README).

Layer order inside a block is frozen as conv -> batch norm -> relu ->
temporal mixing for every conv sub-pipeline of the main path, with no
activation after the residual add.  Projection shortcuts (1x1, framewise)
appear exactly when the block changes shape.  Temporal downsampling
happens only through an explicit entry pool (kernel 2, stride 2) on
blocks with spatial stride > 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import SpecError
from .layers import (
    BatchNorm,
    Conv2d,
    Dense,
    Flatten,
    GlobalAvgPool,
    MaxPool3d,
    Network,
    ReLU,
    Residual,
    Sequential,
    Ssa,
    TemporalMaxPool,
)
from .ssa import SsaConfig

BLOCK_KINDS = ("basic", "bottleneck", "resnext")


@dataclass(frozen=True)
class ConvItem:
    """A standalone conv sub-pipeline: conv [+ bn] [+ relu] [+ temporal mix]."""

    c_in: int
    c_out: int
    k: int
    stride: int = 1
    padding: int | None = None  # None means k // 2
    groups: int = 1
    bias: bool = False
    bn: bool = True
    relu: bool = True
    ssa: bool = False
    temporal_k: int = 1

    def __post_init__(self):
        _check_conv_fields(self)
        if self.ssa and self.temporal_k != 1:
            raise SpecError("temporal mixing requires framewise kernels (temporal_k=1)")

    @property
    def pad(self) -> int:
        return self.k // 2 if self.padding is None else self.padding


@dataclass(frozen=True)
class BlockSpec:
    """A residual block.

    ``kind`` selects the main-path layout: ``basic`` is two k x k convs,
    ``bottleneck`` is 1x1 / k x k / 1x1, and ``resnext`` is the same with
    grouped middle conv (cardinality = ``groups``).  ``ssa`` gives the
    temporal-mixing policy appended to every conv sub-pipeline, or None
    for a purely spatial block.  ``temporal_k > 1`` marks the 3-D-kernel
    reference variant used only for parameter counting.
    """

    kind: str
    c_in: int
    c_out: int
    c_mid: int | None = None
    k: int = 3
    stride: int = 1
    groups: int = 1
    temporal_pool_here: bool = False
    temporal_k: int = 1
    ssa: SsaConfig | None = field(default_factory=SsaConfig)

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise SpecError(f"unknown block kind {self.kind!r}; use one of {BLOCK_KINDS}")
        if self.c_in < 1 or self.c_out < 1 or self.k < 1 or self.stride < 1:
            raise SpecError(f"invalid block geometry: {self}")
        if self.kind == "basic":
            if self.c_mid is not None:
                raise SpecError("basic blocks take no c_mid")
            if self.groups != 1:
                raise SpecError("basic blocks do not support grouped convs")
        else:
            if self.groups < 1 or self.mid % self.groups != 0:
                raise SpecError(
                    f"groups={self.groups} must divide mid width {self.mid}"
                )
        if self.temporal_k not in (1, self.k):
            raise SpecError(
                f"temporal_k must be 1 (framewise) or k={self.k} (3-D reference), "
                f"got {self.temporal_k}"
            )
        if self.ssa is not None and self.temporal_k != 1:
            raise SpecError("temporal mixing requires framewise kernels (temporal_k=1)")
        if self.temporal_pool_here and self.stride < 2:
            raise SpecError("entry temporal pool is only placed on stride > 1 blocks")

    @property
    def mid(self) -> int:
        if self.kind == "basic":
            return self.c_out
        if self.c_mid is not None:
            return self.c_mid
        return self.c_out // (4 if self.kind == "bottleneck" else 2)

    @property
    def has_projection(self) -> bool:
        return self.stride != 1 or self.c_in != self.c_out


@dataclass(frozen=True)
class Pool3dItem:
    kernel: tuple[int, int, int]
    stride: tuple[int, int, int]


@dataclass(frozen=True)
class TemporalPoolItem:
    kernel: int | None = 2  # None pools the whole remaining depth
    stride: int | None = None


@dataclass(frozen=True)
class GlobalPoolItem:
    pass


@dataclass(frozen=True)
class FlattenItem:
    pass


@dataclass(frozen=True)
class DenseItem:
    d_in: int
    d_out: int
    relu: bool = False
    bias: bool = True


Item = ConvItem | BlockSpec | Pool3dItem | TemporalPoolItem | GlobalPoolItem | FlattenItem | DenseItem


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered items plus class count and nominal (f, h, w) input size."""

    name: str
    classes: int
    in_channels: int
    input_size: tuple[int, int, int]
    items: tuple
    ssa_config: SsaConfig | None = field(default_factory=SsaConfig)

    def __post_init__(self):
        if self.classes < 2:
            raise SpecError(f"need at least 2 classes, got {self.classes}")
        heads = sum(isinstance(it, DenseItem) and not it.relu for it in self.items)
        if heads != 1 or not isinstance(self.items[-1], DenseItem):
            raise SpecError("a network needs exactly one classification head, last")


def _check_conv_fields(it) -> None:
    if it.c_in < 1 or it.c_out < 1 or it.k < 1:
        raise SpecError(f"invalid conv geometry: c_in={it.c_in} c_out={it.c_out} k={it.k}")
    if it.stride < 1:
        raise SpecError(f"stride must be >= 1, got {it.stride}")
    if it.groups < 1 or it.c_in % it.groups or it.c_out % it.groups:
        raise SpecError(f"groups={it.groups} must divide c_in={it.c_in}, c_out={it.c_out}")
    if it.temporal_k not in (1, it.k):
        raise SpecError(
            f"temporal_k must be 1 (framewise) or k={it.k} (3-D reference), "
            f"got {it.temporal_k}"
        )


# ---------------------------------------------------------------------------
# block expansion shared by counting and building


@dataclass(frozen=True)
class _PlanConv:
    name: str
    c_in: int
    c_out: int
    k: int
    stride: int
    padding: int
    groups: int = 1
    bias: bool = False
    bn: bool = True
    relu: bool = True
    ssa: bool = False
    temporal_k: int = 1


def _block_plan(bs: BlockSpec) -> tuple[list[_PlanConv], _PlanConv | None]:
    """Main-path conv sub-pipelines and the optional projection shortcut."""
    use_ssa = bs.ssa is not None
    p = bs.k // 2
    if bs.kind == "basic":
        convs = [
            _PlanConv("conv1", bs.c_in, bs.c_out, bs.k, bs.stride, p,
                      ssa=use_ssa, temporal_k=bs.temporal_k),
            _PlanConv("conv2", bs.c_out, bs.c_out, bs.k, 1, p,
                      ssa=use_ssa, temporal_k=bs.temporal_k),
        ]
    else:
        mid = bs.mid
        convs = [
            _PlanConv("conv1", bs.c_in, mid, 1, 1, 0, ssa=use_ssa),
            _PlanConv("conv2", mid, mid, bs.k, bs.stride, p, groups=bs.groups,
                      ssa=use_ssa, temporal_k=bs.temporal_k),
            _PlanConv("conv3", mid, bs.c_out, 1, 1, 0, ssa=use_ssa),
        ]
    shortcut = None
    if bs.has_projection:
        shortcut = _PlanConv("proj", bs.c_in, bs.c_out, 1, bs.stride, 0,
                             relu=False, ssa=False)
    return convs, shortcut


def _pipeline_layers(pc: _PlanConv, ssa_cfg: SsaConfig | None, rng, dtype):
    """Expand one conv sub-pipeline into named executable layers."""
    if pc.temporal_k != 1:
        raise SpecError(
            "3-D reference variants support parameter counting only, not building"
        )
    names = [pc.name]
    layers = [
        Conv2d(pc.c_in, pc.c_out, pc.k, pc.stride, pc.padding, pc.groups,
               bias=pc.bias, rng=rng, dtype=dtype)
    ]
    if pc.bn:
        names.append(pc.name + "_bn")
        layers.append(BatchNorm(pc.c_out, dtype=dtype))
    if pc.relu:
        names.append(pc.name + "_relu")
        layers.append(ReLU())
    if pc.ssa:
        if ssa_cfg is None:
            raise SpecError(f"{pc.name} requests temporal mixing but no policy is set")
        names.append(pc.name + "_ssa")
        layers.append(Ssa(ssa_cfg))
    return names, layers


def build_ssa_block(bs: BlockSpec, rng: np.random.Generator | None = None,
                    dtype=np.float32):
    """Build one executable residual block from its spec."""
    rng = rng or np.random.default_rng(0)
    convs, shortcut = _block_plan(bs)
    names: list[str] = []
    layers: list = []
    for pc in convs:
        n, l = _pipeline_layers(pc, bs.ssa, rng, dtype)
        names += n
        layers += l
    main = Sequential(layers, names)
    short = None
    if shortcut is not None:
        n, l = _pipeline_layers(shortcut, None, rng, dtype)
        short = Sequential(l, n)
    block = Residual(main, short)
    if bs.temporal_pool_here:
        return Sequential([TemporalMaxPool(2, 2), block], ["tpool", "block"])
    return block


# ---------------------------------------------------------------------------
# parameter counting


def _conv_atom(path: str, pc: _PlanConv):
    # bias is listed separately so conv rows carry pure weight counts and
    # the k-fold weight ratio between flat and cube kernels stays exact
    weights = pc.c_out * (pc.c_in // pc.groups) * pc.temporal_k * pc.k * pc.k
    kind = "conv_spatial" if pc.k > 1 else "conv_point"
    atoms = [(path, kind, weights)]
    if pc.bias:
        atoms.append((path + ".bias", "bias", pc.c_out))
    if pc.bn:
        atoms.append((path + "_bn", "batch_norm", 2 * pc.c_out))
    if pc.ssa:
        atoms.append((path + "_ssa", "ssa", 0))
    return atoms


def _block_atoms(path: str, bs: BlockSpec):
    convs, shortcut = _block_plan(bs)
    atoms = []
    if bs.temporal_pool_here:
        atoms.append((path + ".tpool", "pool", 0))
    for pc in convs:
        atoms += _conv_atom(f"{path}.main.{pc.name}", pc)
    if shortcut is not None:
        atoms += _conv_atom(f"{path}.shortcut.{shortcut.name}", shortcut)
    return atoms


def _item_conv_plan(it: ConvItem) -> _PlanConv:
    return _PlanConv("", it.c_in, it.c_out, it.k, it.stride, it.pad, it.groups,
                     it.bias, it.bn, it.relu, it.ssa, it.temporal_k)


def _dense_atoms(path: str, it: DenseItem):
    atoms = [(path, "linear", it.d_in * it.d_out)]
    if it.bias:
        atoms.append((path + ".bias", "bias", it.d_out))
    return atoms


def _network_atoms(spec: NetworkSpec):
    atoms = []
    counters: dict[str, int] = {}

    def tag(kind: str) -> str:
        counters[kind] = counters.get(kind, 0) + 1
        return f"{kind}{counters[kind]}"

    for it in spec.items:
        if isinstance(it, ConvItem):
            atoms += _conv_atom(tag("conv"), _item_conv_plan(it))
        elif isinstance(it, BlockSpec):
            atoms += _block_atoms(tag("block"), it)
        elif isinstance(it, (Pool3dItem, TemporalPoolItem)):
            atoms.append((tag("pool"), "pool", 0))
        elif isinstance(it, GlobalPoolItem):
            atoms.append((tag("gap"), "pool", 0))
        elif isinstance(it, FlattenItem):
            atoms.append((tag("flatten"), "pool", 0))
        elif isinstance(it, DenseItem):
            atoms += _dense_atoms(tag("fc"), it)
        else:
            raise SpecError(f"unknown network item {it!r}")
    return atoms


def param_count(spec) -> int:
    """Exact number of trainable scalars described by a spec or single item."""
    return sum(n for _, _, n in param_breakdown(spec))


def param_breakdown(spec) -> list[tuple[str, str, int]]:
    """(path, kind, count) per layer.  Kinds: conv_spatial, conv_point,
    bias, batch_norm, linear, ssa, pool.  Conv and linear rows hold pure
    weight counts; bias terms get their own rows.  Temporal mixing and
    pooling always contribute zero.  Accepts a NetworkSpec, a BlockSpec,
    or a lone ConvItem/DenseItem."""
    if isinstance(spec, BlockSpec):
        return _block_atoms("block", spec)
    if isinstance(spec, NetworkSpec):
        return _network_atoms(spec)
    if isinstance(spec, ConvItem):
        return _conv_atom("conv", _item_conv_plan(spec))
    if isinstance(spec, DenseItem):
        return _dense_atoms("fc", spec)
    raise SpecError(f"cannot count parameters of {type(spec).__name__}")


# ---------------------------------------------------------------------------
# analytic shapes


def _conv_shape(shape, c_in, c_out, k, stride, pad, temporal_k):
    n, c, f, h, w = shape
    if c != c_in:
        raise SpecError(f"item expects {c_in} channels, chain provides {c}")
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    if oh < 1 or ow < 1:
        raise SpecError(f"kernel {k} does not fit spatial size {(h, w)}")
    # 3-D reference kernels are modeled with same-depth temporal padding
    return (n, c_out, f, oh, ow)


def item_output_shape(it: Item, shape: tuple) -> tuple:
    """Analytic output shape of one item given its input shape."""
    if isinstance(it, ConvItem):
        return _conv_shape(shape, it.c_in, it.c_out, it.k, it.stride, it.pad,
                           it.temporal_k)
    if isinstance(it, BlockSpec):
        n, c, f, h, w = shape
        if it.temporal_pool_here:
            if f < 2:
                raise SpecError(f"entry temporal pool needs depth >= 2, got {f}")
            f = (f - 2) // 2 + 1
        convs, _ = _block_plan(it)
        s = (n, c, f, h, w)
        for pc in convs:
            s = _conv_shape(s, pc.c_in, pc.c_out, pc.k, pc.stride, pc.padding,
                            pc.temporal_k)
        return s
    if isinstance(it, Pool3dItem):
        n, c, f, h, w = shape
        dims = []
        for size, kk, ss in zip((f, h, w), it.kernel, it.stride):
            if kk > size:
                raise SpecError(f"pool kernel {it.kernel} exceeds {(f, h, w)}")
            dims.append((size - kk) // ss + 1)
        return (n, c, *dims)
    if isinstance(it, TemporalPoolItem):
        n, c, f, h, w = shape
        k = f if it.kernel is None else it.kernel
        s = k if it.stride is None else it.stride
        if k > f:
            raise SpecError(f"temporal pool kernel {k} exceeds depth {f}")
        return (n, c, (f - k) // s + 1, h, w)
    if isinstance(it, GlobalPoolItem):
        return (shape[0], shape[1])
    if isinstance(it, FlattenItem):
        return (shape[0], int(np.prod(shape[1:])))
    if isinstance(it, DenseItem):
        if len(shape) != 2 or shape[1] != it.d_in:
            raise SpecError(f"dense expects (n, {it.d_in}), chain provides {shape}")
        return (shape[0], it.d_out)
    raise SpecError(f"unknown network item {it!r}")


def network_output_shape(spec: NetworkSpec, batch: int = 1) -> tuple:
    """Chain all items analytically; raises SpecError if shapes do not compose."""
    shape = (batch, spec.in_channels, *spec.input_size)
    for it in spec.items:
        shape = item_output_shape(it, shape)
    if shape != (batch, spec.classes):
        raise SpecError(
            f"network ends with shape {shape}, expected ({batch}, {spec.classes})"
        )
    return shape


def validate_network(spec: NetworkSpec) -> None:
    network_output_shape(spec, batch=1)


# ---------------------------------------------------------------------------
# building


def build_network(spec, seed: int = 0, dtype=np.float32, **overrides) -> Network:
    """Build an executable network from a spec or a registered name.

    Keyword overrides (classes, in_channels, ssa, input_size) apply only
    when ``spec`` is a name.  Initialization draws from a fresh
    numpy default_rng(seed), so identical (spec, seed, dtype) triples
    produce bitwise-identical parameters.
    """
    if isinstance(spec, str):
        spec = network_spec(spec, **overrides)
    elif overrides:
        raise SpecError("overrides only apply to named architectures")
    validate_network(spec)
    rng = np.random.default_rng(seed)
    feat_names: list[str] = []
    feat_layers: list = []
    head_names: list[str] = []
    head_layers: list = []
    counters: dict[str, int] = {}

    def tag(kind: str) -> str:
        counters[kind] = counters.get(kind, 0) + 1
        return f"{kind}{counters[kind]}"

    in_head = False
    for it in spec.items:
        if isinstance(it, (GlobalPoolItem, FlattenItem)):
            in_head = True
        names, layers = feat_names, feat_layers
        if in_head:
            names, layers = head_names, head_layers
        if isinstance(it, ConvItem):
            base = tag("conv")
            pc = _PlanConv(base, it.c_in, it.c_out, it.k, it.stride, it.pad,
                           it.groups, it.bias, it.bn, it.relu, it.ssa,
                           it.temporal_k)
            cfg = spec.ssa_config if it.ssa else None
            n, l = _pipeline_layers(pc, cfg, rng, dtype)
            names += n
            layers += l
        elif isinstance(it, BlockSpec):
            names.append(tag("block"))
            layers.append(build_ssa_block(it, rng, dtype))
        elif isinstance(it, Pool3dItem):
            names.append(tag("pool"))
            layers.append(MaxPool3d(it.kernel, it.stride))
        elif isinstance(it, TemporalPoolItem):
            names.append(tag("tpool"))
            layers.append(TemporalMaxPool(it.kernel, it.stride))
        elif isinstance(it, GlobalPoolItem):
            names.append("gap")
            layers.append(GlobalAvgPool())
        elif isinstance(it, FlattenItem):
            names.append("flatten")
            layers.append(Flatten())
        elif isinstance(it, DenseItem):
            base = tag("fc")
            names.append(base)
            layers.append(Dense(it.d_in, it.d_out, it.bias, rng, dtype))
            if it.relu:
                names.append(base + "_relu")
                layers.append(ReLU())
        else:
            raise SpecError(f"unknown network item {it!r}")
    net = Network(Sequential(feat_layers, feat_names),
                  Sequential(head_layers, head_names), spec=spec)
    return net


# ---------------------------------------------------------------------------
# named architectures


def _blk(kind, c_in, c_out, stride, ssa, mid=None, groups=1, tk=1, tpool=None):
    return BlockSpec(kind, c_in, c_out, c_mid=mid, k=3, stride=stride,
                     groups=groups, temporal_k=tk, ssa=ssa,
                     temporal_pool_here=(stride > 1 if tpool is None else tpool))


def spec_toy_ssa_net(classes: int = 4, in_channels: int = 1,
                     ssa: SsaConfig | None = SsaConfig()) -> NetworkSpec:
    """Small 3-block network for desk-scale experiments on (n,c,8,16,16) clips.

    Strides are spatial only; the single temporal reduction is a full-depth
    max pool before the head, so the trunk treats frames uniformly and the
    temporal-mixing policy is the lone order-sensitive piece.
    """
    items = (
        ConvItem(in_channels, 8, 3, ssa=True),
        _blk("basic", 8, 16, 2, ssa, tpool=False),
        _blk("basic", 16, 16, 1, ssa),
        _blk("basic", 16, 32, 2, ssa, tpool=False),
        TemporalPoolItem(kernel=None),
        GlobalPoolItem(),
        DenseItem(32, classes),
    )
    return NetworkSpec("toy_ssa_net", classes, in_channels, (8, 16, 16), items,
                       ssa_config=ssa)


def spec_ssa_resnext8(classes: int = 40, in_channels: int = 1,
                      ssa: SsaConfig | None = SsaConfig()) -> NetworkSpec:
    """Eight-layer grouped-bottleneck network for 32x32x32 voxel clips.

    Stem 3x3 conv, one 3x3x3/stride-2 max pool, six cardinality-32
    bottlenecks whose widths double at each stride-2 stage, global average
    pool, 40-way affine head.
    """
    g = 32
    items = (
        ConvItem(in_channels, 64, 3, ssa=True),
        Pool3dItem((3, 3, 3), (2, 2, 2)),
        _blk("resnext", 64, 256, 1, ssa, mid=128, groups=g),
        _blk("resnext", 256, 256, 1, ssa, mid=128, groups=g),
        _blk("resnext", 256, 512, 2, ssa, mid=256, groups=g),
        _blk("resnext", 512, 512, 1, ssa, mid=256, groups=g),
        _blk("resnext", 512, 1024, 2, ssa, mid=512, groups=g),
        _blk("resnext", 1024, 1024, 1, ssa, mid=512, groups=g),
        GlobalPoolItem(),
        DenseItem(1024, classes),
    )
    return NetworkSpec("ssa_resnext8", classes, in_channels, (32, 32, 32), items,
                       ssa_config=ssa)


def _resnet18_items(in_channels, classes, ssa, tk):
    widths = (64, 128, 256, 512)
    items = [ConvItem(in_channels, 64, 7, stride=2, ssa=ssa is not None,
                      temporal_k=(7 if tk > 1 else 1)),
             Pool3dItem((1, 3, 3), (1, 2, 2))]
    c_in = 64
    for stage, c_out in enumerate(widths):
        stride = 1 if stage == 0 else 2
        items.append(_blk("basic", c_in, c_out, stride, ssa, tk=tk))
        items.append(_blk("basic", c_out, c_out, 1, ssa, tk=tk))
        c_in = c_out
    items += [GlobalPoolItem(), DenseItem(512, classes)]
    return tuple(items)


def spec_ssa_resnet18(classes: int = 101, in_channels: int = 3,
                      ssa: SsaConfig | None = SsaConfig()) -> NetworkSpec:
    """18-layer basic-block network with framewise kernels, clip input 16x112x112."""
    return NetworkSpec("ssa_resnet18", classes, in_channels, (16, 112, 112),
                       _resnet18_items(in_channels, classes, ssa, 1),
                       ssa_config=ssa)


def spec_resnet18_3d_ref(classes: int = 101, in_channels: int = 3) -> NetworkSpec:
    """3-D-kernel counterpart of ssa_resnet18; parameter counting only."""
    return NetworkSpec("resnet18_3d_ref", classes, in_channels, (16, 112, 112),
                       _resnet18_items(in_channels, classes, None, 3),
                       ssa_config=None)


def _c3d_items(in_channels, classes, ssa, tk):
    widths = (64, 128, 256, 256, 256)
    items = []
    c_in = in_channels
    for i, c_out in enumerate(widths):
        items.append(ConvItem(c_in, c_out, 3, bias=True, bn=False,
                              ssa=ssa is not None, temporal_k=tk))
        if i == 0:
            items.append(Pool3dItem((1, 2, 2), (1, 2, 2)))
        else:
            items.append(Pool3dItem((2, 2, 2), (2, 2, 2)))
        c_in = c_out
    items += [
        FlattenItem(),
        DenseItem(256 * 1 * 4 * 4, 2048, relu=True),
        DenseItem(2048, 2048, relu=True),
        DenseItem(2048, classes),
    ]
    return tuple(items)


def spec_ssa_c3d(classes: int = 101, in_channels: int = 3,
                 ssa: SsaConfig | None = SsaConfig()) -> NetworkSpec:
    """Five-conv plain network (no residuals, no BN) on 16x128x128 clips."""
    return NetworkSpec("ssa_c3d", classes, in_channels, (16, 128, 128),
                       _c3d_items(in_channels, classes, ssa, 1), ssa_config=ssa)


def spec_c3d_3d_ref(classes: int = 101, in_channels: int = 3) -> NetworkSpec:
    """3-D-kernel counterpart of ssa_c3d; parameter counting only."""
    return NetworkSpec("c3d_3d_ref", classes, in_channels, (16, 128, 128),
                       _c3d_items(in_channels, classes, None, 3), ssa_config=None)


def spec_resnext8_3d_ref(classes: int = 40, in_channels: int = 1) -> NetworkSpec:
    """3-D-kernel counterpart of ssa_resnext8; parameter counting only."""
    base = spec_ssa_resnext8(classes, in_channels, None)
    items = []
    for it in base.items:
        if isinstance(it, BlockSpec):
            it = replace(it, temporal_k=it.k, ssa=None)
        elif isinstance(it, ConvItem):
            it = replace(it, temporal_k=it.k, ssa=False)
        items.append(it)
    return NetworkSpec("resnext8_3d_ref", classes, in_channels, base.input_size,
                       tuple(items), ssa_config=None)


NETWORKS = {
    "toy_ssa_net": spec_toy_ssa_net,
    "ssa_resnext8": spec_ssa_resnext8,
    "ssa_resnet18": spec_ssa_resnet18,
    "ssa_c3d": spec_ssa_c3d,
    "resnet18_3d_ref": spec_resnet18_3d_ref,
    "resnext8_3d_ref": spec_resnext8_3d_ref,
    "c3d_3d_ref": spec_c3d_3d_ref,
}


def network_spec(name: str, **kw) -> NetworkSpec:
    """Look up a registered architecture by name."""
    if name not in NETWORKS:
        raise SpecError(f"unknown network {name!r}; known: {sorted(NETWORKS)}")
    try:
        return NETWORKS[name](**{k: v for k, v in kw.items() if v is not None})
    except TypeError as exc:
        raise SpecError(f"bad override for {name}: {exc}") from exc


# ---------------------------------------------------------------------------
# plain-text spec format


def _fmt_ssa(cfg: SsaConfig | None) -> str:
    if cfg is None:
        return "none"
    return "all" if cfg.shift_cap is None else str(cfg.shift_cap)


def _parse_ssa(text: str) -> SsaConfig | None:
    if text == "none":
        return None
    if text == "all":
        return SsaConfig()
    try:
        return SsaConfig(int(text))
    except ValueError as e:
        raise SpecError(f"bad ssa policy {text!r}: use all, none, or an integer") from e


def render_network_spec(spec: NetworkSpec) -> str:
    """Serialize a spec to the line-oriented key=value format."""
    lines = [
        f"network={spec.name}",
        f"classes={spec.classes}",
        f"in_channels={spec.in_channels}",
        "input=" + "/".join(str(d) for d in spec.input_size),
        f"ssa={_fmt_ssa(spec.ssa_config)}",
    ]
    for it in spec.items:
        if isinstance(it, ConvItem):
            parts = [f"conv,in:{it.c_in},out:{it.c_out},k:{it.k},stride:{it.stride}",
                     f"pad:{it.pad}", f"groups:{it.groups}", f"bias:{int(it.bias)}",
                     f"bn:{int(it.bn)}", f"relu:{int(it.relu)}", f"ssa:{int(it.ssa)}",
                     f"tk:{it.temporal_k}"]
            lines.append("item=" + ",".join(parts))
        elif isinstance(it, BlockSpec):
            parts = [f"block,kind:{it.kind},in:{it.c_in},out:{it.c_out}"]
            if it.kind != "basic":
                parts.append(f"mid:{it.mid}")
            parts += [f"k:{it.k}", f"stride:{it.stride}", f"groups:{it.groups}",
                      f"tpool:{int(it.temporal_pool_here)}",
                      f"ssa:{int(it.ssa is not None)}", f"tk:{it.temporal_k}"]
            lines.append("item=" + ",".join(parts))
        elif isinstance(it, Pool3dItem):
            lines.append(
                "item=pool3d,kernel:%s,stride:%s"
                % ("/".join(map(str, it.kernel)), "/".join(map(str, it.stride)))
            )
        elif isinstance(it, TemporalPoolItem):
            k = "full" if it.kernel is None else str(it.kernel)
            s = "" if it.stride is None else f",stride:{it.stride}"
            lines.append(f"item=tpool,kernel:{k}{s}")
        elif isinstance(it, GlobalPoolItem):
            lines.append("item=gap")
        elif isinstance(it, FlattenItem):
            lines.append("item=flatten")
        elif isinstance(it, DenseItem):
            lines.append(
                f"item=dense,in:{it.d_in},out:{it.d_out},relu:{int(it.relu)},"
                f"bias:{int(it.bias)}"
            )
        else:
            raise SpecError(f"cannot render item {it!r}")
    return "\n".join(lines) + "\n"


def _kv_fields(body: str, what: str) -> dict[str, str]:
    out = {}
    for part in body.split(","):
        if not part:
            continue
        if ":" not in part:
            raise SpecError(f"bad field {part!r} in {what}")
        key, val = part.split(":", 1)
        out[key.strip()] = val.strip()
    return out


def _triple(text: str, what: str) -> tuple[int, int, int]:
    parts = text.split("/")
    if len(parts) != 3:
        raise SpecError(f"{what} must be three /-separated integers, got {text!r}")
    return tuple(int(p) for p in parts)  # type: ignore[return-value]


def parse_network_spec(text: str) -> NetworkSpec:
    """Parse the key=value network format (inverse of render_network_spec)."""
    header: dict[str, str] = {}
    raw_items: list[str] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SpecError(f"line {lineno}: expected key=value, got {line!r}")
        key, val = line.split("=", 1)
        key, val = key.strip(), val.strip()
        if key == "item":
            raw_items.append(val)
        elif key in ("network", "classes", "in_channels", "input", "ssa"):
            if key in header:
                raise SpecError(f"line {lineno}: duplicate key {key!r}")
            header[key] = val
        else:
            raise SpecError(f"line {lineno}: unknown key {key!r}")
    for req in ("network", "classes", "in_channels", "input"):
        if req not in header:
            raise SpecError(f"missing required key {req!r}")
    ssa_cfg = _parse_ssa(header.get("ssa", "all"))
    items: list[Item] = []
    for body in raw_items:
        kind = body.split(",", 1)[0].strip()
        fields = _kv_fields(body.split(",", 1)[1] if "," in body else "", kind)
        try:
            if kind == "conv":
                items.append(ConvItem(
                    int(fields["in"]), int(fields["out"]), int(fields["k"]),
                    int(fields.get("stride", 1)),
                    int(fields["pad"]) if "pad" in fields else None,
                    int(fields.get("groups", 1)),
                    bool(int(fields.get("bias", 0))),
                    bool(int(fields.get("bn", 1))),
                    bool(int(fields.get("relu", 1))),
                    bool(int(fields.get("ssa", 0))),
                    int(fields.get("tk", 1))))
            elif kind == "block":
                items.append(BlockSpec(
                    fields["kind"], int(fields["in"]), int(fields["out"]),
                    c_mid=int(fields["mid"]) if "mid" in fields else None,
                    k=int(fields.get("k", 3)), stride=int(fields.get("stride", 1)),
                    groups=int(fields.get("groups", 1)),
                    temporal_pool_here=bool(int(fields.get("tpool", 0))),
                    temporal_k=int(fields.get("tk", 1)),
                    ssa=ssa_cfg if int(fields.get("ssa", 1)) else None))
            elif kind == "pool3d":
                items.append(Pool3dItem(_triple(fields["kernel"], "kernel"),
                                        _triple(fields["stride"], "stride")))
            elif kind == "tpool":
                k = None if fields.get("kernel", "2") == "full" else int(fields["kernel"])
                s = int(fields["stride"]) if "stride" in fields else None
                items.append(TemporalPoolItem(k, s))
            elif kind == "gap":
                items.append(GlobalPoolItem())
            elif kind == "flatten":
                items.append(FlattenItem())
            elif kind == "dense":
                items.append(DenseItem(int(fields["in"]), int(fields["out"]),
                                       bool(int(fields.get("relu", 0))),
                                       bool(int(fields.get("bias", 1)))))
            else:
                raise SpecError(f"unknown item type {kind!r}")
        except KeyError as e:
            raise SpecError(f"item {kind!r} is missing field {e.args[0]!r}") from e
        except ValueError as e:
            raise SpecError(f"bad integer in item {body!r}: {e}") from e
    try:
        f, h, w = _triple(header["input"], "input")
        spec = NetworkSpec(header["network"], int(header["classes"]),
                           int(header["in_channels"]), (f, h, w), tuple(items),
                           ssa_config=ssa_cfg)
    except ValueError as e:
        raise SpecError(f"bad header value: {e}") from e
    return spec
