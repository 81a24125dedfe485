"""Block/network builders: frozen parameter counts, shapes, spec text."""

import numpy as np
import pytest

from ssanet import (
    BlockSpec,
    ConvItem,
    SpecError,
    SsaConfig,
    build_network,
    build_ssa_block,
    network_spec,
    param_breakdown,
    param_count,
    parse_network_spec,
    render_network_spec,
)
from ssanet.blocks import NETWORKS, network_output_shape, validate_network

from conftest import rand_map

FROZEN_TOTALS = {
    "toy_ssa_net": 23_100,
    "ssa_resnext8": 3_325_160,
    "resnext8_3d_ref": 3_713_384,
    "ssa_resnet18": 11_228_325,
    "resnet18_3d_ref": 33_255_717,
    "ssa_c3d": 14_344_933,
    "c3d_3d_ref": 17_444_965,
}

BUILDABLE = ("toy_ssa_net", "ssa_resnext8", "ssa_resnet18", "ssa_c3d")


# ------------------------------------------------------------ parameter counts

@pytest.mark.parametrize("name,total", sorted(FROZEN_TOTALS.items()))
def test_frozen_parameter_totals(name, total):
    assert param_count(network_spec(name)) == total


def test_registry_is_complete():
    assert sorted(NETWORKS) == sorted(FROZEN_TOTALS)


@pytest.mark.parametrize("name", BUILDABLE)
def test_built_network_matches_static_count(name):
    spec = network_spec(name)
    net = build_network(spec, seed=0)
    assert net.param_count() == param_count(spec)


def test_breakdown_sums_to_total():
    for name in FROZEN_TOTALS:
        rows = param_breakdown(network_spec(name))
        assert sum(r[2] for r in rows) == FROZEN_TOTALS[name]


def test_single_kernel_weight_ratio_is_exactly_three():
    flat = ConvItem(64, 64, 3, bn=False)
    cubed = ConvItem(64, 64, 3, bn=False, temporal_k=3)
    assert param_count(flat) == 64 * 64 * 9 == 36_864
    assert param_count(cubed) == 3 * param_count(flat) == 110_592


@pytest.mark.parametrize(
    "slim,wide,stem_ratio",
    [
        ("ssa_resnet18", "resnet18_3d_ref", 7),
        ("ssa_resnext8", "resnext8_3d_ref", 3),
        ("ssa_c3d", "c3d_3d_ref", 3),
    ],
)
def test_paired_conv_weight_ratios(slim, wide, stem_ratio):
    """Every spatial conv in a cube-kernel twin weighs exactly k times more."""
    a = {name: n for name, kind, n in param_breakdown(network_spec(slim)) if kind == "conv_spatial"}
    b = {name: n for name, kind, n in param_breakdown(network_spec(wide)) if kind == "conv_spatial"}
    assert a.keys() == b.keys() and a
    for name in a:
        want = stem_ratio if name == "conv1" else 3
        assert b[name] == want * a[name], name


def test_pointwise_convs_cost_the_same_in_both_variants():
    a = {n: p for n, kind, p in param_breakdown(network_spec("ssa_resnext8")) if kind == "conv_point"}
    b = {n: p for n, kind, p in param_breakdown(network_spec("resnext8_3d_ref")) if kind == "conv_point"}
    assert a == b and a


def test_temporal_mixing_adds_zero_parameters():
    rows = param_breakdown(network_spec("ssa_resnext8"))
    ssa_rows = [r for r in rows if r[1] == "ssa"]
    assert ssa_rows and all(r[2] == 0 for r in ssa_rows)


# -------------------------------------------------------------- block behavior

def test_stride_one_block_preserves_shape():
    bs = BlockSpec(kind="basic", c_in=16, c_out=16)
    layer = build_ssa_block(bs, rng=np.random.default_rng(0))
    x = rand_map(np.random.default_rng(1), (2, 16, 4, 8, 8))
    assert layer.forward(x, training=True).shape == x.shape


def test_downsampling_block_halves_every_axis():
    bs = BlockSpec(kind="bottleneck", c_in=64, c_out=256, stride=2, temporal_pool_here=True)
    layer = build_ssa_block(bs, rng=np.random.default_rng(0))
    x = rand_map(np.random.default_rng(2), (1, 64, 8, 16, 16))
    assert layer.forward(x, training=True).shape == (1, 256, 4, 8, 8)


def test_block_shape_contract_random_specs():
    rng = np.random.default_rng(3)
    for _ in range(12):
        kind = ("basic", "bottleneck", "resnext")[int(rng.integers(3))]
        c_in = int(rng.choice([8, 16]))
        c_out = int(rng.choice([8, 16, 32]))
        stride = int(rng.choice([1, 2]))
        tpool = bool(rng.random() < 0.4) and stride == 2
        groups = 4 if kind == "resnext" else 1
        bs = BlockSpec(kind=kind, c_in=c_in, c_out=c_out, stride=stride,
                       groups=groups, temporal_pool_here=tpool)
        layer = build_ssa_block(bs, rng=rng)
        f, h, w = 4, 8, 8
        out = layer.forward(rand_map(rng, (2, c_in, f, h, w)), training=True)
        want_f = f // 2 if tpool else f
        assert out.shape == (2, c_out, want_f, h // stride, w // stride)


def test_zeroed_main_path_leaves_identity_shortcut():
    bs = BlockSpec(kind="basic", c_in=8, c_out=8)
    layer = build_ssa_block(bs, rng=np.random.default_rng(4))
    for name, p in layer.named_parameters():
        if name == "main.conv2.weight":
            p.data[...] = 0.0
    x = rand_map(np.random.default_rng(5), (2, 8, 3, 6, 6))
    np.testing.assert_array_equal(layer.forward(x, training=True), x)


def test_block_frame_shuffle_equivariance_without_mixing():
    # with mixing disabled and no temporal pooling, all ops act framewise,
    # so shuffling frames before or after the block agrees to float noise
    rng = np.random.default_rng(6)
    bs = BlockSpec(kind="basic", c_in=8, c_out=8, ssa=SsaConfig.fixed(0))
    layer = build_ssa_block(bs, rng=rng)
    x = rand_map(rng, (2, 8, 5, 6, 6))
    perm = rng.permutation(5)
    a = layer.forward(x[:, :, perm], training=True)
    b = layer.forward(x, training=True)[:, :, perm]
    np.testing.assert_allclose(a, b, rtol=1e-4, atol=1e-5)


def test_block_convs_carry_no_bias():
    layer = build_ssa_block(BlockSpec(kind="resnext", c_in=16, c_out=16, groups=8),
                            rng=np.random.default_rng(7))
    names = [n for n, _ in layer.named_parameters()]
    assert not any(n.endswith("conv1.bias") or n.endswith("conv2.bias") for n in names)
    assert any(n.endswith("_bn.bias") for n in names)


def test_block_spec_validation():
    with pytest.raises(SpecError):
        BlockSpec(kind="fancy", c_in=8, c_out=8)
    with pytest.raises(SpecError):
        BlockSpec(kind="resnext", c_in=8, c_out=8, groups=3)  # 3 does not divide mid
    with pytest.raises(SpecError):
        BlockSpec(kind="basic", c_in=8, c_out=8, temporal_pool_here=True)  # needs stride
    with pytest.raises(SpecError):
        BlockSpec(kind="basic", c_in=8, c_out=8, temporal_k=2)


# ------------------------------------------------------------- whole networks

@pytest.mark.parametrize("name", sorted(FROZEN_TOTALS))
def test_registry_specs_validate(name):
    validate_network(network_spec(name))


def test_toy_network_forward_shape():
    net = build_network("toy_ssa_net", seed=0)
    spec = network_spec("toy_ssa_net")
    x = rand_map(np.random.default_rng(8), (3, 1, *spec.input_size))
    out = net.forward(x, training=True)
    assert out.shape == (3, spec.classes)
    assert out.shape == network_output_shape(spec, batch=3)


def test_cube_kernel_references_do_not_build():
    with pytest.raises(SpecError):
        build_network("resnet18_3d_ref", seed=0)


def test_build_overrides():
    net = build_network("toy_ssa_net", seed=0, classes=7)
    assert net.spec.classes == 7
    x = rand_map(np.random.default_rng(9), (2, 1, *net.spec.input_size))
    assert net.forward(x, training=False).shape == (2, 7)
    with pytest.raises(SpecError):
        build_network("toy_ssa_net", seed=0, flavor="spicy")
    with pytest.raises(SpecError):
        network_spec("no_such_net")


def test_mixing_policy_override_reaches_every_stage():
    all_on = build_network("toy_ssa_net", seed=0, ssa=SsaConfig.all_shifts())
    all_off = build_network("toy_ssa_net", seed=0, ssa=SsaConfig.fixed(0))
    x = rand_map(np.random.default_rng(10), (2, 1, 8, 16, 16))
    assert not np.array_equal(
        all_on.forward(x, training=False), all_off.forward(x, training=False)
    )


def test_same_seed_same_weights():
    a = build_network("toy_ssa_net", seed=3)
    b = build_network("toy_ssa_net", seed=3)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)


# ------------------------------------------------------------------- spec text

@pytest.mark.parametrize("name", sorted(FROZEN_TOTALS))
def test_spec_text_round_trip_is_canonical(name):
    text = render_network_spec(network_spec(name))
    again = render_network_spec(parse_network_spec(text))
    assert text == again


def test_parsed_spec_counts_match():
    for name in FROZEN_TOTALS:
        spec = parse_network_spec(render_network_spec(network_spec(name)))
        assert param_count(spec) == FROZEN_TOTALS[name]


def test_spec_text_error_paths():
    good = render_network_spec(network_spec("toy_ssa_net"))
    with pytest.raises(SpecError):
        parse_network_spec(good.replace("classes=", "klasses="))
    with pytest.raises(SpecError):
        parse_network_spec("network=x\n")
    with pytest.raises(SpecError):
        parse_network_spec(good + "item=kind:warp\n")
    with pytest.raises(SpecError):
        parse_network_spec(good.replace("ssa=", "ssa=sometimes"))
