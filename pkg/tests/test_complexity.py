import numpy as np
import pytest

from upseg.complexity import (profile, report_to_csv, format_table,
                              upscale_overhead)
from upseg.errors import ShapeError, UsageError
from upseg.graph import (BackboneConfig, ModelGraph, Node, UpscaleStackConfig,
                         build_unet, build_upscale_stack, count_parameters,
                         forward_all_taps)
from upseg.tensor import Parameter, Tensor


def single_conv_graph(c_in, c_out, k, stride=1, padding=0):
    rng = np.random.default_rng(0)
    w = Parameter("conv.weight", Tensor(rng.normal(size=(c_out, c_in, k, k)),
                                        requires_grad=True))
    b = Parameter("conv.bias", Tensor(np.zeros(c_out), requires_grad=True))
    node = Node(name="conv", op="conv", inputs=("input",), weight="conv.weight",
                bias="conv.bias", stride=stride, padding=padding)
    backbone = BackboneConfig(in_channels=c_in, base_channels=c_out, depth=0,
                              num_classes=c_out)
    return ModelGraph(backbone=backbone, upscale=None, nodes=(node,),
                      params={p.name: p for p in (w, b)}, taps={0: "conv"})


def test_single_conv_macs_by_hand():
    # 8x8 output, 8 filters of 3x3 over 2 channels: 64 * 8 * 9 * 2 = 9216
    graph = single_conv_graph(c_in=2, c_out=8, k=3, padding=1)
    report = profile(graph, 8)
    assert report.total_macs == 9216
    assert report.total_params == 8 * 2 * 9 + 8
    assert report.total_act_bytes == 4 * 8 * 8 * 8
    (layer,) = report.layers
    assert layer.out_shape == (8, 8, 8)


def test_macs_scale_with_output_area():
    graph = single_conv_graph(c_in=1, c_out=4, k=3, padding=1)
    assert profile(graph, 16).total_macs == 4 * profile(graph, 8).total_macs


def test_profile_params_match_graph_enumeration():
    base = build_unet(BackboneConfig(in_channels=1, base_channels=4, depth=2,
                                     num_classes=2), seed=0)
    extended = build_upscale_stack(
        base, UpscaleStackConfig(num_stages=3, num_classes=2, use_skips=True),
        seed=1)
    for g in (base, extended):
        assert profile(g, 16).total_params == count_parameters(g)


def test_profiled_shapes_match_executed_shapes():
    base = build_unet(BackboneConfig(in_channels=1, base_channels=2, depth=1,
                                     num_classes=1), seed=0)
    graph = build_upscale_stack(
        base, UpscaleStackConfig(num_stages=2, use_skips=True), seed=1)
    report = profile(graph, 8)
    taps = forward_all_taps(graph, np.zeros((1, 1, 8, 8)))
    by_name = {l.name: l for l in report.layers}
    for stage, node_name in graph.taps.items():
        c, h, w = by_name[node_name].out_shape
        assert taps[stage].shape == (1, c, h, w)


def test_default_backbone_cost_ratios():
    graph = build_unet(BackboneConfig(), seed=0)
    macs = {r: profile(graph, r).total_macs for r in (16, 32, 80, 160, 320)}
    acts = {r: profile(graph, r).total_act_bytes for r in (16, 32, 80, 160, 320)}
    for table in (macs, acts):
        assert table[320] / table[160] == pytest.approx(4.0)
        assert table[160] / table[80] == pytest.approx(4.0)
        assert table[80] / table[32] == pytest.approx(6.25)
        assert table[32] / table[16] == pytest.approx(4.0)


def test_upscale_overhead_zero_for_zero_stages():
    base = build_unet(BackboneConfig(in_channels=1, base_channels=4, depth=2,
                                     num_classes=1), seed=0)
    same = build_upscale_stack(base, UpscaleStackConfig(num_stages=0), seed=1)
    o = upscale_overhead(profile(base, 8), profile(same, 8))
    assert o.params_delta == 0 and o.macs_delta == 0 and o.act_bytes_delta == 0


def test_upscale_overhead_counts_extension_parameters():
    base = build_unet(BackboneConfig(in_channels=1, base_channels=4, depth=2,
                                     num_classes=1), seed=0)
    extended = build_upscale_stack(base, UpscaleStackConfig(num_stages=4),
                                   seed=1)
    o = upscale_overhead(profile(base, 8), profile(extended, 8))
    assert o.params_delta == 60
    assert o.macs_delta > 0 and o.act_bytes_delta > 0
    assert o.act_bytes_relative > 0.0


def test_upscale_stack_macs_are_marginal_at_low_resolution():
    # the whole point of the cheap decoder: a single-channel stack adds
    # well under 1% of the backbone's multiply-accumulates
    base = build_unet(BackboneConfig(), seed=0)
    extended = build_upscale_stack(base, UpscaleStackConfig(num_stages=2),
                                   seed=1)
    o = upscale_overhead(profile(base, 160), profile(extended, 160))
    assert 0.0 < o.macs_relative < 0.01
    assert 0.0 < o.params_relative < 0.001


def test_overhead_requires_matching_resolution():
    base = build_unet(BackboneConfig(in_channels=1, base_channels=2, depth=1,
                                     num_classes=1), seed=0)
    with pytest.raises(UsageError):
        upscale_overhead(profile(base, 8), profile(base, 16))


def test_profile_rejects_bad_resolution():
    base = build_unet(BackboneConfig(in_channels=1, base_channels=2, depth=2,
                                     num_classes=1), seed=0)
    with pytest.raises(ShapeError):
        profile(base, 10)               # not a multiple of 2**depth
    with pytest.raises(ShapeError):
        profile(base, 0)


def test_csv_and_table_structure():
    graph = single_conv_graph(c_in=1, c_out=2, k=3, padding=1)
    report = profile(graph, 4)
    csv = report_to_csv(report)
    lines = csv.strip().split("\n")
    assert lines[0] == "layer,name,params,macs,act_bytes"
    assert lines[-1].startswith("total,,")
    assert len(lines) == 2 + len(report.layers)
    total_cells = lines[-1].split(",")
    assert int(total_cells[2]) == report.total_params
    assert int(total_cells[3]) == report.total_macs

    table = format_table(report)
    assert "input resolution: 4x4" in table
    assert "conv" in table and "total" in table


def test_pool_relu_concat_cost_nothing_but_activation_bytes():
    base = build_unet(BackboneConfig(in_channels=1, base_channels=2, depth=1,
                                     num_classes=1), seed=0)
    report = profile(base, 8)
    for layer in report.layers:
        if layer.op in ("pool", "relu", "concat"):
            assert layer.macs == 0 and layer.params == 0
            assert layer.act_bytes > 0
