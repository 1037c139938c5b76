"""Static complexity analysis of a ModelGraph: parameters, multiply-
accumulates and activation memory, per layer and in total, for one image.

No tensors are allocated — the walk infers every node's output shape from
the graph structure alone, so profiling a 1024x1024 configuration is as
cheap as a 16x16 one.

Cost model (single image, single forward pass):
  * conv MACs  = H_out * W_out * C_out * K_h * K_w * C_in
  * tconv MACs = H_in * W_in * C_in * K_h * K_w * C_out
  * pool, relu and concat count zero MACs
  * activation bytes = 4 per output scalar (single-precision convention),
    summed over every node output; the input tensor is not counted, and
    parameter memory is reported separately via the params column.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

from .errors import ShapeError, UsageError
from .graph import ModelGraph


@dataclass(frozen=True)
class LayerCost:
    name: str
    op: str
    out_shape: tuple[int, int, int]          # (C, H, W)
    params: int
    macs: int
    act_bytes: int


@dataclass(frozen=True)
class ComplexityReport:
    input_resolution: tuple[int, int]
    layers: tuple[LayerCost, ...]

    @property
    def total_params(self) -> int:
        return sum(l.params for l in self.layers)

    @property
    def total_macs(self) -> int:
        return sum(l.macs for l in self.layers)

    @property
    def total_act_bytes(self) -> int:
        return sum(l.act_bytes for l in self.layers)


def profile(graph: ModelGraph, input_resolution) -> ComplexityReport:
    """Walk the graph once, analytically, at the given input resolution."""
    if isinstance(input_resolution, int):
        h = w = input_resolution
    else:
        h, w = input_resolution
    mult = graph.input_multiple
    if h % mult or w % mult or h < mult or w < mult:
        raise ShapeError(f"input resolution {h}x{w} must be a positive "
                         f"multiple of {mult}")

    shapes: dict[str, tuple[int, int, int]] = {
        "input": (graph.backbone.in_channels, h, w)}
    layers = []
    for node in graph.nodes:
        ins = [shapes[n] for n in node.inputs]
        c_in, hi, wi = ins[0]
        params = macs = 0
        if node.op == "conv":
            wshape = graph.params[node.weight].tensor.shape
            c_out, wc_in, kh, kw = wshape
            ho = (hi + 2 * node.padding - kh) // node.stride + 1
            wo = (wi + 2 * node.padding - kw) // node.stride + 1
            out = (c_out, ho, wo)
            params = graph.params[node.weight].size + graph.params[node.bias].size
            macs = ho * wo * c_out * kh * kw * wc_in
        elif node.op == "tconv":
            wshape = graph.params[node.weight].tensor.shape
            wc_in, c_out, kh, kw = wshape
            out = (c_out, (hi - 1) * node.stride + kh, (wi - 1) * node.stride + kw)
            params = graph.params[node.weight].size + graph.params[node.bias].size
            macs = hi * wi * wc_in * kh * kw * c_out
        elif node.op == "pool":
            out = (c_in, (hi - node.window) // node.stride + 1,
                   (wi - node.window) // node.stride + 1)
        elif node.op == "relu":
            out = ins[0]
        elif node.op == "concat":
            for c, hh, ww in ins[1:]:
                if (hh, ww) != (hi, wi):
                    raise ShapeError(f"concat extent mismatch at {node.name}")
            out = (sum(c for c, _, _ in ins), hi, wi)
        else:
            raise ShapeError(f"unknown node op {node.op!r}")
        shapes[node.name] = out
        act = 4 * out[0] * out[1] * out[2]
        layers.append(LayerCost(node.name, node.op, out, params, macs, act))
    return ComplexityReport(input_resolution=(h, w), layers=tuple(layers))


@dataclass(frozen=True)
class OverheadSummary:
    params_delta: int
    macs_delta: int
    act_bytes_delta: int
    params_relative: float
    macs_relative: float
    act_bytes_relative: float


def upscale_overhead(base: ComplexityReport,
                     extended: ComplexityReport) -> OverheadSummary:
    """Absolute and relative cost added by the up-scaling stack."""
    if base.input_resolution != extended.input_resolution:
        raise UsageError(f"reports profiled at different input resolutions: "
                         f"{base.input_resolution} vs {extended.input_resolution}")
    dp = extended.total_params - base.total_params
    dm = extended.total_macs - base.total_macs
    da = extended.total_act_bytes - base.total_act_bytes
    return OverheadSummary(
        params_delta=dp, macs_delta=dm, act_bytes_delta=da,
        params_relative=dp / base.total_params,
        macs_relative=dm / base.total_macs,
        act_bytes_relative=da / base.total_act_bytes,
    )


def report_to_csv(report: ComplexityReport) -> str:
    """CSV rows: layer,name,params,macs,act_bytes (plus a totals row)."""
    buf = io.StringIO()
    buf.write("layer,name,params,macs,act_bytes\n")
    for i, l in enumerate(report.layers):
        buf.write(f"{i},{l.name},{l.params},{l.macs},{l.act_bytes}\n")
    buf.write(f"total,,{report.total_params},{report.total_macs},"
              f"{report.total_act_bytes}\n")
    return buf.getvalue()


def format_table(report: ComplexityReport) -> str:
    """Human-readable per-layer table for terminal output."""
    h, w = report.input_resolution
    name_w = max(len("name"), *(len(l.name) for l in report.layers))
    lines = [f"input resolution: {h}x{w}",
             f"{'name':<{name_w}}  {'op':<6}  {'output':<16}  "
             f"{'params':>10}  {'macs':>14}  {'act_bytes':>12}"]
    for l in report.layers:
        c, hh, ww = l.out_shape
        lines.append(f"{l.name:<{name_w}}  {l.op:<6}  {f'{c}x{hh}x{ww}':<16}  "
                     f"{l.params:>10}  {l.macs:>14}  {l.act_bytes:>12}")
    lines.append(f"{'total':<{name_w}}  {'':<6}  {'':<16}  "
                 f"{report.total_params:>10}  {report.total_macs:>14}  "
                 f"{report.total_act_bytes:>12}")
    return "\n".join(lines)
