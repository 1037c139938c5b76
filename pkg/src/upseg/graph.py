"""Model graphs: a configurable U-Net backbone plus cheap up-scaling stages.

A ModelGraph is a flat list of named nodes in execution order plus a dict of
named parameters. Keeping the graph declarative (rather than burying it in
``forward`` methods) lets the complexity profiler walk the exact same
structure analytically that training executes numerically.

Up-scaling stage ``s`` doubles resolution: a 2x2 stride-2 transposed
convolution followed by a 3x3 convolution, both carrying ``num_classes``
channels. The conv output is tap ``s`` — per-scale logits read by the summed
loss — and a relu of it feeds the next stage. Stage 1 consumes the backbone
head logits directly.

With skips enabled, a stage additionally receives the head logits stretched
to its working resolutions through a private chain of ``s`` transposed
convolutions plus one 3x3 convolution: the value after ``s - 1`` chain steps
is concatenated onto the stage's tconv input, the chain end onto the stage's
conv input, so both widen to twice the class channels. Stage 1 is never a
skip stage (its input already is the head), and stage 2 is exempt by default
because the extra connection there buys no quality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import (Parameter, Tensor, as_tensor, concat_channels, conv2d,
                     conv_transpose2d, maxpool2d, relu)


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int = 1
    base_channels: int = 64
    depth: int = 4
    num_classes: int = 1

    def validate(self) -> None:
        if self.in_channels < 1:
            raise ConfigError("backbone in_channels must be >= 1")
        if self.base_channels < 1:
            raise ConfigError("backbone base_channels must be >= 1")
        if self.depth < 1:
            raise ConfigError("backbone depth must be >= 1")
        if self.num_classes < 1:
            raise ConfigError("backbone num_classes must be >= 1")


@dataclass(frozen=True)
class UpscaleStackConfig:
    num_stages: int
    num_classes: int = 1
    use_skips: bool = False
    skip_exempt_stages: tuple[int, ...] = (2,)

    def validate(self) -> None:
        if self.num_stages < 0:
            raise ConfigError("upscale num_stages must be >= 0")
        if self.num_classes < 1:
            raise ConfigError("upscale num_classes must be >= 1")

    def skip_stages(self) -> tuple[int, ...]:
        """Stages that receive a skip chain, ascending."""
        if not self.use_skips:
            return ()
        return tuple(s for s in range(2, self.num_stages + 1)
                     if s not in self.skip_exempt_stages)


@dataclass(frozen=True)
class Node:
    name: str
    op: str                      # conv | tconv | pool | relu | concat
    inputs: tuple[str, ...]
    weight: str | None = None
    bias: str | None = None
    stride: int = 1
    padding: int = 0
    window: int = 0


@dataclass
class ModelGraph:
    backbone: BackboneConfig
    upscale: UpscaleStackConfig | None
    nodes: list[Node] = field(default_factory=list)
    params: dict[str, Parameter] = field(default_factory=dict)
    taps: dict[int, str] = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return self.backbone.num_classes

    @property
    def num_stages(self) -> int:
        return self.upscale.num_stages if self.upscale is not None else 0

    @property
    def input_multiple(self) -> int:
        """Input extents must be divisible by this (one halving per pool)."""
        return 2 ** self.backbone.depth

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())


def count_parameters(graph_or_params) -> int:
    params = (graph_or_params.parameters()
              if isinstance(graph_or_params, ModelGraph) else graph_or_params)
    return sum(p.size for p in params)


def analytic_upscale_params(num_classes: int, num_stages: int,
                            use_skips: bool = False,
                            skip_exempt_stages: tuple[int, ...] = (2,)) -> int:
    """Closed-form parameter count of the up-scaling stack alone.

    A plain stage costs 13*Nc^2 + 2*Nc (2x2 tconv plus 3x3 conv, Nc -> Nc,
    one bias per output channel). A skip stage doubles both layers' input
    channels and adds its private chain of s tconvs and one conv.
    """
    nc, m = num_classes, num_stages
    cfg = UpscaleStackConfig(num_stages=m, num_classes=nc, use_skips=use_skips,
                             skip_exempt_stages=skip_exempt_stages)
    cfg.validate()
    skip = set(cfg.skip_stages())
    total = 0
    for s in range(1, m + 1):
        if s in skip:
            total += (4 * 2 * nc + 1) * nc + (9 * 2 * nc + 1) * nc
            total += s * (4 * nc + 1) * nc + (9 * nc + 1) * nc
        else:
            total += 13 * nc * nc + 2 * nc
    return total


# ---------------------------------------------------------------------------
# construction


class _Builder:
    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.nodes: list[Node] = []
        self.params: dict[str, Parameter] = {}

    def _add_param(self, name: str, data: np.ndarray) -> str:
        if name in self.params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True)
        self.params[name] = Parameter(name, t)
        return name

    def conv(self, name, src, c_in, c_out, k, stride=1, padding=0):
        bound = math.sqrt(6.0 / (c_in * k * k))
        w = self._add_param(f"{name}.weight",
                            self.rng.uniform(-bound, bound, size=(c_out, c_in, k, k)))
        b = self._add_param(f"{name}.bias", np.zeros(c_out))
        self.nodes.append(Node(name, "conv", (src,), w, b, stride, padding))
        return name

    def tconv(self, name, src, c_in, c_out, k, stride):
        bound = math.sqrt(6.0 / (c_in * k * k))
        w = self._add_param(f"{name}.weight",
                            self.rng.uniform(-bound, bound, size=(c_in, c_out, k, k)))
        b = self._add_param(f"{name}.bias", np.zeros(c_out))
        self.nodes.append(Node(name, "tconv", (src,), w, b, stride))
        return name

    def pool(self, name, src):
        self.nodes.append(Node(name, "pool", (src,), window=2, stride=2))
        return name

    def relu(self, name, src):
        self.nodes.append(Node(name, "relu", (src,)))
        return name

    def concat(self, name, srcs):
        self.nodes.append(Node(name, "concat", tuple(srcs)))
        return name


def build_unet(cfg: BackboneConfig, seed: int = 0) -> ModelGraph:
    """Standard U-Net: double-conv encoder levels, 2x2 max-pool halvings,
    tconv + skip-concat decoder levels, 1x1 logit head (tap 0)."""
    cfg.validate()
    b = _Builder(seed)
    ch = [cfg.base_channels * 2 ** d for d in range(cfg.depth + 1)]

    cur, c_cur = "input", cfg.in_channels
    enc_out = []
    for d in range(cfg.depth):
        cur = b.conv(f"enc.{d}.conv1", cur, c_cur, ch[d], 3, padding=1)
        cur = b.relu(f"enc.{d}.relu1", cur)
        cur = b.conv(f"enc.{d}.conv2", cur, ch[d], ch[d], 3, padding=1)
        cur = b.relu(f"enc.{d}.relu2", cur)
        enc_out.append(cur)
        cur = b.pool(f"pool.{d}", cur)
        c_cur = ch[d]

    cur = b.conv("bottleneck.conv1", cur, c_cur, ch[-1], 3, padding=1)
    cur = b.relu("bottleneck.relu1", cur)
    cur = b.conv("bottleneck.conv2", cur, ch[-1], ch[-1], 3, padding=1)
    cur = b.relu("bottleneck.relu2", cur)

    c_cur = ch[-1]
    for d in reversed(range(cfg.depth)):
        cur = b.tconv(f"dec.{d}.up", cur, c_cur, ch[d], 2, stride=2)
        cur = b.concat(f"dec.{d}.cat", (cur, enc_out[d]))
        cur = b.conv(f"dec.{d}.conv1", cur, 2 * ch[d], ch[d], 3, padding=1)
        cur = b.relu(f"dec.{d}.relu1", cur)
        cur = b.conv(f"dec.{d}.conv2", cur, ch[d], ch[d], 3, padding=1)
        cur = b.relu(f"dec.{d}.relu2", cur)
        c_cur = ch[d]

    head = b.conv("head", cur, ch[0], cfg.num_classes, 1)
    return ModelGraph(backbone=cfg, upscale=None, nodes=b.nodes,
                      params=b.params, taps={0: head})


def _copy_graph(graph: ModelGraph) -> tuple[list[Node], dict[str, Parameter]]:
    params = {}
    for name, p in graph.params.items():
        t = Tensor(p.tensor.data.copy(), requires_grad=True)
        params[name] = Parameter(name, t)
    return list(graph.nodes), params


def build_upscale_stack(base: ModelGraph, cfg: UpscaleStackConfig,
                        seed: int = 1) -> ModelGraph:
    """Return a new graph: a deep copy of ``base`` with ``cfg.num_stages``
    up-scaling stages appended after its tap 0. ``base`` is left untouched."""
    cfg.validate()
    if cfg.num_classes != base.num_classes:
        raise ConfigError(f"upscale num_classes {cfg.num_classes} does not "
                          f"match backbone num_classes {base.num_classes}")
    if base.upscale is not None:
        raise ConfigError("base graph already carries an upscale stack")
    nodes, params = _copy_graph(base)
    b = _Builder(seed)
    b.nodes, b.params = nodes, params

    nc = cfg.num_classes
    head = base.taps[0]
    taps = {0: head}
    skip_set = set(cfg.skip_stages())

    cur = head                                   # head logits feed stage 1 raw
    for s in range(1, cfg.num_stages + 1):
        if s in skip_set:
            chain = head
            mid = None
            for k in range(1, s + 1):
                chain = b.tconv(f"up.{s}.skip.t{k}", chain, nc, nc, 2, stride=2)
                if k == s - 1:
                    mid = chain                  # at the stage's input resolution
            end = b.conv(f"up.{s}.skip.conv", chain, nc, nc, 3, padding=1)
            cat_in = b.concat(f"up.{s}.cat_in", (cur, mid))
            up = b.tconv(f"up.{s}.tconv", cat_in, 2 * nc, nc, 2, stride=2)
            cat_out = b.concat(f"up.{s}.cat_out", (up, end))
            cur = b.conv(f"up.{s}.conv", cat_out, 2 * nc, nc, 3, padding=1)
        else:
            up = b.tconv(f"up.{s}.tconv", cur, nc, nc, 2, stride=2)
            cur = b.conv(f"up.{s}.conv", up, nc, nc, 3, padding=1)
        taps[s] = cur                            # per-scale logits
        if s < cfg.num_stages:
            cur = b.relu(f"up.{s}.act", cur)

    return ModelGraph(backbone=base.backbone, upscale=cfg, nodes=b.nodes,
                      params=b.params, taps=taps)


# ---------------------------------------------------------------------------
# execution


def _check_input(graph: ModelGraph, x: Tensor) -> None:
    if x.data.ndim != 4:
        raise ShapeError("model input must be N x C x H x W")
    n, c, h, w = x.shape
    if c != graph.backbone.in_channels:
        raise ShapeError(f"model expects {graph.backbone.in_channels} input "
                         f"channels, got {c}")
    mult = graph.input_multiple
    if h % mult or w % mult or h < mult or w < mult:
        raise ShapeError(f"input extents {h}x{w} must be positive multiples "
                         f"of {mult} (backbone depth {graph.backbone.depth})")


def forward_all_taps(graph: ModelGraph, x) -> dict[int, Tensor]:
    """Run the graph once and return every tap's logits, keyed by stage."""
    x = as_tensor(x)
    _check_input(graph, x)
    values: dict[str, Tensor] = {"input": x}
    for node in graph.nodes:
        ins = [values[name] for name in node.inputs]
        if node.op == "conv":
            w, bias = graph.params[node.weight], graph.params[node.bias]
            out = conv2d(ins[0], w.tensor, bias.tensor, node.stride, node.padding)
        elif node.op == "tconv":
            w, bias = graph.params[node.weight], graph.params[node.bias]
            out = conv_transpose2d(ins[0], w.tensor, bias.tensor, node.stride)
        elif node.op == "pool":
            out = maxpool2d(ins[0], node.window, node.stride)
        elif node.op == "relu":
            out = relu(ins[0])
        elif node.op == "concat":
            out = concat_channels(ins)
        else:
            raise ConfigError(f"unknown node op {node.op!r}")
        values[node.name] = out
    return {i: values[name] for i, name in graph.taps.items()}


def forward_logits(graph: ModelGraph, x) -> Tensor:
    """Logits at the finest tap (the model's actual prediction scale)."""
    taps = forward_all_taps(graph, x)
    return taps[max(taps)]
