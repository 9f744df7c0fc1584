"""Layer-graph intermediate representation for the segmentation network.

A graph is a DAG of named nodes over named input ports. Channel counts and
spatial dims are inferred, never stored per node; same-padding convs produce
ceil(in / stride) positions per spatial dim.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace
from typing import Union

from .tensor import QuantSpec


class GraphError(ValueError):
    """Structural problem in a layer graph (cycle, dangling edge, bad dims)."""


# ---------------------------------------------------------------------------
# layer kinds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Conv2D:
    kernel: int
    out_channels: int | None = None  # None for depthwise (out = in)
    stride: int = 1
    dilation: int = 1
    mode: str = "standard"  # standard | depthwise | pointwise
    bias: bool = False

    def __post_init__(self) -> None:
        if self.kernel < 1 or self.stride < 1 or self.dilation < 1:
            raise GraphError("kernel, stride and dilation must all be >= 1")
        if self.mode not in ("standard", "depthwise", "pointwise"):
            raise GraphError(f"unknown conv mode {self.mode!r}")
        if self.mode == "pointwise" and (self.kernel != 1 or self.dilation != 1):
            raise GraphError("pointwise convs require kernel 1 and dilation 1")
        if self.mode == "depthwise":
            if self.out_channels is not None:
                raise GraphError("depthwise convs keep their channel count")
        elif self.out_channels is None or self.out_channels < 1:
            raise GraphError("out_channels must be >= 1")

    @property
    def effective_kernel(self) -> int:
        return self.dilation * (self.kernel - 1) + 1


@dataclass(frozen=True)
class BatchNorm:
    """Per-channel affine y = scale*x + shift; parameters live in the container."""


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Sigmoid:
    pass


@dataclass(frozen=True)
class GlobalAvgPool:
    pass


@dataclass(frozen=True)
class BilinearResize:
    scale: float

    def __post_init__(self) -> None:
        if self.scale not in (0.5, 8, 8.0):
            raise GraphError(f"resize scale must be 1/2 or 8, got {self.scale}")


@dataclass(frozen=True)
class ElemAdd:
    pass


@dataclass(frozen=True)
class ElemMul:
    """Elementwise product; one input may be a broadcast 1 x 1 x C gate."""


@dataclass(frozen=True)
class Concat:
    """Channel-axis concatenation of same-resolution maps."""


LayerKind = Union[
    Conv2D,
    BatchNorm,
    ReLU,
    Sigmoid,
    GlobalAvgPool,
    BilinearResize,
    ElemAdd,
    ElemMul,
    Concat,
]


@dataclass(frozen=True)
class Node:
    name: str
    op: LayerKind
    inputs: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.name:
            raise GraphError("node names must be non-empty")
        object.__setattr__(self, "inputs", tuple(self.inputs))


# ---------------------------------------------------------------------------
# graph container
# ---------------------------------------------------------------------------

Dims = tuple[int, int, int]


@dataclass(frozen=True)
class NetworkGraph:
    """Nodes over named input ports; validated as a reachable DAG on build.

    ``quant`` (optional) maps node or input-port names to the QuantSpec of the
    value they produce; present only after network quantization.
    """

    inputs: dict[str, Dims]
    nodes: tuple[Node, ...]
    outputs: tuple[str, ...]
    quant: dict[str, QuantSpec] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", dict(self.inputs))
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        if not self.inputs:
            raise GraphError("graph needs at least one input port")
        for port, dims in self.inputs.items():
            if len(dims) != 3 or min(dims) < 1:
                raise GraphError(f"input port {port!r} has bad dims {dims}")
        names = set(self.inputs)
        for node in self.nodes:
            if node.name in names:
                raise GraphError(f"duplicate name {node.name!r}")
            names.add(node.name)
        known = set(self.inputs) | {n.name for n in self.nodes}
        for node in self.nodes:
            if not node.inputs:
                raise GraphError(f"node {node.name!r} has no inputs")
            for ref in node.inputs:
                if ref not in known:
                    raise GraphError(f"node {node.name!r} references unknown {ref!r}")
        if not self.outputs:
            raise GraphError("graph needs at least one output")
        for out in self.outputs:
            if out not in known or out in self.inputs:
                raise GraphError(f"output {out!r} is not a node")
        order = topo_order(self)  # raises on cycles
        reachable = set(self.inputs)
        for name in order:
            node = self.node(name)
            if all(ref in reachable for ref in node.inputs):
                reachable.add(name)
        missing = {n.name for n in self.nodes} - reachable
        if missing:
            raise GraphError(f"nodes unreachable from inputs: {sorted(missing)}")

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    @property
    def node_map(self) -> dict[str, Node]:
        return {n.name: n for n in self.nodes}

    def consumers(self, name: str) -> list[str]:
        out = [n.name for n in self.nodes if name in n.inputs]
        return sorted(out)

    def with_quant(self, quant: dict[str, QuantSpec]) -> "NetworkGraph":
        return replace(self, quant=dict(quant))


def topo_order(g: NetworkGraph) -> list[str]:
    """Deterministic topological order of node names, ties broken by name."""
    indeg: dict[str, int] = {}
    node_map = {n.name: n for n in g.nodes}
    dependents: dict[str, list[str]] = {}
    for node in g.nodes:
        count = 0
        for ref in node.inputs:
            if ref in node_map:
                count += 1
                dependents.setdefault(ref, []).append(node.name)
        indeg[node.name] = count
    ready = [name for name, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        name = heapq.heappop(ready)
        order.append(name)
        for dep in dependents.get(name, ()):
            indeg[dep] -= 1
            if indeg[dep] == 0:
                heapq.heappush(ready, dep)
    if len(order) != len(g.nodes):
        stuck = sorted(set(node_map) - set(order))
        raise GraphError(f"cycle detected involving {stuck}")
    return order


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def infer_shapes(
    g: NetworkGraph, input_dims: dict[str, Dims] | None = None
) -> dict[str, Dims]:
    """Dims of every value (input ports and node outputs), validated."""
    dims: dict[str, Dims] = dict(g.inputs)
    if input_dims:
        for port, d in input_dims.items():
            if port not in dims:
                raise GraphError(f"unknown input port {port!r}")
            dims[port] = d
    for name in topo_order(g):
        node = g.node(name)
        ins = [dims[ref] for ref in node.inputs]
        dims[name] = _node_out_dims(node, ins)
    return dims


def _node_out_dims(node: Node, ins: list[Dims]) -> Dims:
    op = node.op
    if isinstance(op, Conv2D):
        (h, w, c) = _sole(node, ins)
        oh, ow = _ceil_div(h, op.stride), _ceil_div(w, op.stride)
        if op.mode == "depthwise":
            return (oh, ow, c)
        return (oh, ow, int(op.out_channels))
    if isinstance(op, (BatchNorm, ReLU, Sigmoid)):
        return _sole(node, ins)
    if isinstance(op, GlobalAvgPool):
        (_, _, c) = _sole(node, ins)
        return (1, 1, c)
    if isinstance(op, BilinearResize):
        (h, w, c) = _sole(node, ins)
        if op.scale == 0.5 and (h % 2 or w % 2):
            raise GraphError(f"{node.name!r}: half resize needs even dims, got {h}x{w}")
        oh = max(1, int(h * op.scale + 0.5))
        ow = max(1, int(w * op.scale + 0.5))
        return (oh, ow, c)
    if isinstance(op, ElemAdd):
        if len(ins) != 2 or ins[0] != ins[1]:
            raise GraphError(f"{node.name!r}: ElemAdd needs two identical dims, got {ins}")
        return ins[0]
    if isinstance(op, ElemMul):
        if len(ins) != 2:
            raise GraphError(f"{node.name!r}: ElemMul needs two inputs")
        a, b = ins
        if a == b:
            return a
        full, gate = (a, b) if b[:2] == (1, 1) else (b, a)
        if gate[:2] != (1, 1) or gate[2] != full[2]:
            raise GraphError(
                f"{node.name!r}: ElemMul wants H x W x C with a 1 x 1 x C gate, got {ins}"
            )
        return full
    if isinstance(op, Concat):
        if len(ins) < 2:
            raise GraphError(f"{node.name!r}: Concat needs at least two inputs")
        h, w = ins[0][0], ins[0][1]
        for d in ins:
            if (d[0], d[1]) != (h, w):
                raise GraphError(f"{node.name!r}: Concat resolution mismatch {ins}")
        return (h, w, sum(d[2] for d in ins))
    raise GraphError(f"{node.name!r}: unknown op {type(op).__name__}")


def _sole(node: Node, ins: list[Dims]) -> Dims:
    if len(ins) != 1:
        raise GraphError(f"{node.name!r}: expected exactly one input, got {len(ins)}")
    return ins[0]


# ---------------------------------------------------------------------------
# reference network
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RoadNetConfig:
    """Reference two-branch segmentation network.

    Full-resolution input feeds the spatial-detail branch directly; the context
    branch works on a half-size copy and ends one eighth below the input, where
    the two branches fuse. Every hidden channel count stays a multiple of the
    32-lane compute width.
    """

    height: int = 280
    width: int = 960
    in_channels: int = 3
    stem_channels: int = 32
    stage_channels: tuple[int, int] = (64, 64)
    aspp_rates: tuple[int, ...] = (2, 4, 8, 16)
    aspp_channels: int = 32
    spatial_channels: tuple[int, int, int, int] = (32, 32, 64, 64)
    spatial_strides: tuple[int, int, int, int] = (2, 2, 2, 1)
    fusion_channels: int = 32

    def __post_init__(self) -> None:
        if self.height % 8 or self.width % 8:
            raise GraphError("input dims must be divisible by 8")
        hidden = (
            (self.stem_channels,)
            + self.stage_channels
            + (self.aspp_channels,)
            + self.spatial_channels
            + (self.fusion_channels,)
        )
        for c in hidden:
            if c % 32:
                raise GraphError(f"hidden channel count {c} not a multiple of 32")


def build_roadnet_rt(cfg: RoadNetConfig = RoadNetConfig()) -> NetworkGraph:
    """Assemble the reference graph from the config."""
    nodes: list[Node] = []

    def add(name: str, op: LayerKind, *inputs: str) -> str:
        nodes.append(Node(name, op, tuple(inputs)))
        return name

    def conv_bn_relu(name: str, op: Conv2D, src: str) -> str:
        c = add(name, op, src)
        b = add(f"{name}_bn", BatchNorm(), c)
        return add(f"{name}_relu", ReLU(), b)

    # context branch: half-resolution input, stem, two residual modules
    half = add("ctx_half", BilinearResize(0.5), "image")
    stem = conv_bn_relu(
        "ctx_stem", Conv2D(7, cfg.stem_channels, stride=2), half
    )

    def residual(tag: str, src: str, in_c: int, out_c: int, stride: int) -> str:
        body = conv_bn_relu(
            f"{tag}_conv1", Conv2D(3, out_c, stride=stride), src
        )
        body = add(f"{tag}_conv2", Conv2D(3, out_c), body)
        body = add(f"{tag}_conv2_bn", BatchNorm(), body)
        if stride != 1 or in_c != out_c:
            sc = add(f"{tag}_proj", Conv2D(1, out_c, stride=stride, mode="pointwise"), src)
            sc = add(f"{tag}_proj_bn", BatchNorm(), sc)
        else:
            sc = src
        merged = add(f"{tag}_add", ElemAdd(), body, sc)
        return add(f"{tag}_relu", ReLU(), merged)

    res1 = residual("res1", stem, cfg.stem_channels, cfg.stage_channels[0], 2)
    res2 = residual("res2", res1, cfg.stage_channels[0], cfg.stage_channels[1], 1)

    # dilated context block: parallel 3x3 convs, rates from the config
    branches = []
    for rate in cfg.aspp_rates:
        branches.append(
            conv_bn_relu(
                f"aspp_r{rate}",
                Conv2D(3, cfg.aspp_channels, dilation=rate),
                res2,
            )
        )
    ctx = add("aspp_concat", Concat(), *branches)

    # global attention over the concatenated context features
    pool = add("gam_pool", GlobalAvgPool(), ctx)
    gate = add(
        "gam_conv",
        Conv2D(1, cfg.aspp_channels * len(cfg.aspp_rates), mode="pointwise"),
        pool,
    )
    gate = add("gam_sigmoid", Sigmoid(), gate)
    context_out = add("gam_mul", ElemMul(), ctx, gate)

    # spatial-detail branch: full-resolution stack of 3x3 convs
    src = "image"
    for i, (c, s) in enumerate(zip(cfg.spatial_channels, cfg.spatial_strides), 1):
        src = conv_bn_relu(f"sp_conv{i}", Conv2D(3, c, stride=s), src)
    spatial_out = src

    # feature fusion: concat, bottleneck conv, channel attention, residual gate
    fused = add("ffm_concat", Concat(), context_out, spatial_out)
    feat = conv_bn_relu("ffm_conv", Conv2D(3, cfg.fusion_channels), fused)
    att = add("ffm_pool", GlobalAvgPool(), feat)
    att = add("ffm_att1", Conv2D(1, cfg.fusion_channels, mode="pointwise"), att)
    att = add("ffm_att1_relu", ReLU(), att)
    att = add("ffm_att2", Conv2D(1, cfg.fusion_channels, mode="pointwise"), att)
    att = add("ffm_att_sigmoid", Sigmoid(), att)
    gated = add("ffm_mul", ElemMul(), feat, att)
    fused_out = add("ffm_add", ElemAdd(), feat, gated)

    # head: per-pixel logit, probability, upsample back to input resolution
    logit = add("head_conv", Conv2D(1, 1, mode="pointwise"), fused_out)
    prob = add("head_sigmoid", Sigmoid(), logit)
    add("head_resize", BilinearResize(8), prob)

    return NetworkGraph(
        inputs={"image": (cfg.height, cfg.width, cfg.in_channels)},
        nodes=tuple(nodes),
        outputs=("head_resize",),
    )
