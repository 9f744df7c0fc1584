"""Structural graph passes that shape the network for the accelerator datapath.

The canonical order mirrors the optimization ladder the datapath expects:
large kernels become 3x3 cascades, dilated convs become stride-1 cascades,
remaining standard 3x3 convs split into depthwise + pointwise pairs, and
finally batch norms fold into the preceding conv's weights and bias. Each
pass returns a new graph, a new weight container (when weights are given)
and a PassReport with per-layer parameter and MAC deltas.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .float_exec import (
    MissingWeightError,
    bias_name,
    bn_scale_name,
    bn_shift_name,
    weight_name,
)
from .graph import (
    BatchNorm,
    Conv2D,
    Dims,
    GraphError,
    NetworkGraph,
    Node,
    ReLU,
    infer_shapes,
)
from .model_io import WeightContainer


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------


@dataclass
class LayerDelta:
    name: str
    kind: str
    params_before: int
    params_after: int
    macs_before: int
    macs_after: int


@dataclass
class PassReport:
    pass_name: str
    layers: list[LayerDelta] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def params_before(self) -> int:
        return sum(r.params_before for r in self.layers)

    @property
    def params_after(self) -> int:
        return sum(r.params_after for r in self.layers)

    @property
    def macs_before(self) -> int:
        return sum(r.macs_before for r in self.layers)

    @property
    def macs_after(self) -> int:
        return sum(r.macs_after for r in self.layers)

    def rows(self) -> list[dict]:
        return [
            {
                "layer": r.name,
                "kind": r.kind,
                "params_before": r.params_before,
                "params_after": r.params_after,
                "macs_before": r.macs_before,
                "macs_after": r.macs_after,
            }
            for r in self.layers
        ]

    def render(self) -> str:
        headers = ["layer", "kind", "params before", "params after", "macs before", "macs after"]
        rows = [
            [r.name, r.kind, str(r.params_before), str(r.params_after),
             str(r.macs_before), str(r.macs_after)]
            for r in self.layers
        ]
        rows.append(
            ["TOTAL", "", str(self.params_before), str(self.params_after),
             str(self.macs_before), str(self.macs_after)]
        )
        widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
        lines = [f"pass: {self.pass_name}"]
        lines.append("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
        lines.append("  ".join("-" * w for w in widths))
        for r in rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
        for w in self.warnings:
            lines.append(f"warning: {w}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# counters
# ---------------------------------------------------------------------------


def conv_kernel_params(op: Conv2D, in_channels: int) -> int:
    """Kernel parameter count by layer flavour (bias excluded)."""
    k = op.kernel
    if op.mode == "depthwise":
        return k * k * in_channels
    out = int(op.out_channels)
    if op.mode == "pointwise":
        return in_channels * out
    return k * k * in_channels * out


def node_params(g: NetworkGraph, node: Node, dims: dict[str, Dims]) -> int:
    if isinstance(node.op, Conv2D):
        in_c = dims[node.inputs[0]][2]
        total = conv_kernel_params(node.op, in_c)
        if node.op.bias:
            total += dims[node.name][2]
        return total
    if isinstance(node.op, BatchNorm):
        return 2 * dims[node.name][2]
    return 0


def node_macs(g: NetworkGraph, node: Node, dims: dict[str, Dims]) -> int:
    """Multiply-accumulates: spatial output positions times kernel params."""
    if not isinstance(node.op, Conv2D):
        return 0
    in_c = dims[node.inputs[0]][2]
    oh, ow, _ = dims[node.name]
    return oh * ow * conv_kernel_params(node.op, in_c)


def count_params(g: NetworkGraph) -> int:
    dims = infer_shapes(g)
    return sum(node_params(g, n, dims) for n in g.nodes)


def count_macs(g: NetworkGraph, input_dims: dict[str, Dims] | None = None) -> int:
    dims = infer_shapes(g, input_dims)
    return sum(node_macs(g, n, dims) for n in g.nodes)


def counter_report(
    g: NetworkGraph, input_dims: dict[str, Dims] | None = None
) -> PassReport:
    dims = infer_shapes(g, input_dims)
    report = PassReport("count")
    for node in g.nodes:
        p = node_params(g, node, dims)
        m = node_macs(g, node, dims)
        if p or m:
            report.layers.append(
                LayerDelta(node.name, _kind(node), p, p, m, m)
            )
    return report


def _kind(node: Node) -> str:
    if isinstance(node.op, Conv2D):
        return node.op.mode
    return type(node.op).__name__.lower()


def separable_reduction(g: NetworkGraph) -> tuple[int, int, float]:
    """Whole-network parameter counts before/after depthwise separation."""
    before = count_params(g)
    sep, _, _ = to_depthwise_separable(g)
    after = count_params(sep)
    return before, after, before / after


# ---------------------------------------------------------------------------
# seeded weight initialization
# ---------------------------------------------------------------------------


def _tensor_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng((seed, zlib.crc32(name.encode())))


def seeded_kernel(
    name: str, shape: tuple[int, ...], fan_in: int, seed: int, gain: float = 1.0
) -> np.ndarray:
    limit = gain * np.sqrt(6.0 / max(1, fan_in))
    rng = _tensor_rng(seed, name)
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def conv_weight_shape(op: Conv2D, in_channels: int) -> tuple[int, ...]:
    if op.mode == "depthwise":
        return (op.kernel, op.kernel, in_channels)
    return (op.kernel, op.kernel, in_channels, int(op.out_channels))


def conv_fan_in(op: Conv2D, in_channels: int) -> int:
    if op.mode == "depthwise":
        return op.kernel * op.kernel
    return op.kernel * op.kernel * in_channels


def init_weights(g: NetworkGraph, seed: int = 0, gain: float = 1.0) -> WeightContainer:
    """Deterministic float32 parameters for every node, keyed by node name."""
    dims = infer_shapes(g)
    weights = WeightContainer()
    for node in g.nodes:
        if isinstance(node.op, Conv2D):
            in_c = dims[node.inputs[0]][2]
            shape = conv_weight_shape(node.op, in_c)
            weights.add(
                weight_name(node.name),
                seeded_kernel(weight_name(node.name), shape, conv_fan_in(node.op, in_c), seed, gain),
            )
            if node.op.bias:
                weights.add(
                    bias_name(node.name), np.zeros(dims[node.name][2], dtype=np.float32)
                )
        elif isinstance(node.op, BatchNorm):
            c = dims[node.name][2]
            weights.add(bn_scale_name(node.name), np.ones(c, dtype=np.float32))
            weights.add(bn_shift_name(node.name), np.zeros(c, dtype=np.float32))
    return weights


# ---------------------------------------------------------------------------
# rewrite helpers
# ---------------------------------------------------------------------------


def _copy_weights(weights) -> WeightContainer:
    out = WeightContainer()
    if weights is None:
        return out
    if isinstance(weights, WeightContainer):
        for name in weights.names():
            e = weights.entry(name)
            out.add(name, e.data.copy(), e.scale_exp)
    else:
        for name in weights:
            out.add(name, np.asarray(weights[name]))
    return out


def _drop(weights: WeightContainer, *names: str) -> None:
    for name in names:
        if name in weights:
            weights.remove(name)


def _set(weights: WeightContainer, name: str, data: np.ndarray, scale_exp: int = 0) -> None:
    _drop(weights, name)
    weights.add(name, data, scale_exp)


def _rebuild(
    g: NetworkGraph,
    node_lists: list[list[Node]],
    rename: dict[str, str] | None = None,
) -> NetworkGraph:
    rename = rename or {}
    flat: list[Node] = []
    for chunk in node_lists:
        flat.extend(chunk)
    if rename:
        flat = [
            Node(n.name, n.op, tuple(rename.get(i, i) for i in n.inputs)) for n in flat
        ]
    outputs = tuple(rename.get(o, o) for o in g.outputs)
    return NetworkGraph(inputs=g.inputs, nodes=tuple(flat), outputs=outputs, quant=g.quant)


def _fresh_name(g: NetworkGraph, base: str) -> str:
    taken = set(g.inputs) | {n.name for n in g.nodes}
    if base not in taken:
        return base
    i = 2
    while f"{base}{i}" in taken:
        i += 1
    return f"{base}{i}"


# ---------------------------------------------------------------------------
# batch-norm folding
# ---------------------------------------------------------------------------


def fold_batch_norm(
    g: NetworkGraph, weights
) -> tuple[NetworkGraph, WeightContainer, PassReport]:
    """Absorb per-channel BN affine into the preceding conv.

    Merged kernel scales each output channel by the BN scale; merged bias is
    scale * old_bias + shift. Only BNs whose sole producer is a conv consumed
    by nothing else fold; every other BN is left in place with a warning.
    Iterates to a fixpoint so chained BNs fold in one call.
    """
    report = PassReport("fold-batch-norm")
    out_w = _copy_weights(weights)
    current = g
    while True:
        dims = infer_shapes(current)
        node_map = current.node_map
        fold: tuple[str, str] | None = None
        for node in current.nodes:
            if not isinstance(node.op, BatchNorm):
                continue
            src = node.inputs[0]
            producer = node_map.get(src)
            if (
                producer is not None
                and isinstance(producer.op, Conv2D)
                and current.consumers(src) == [node.name]
            ):
                fold = (src, node.name)
                break
        if fold is None:
            for node in current.nodes:
                if isinstance(node.op, BatchNorm):
                    report.warnings.append(
                        f"BatchNorm {node.name!r} does not follow a dedicated conv; "
                        f"left in place"
                    )
            break
        conv_name, bn_name = fold
        conv_node = node_map[conv_name]
        for needed in (weight_name(conv_name), bn_scale_name(bn_name), bn_shift_name(bn_name)):
            if needed not in out_w:
                raise MissingWeightError(needed)
        c_out = dims[bn_name][2]
        kernel_params = conv_kernel_params(conv_node.op, dims[conv_node.inputs[0]][2])
        macs = node_macs(current, conv_node, dims)
        had_bias = conv_node.op.bias

        w = np.asarray(out_w[weight_name(conv_name)], dtype=np.float64)
        scale = np.asarray(out_w[bn_scale_name(bn_name)], dtype=np.float64)
        shift = np.asarray(out_w[bn_shift_name(bn_name)], dtype=np.float64)
        old_bias = (
            np.asarray(out_w[bias_name(conv_name)], dtype=np.float64)
            if had_bias
            else np.zeros(c_out)
        )
        _set(out_w, weight_name(conv_name), (w * scale).astype(np.float32))
        _set(out_w, bias_name(conv_name), (scale * old_bias + shift).astype(np.float32))
        _drop(out_w, bn_scale_name(bn_name), bn_shift_name(bn_name))

        new_nodes: list[list[Node]] = []
        for node in current.nodes:
            if node.name == bn_name:
                continue
            if node.name == conv_name:
                new_nodes.append([replace(node, op=replace(node.op, bias=True))])
            else:
                new_nodes.append([node])
        current = _rebuild(current, new_nodes, rename={bn_name: conv_name})

        report.layers.append(
            LayerDelta(
                conv_name,
                conv_node.op.mode,
                kernel_params + (c_out if had_bias else 0),
                kernel_params + c_out,
                macs,
                macs,
            )
        )
        report.layers.append(LayerDelta(bn_name, "batchnorm", 2 * c_out, 0, 0, 0))
    return current, out_w, report


# ---------------------------------------------------------------------------
# structural conv rewrites
# ---------------------------------------------------------------------------


def _chain_with_bn_relu(
    g: NetworkGraph,
    base: str,
    ops: list[Conv2D],
    first_input: str,
    final_node: Node,
    taken: set[str],
) -> tuple[list[Node], list[tuple[str, Conv2D]]]:
    """Build conv(+BN+ReLU) stages feeding the final (renamed-in-place) conv.

    Every inserted conv gets BatchNorm+ReLU after it; the last conv keeps the
    original node's name so downstream consumers (typically the original BN
    and ReLU) stay wired to it.
    """
    nodes: list[Node] = []
    new_convs: list[tuple[str, Conv2D]] = []
    src = first_input
    for i, op in enumerate(ops, start=1):
        name = f"{base}_k{i}"
        if name in taken:
            raise GraphError(f"cannot insert node {name!r}: name already taken")
        taken.add(name)
        nodes.append(Node(name, op, (src,)))
        new_convs.append((name, op))
        bn = Node(f"{name}_bn", BatchNorm(), (name,))
        rl = Node(f"{name}_relu", ReLU(), (f"{name}_bn",))
        taken.update({bn.name, rl.name})
        nodes.extend([bn, rl])
        src = rl.name
    nodes.append(Node(final_node.name, final_node.op, (src,)))
    return nodes, new_convs


def _structural_pass(
    g: NetworkGraph,
    weights,
    seed: int,
    pass_name: str,
    plan,
) -> tuple[NetworkGraph, WeightContainer | None, PassReport]:
    """Shared driver: ``plan(node, in_c)`` returns None to keep a conv, or
    (stage_ops, final_op, warning) to splice stage convs + BN + ReLU in
    front of the rewritten final conv."""
    report = PassReport(pass_name)
    dims = infer_shapes(g)
    out_w = _copy_weights(weights) if weights is not None else None
    taken = set(g.inputs) | {n.name for n in g.nodes}
    node_lists: list[list[Node]] = []
    touched = False
    for node in g.nodes:
        keep = [node]
        if isinstance(node.op, Conv2D):
            in_c = dims[node.inputs[0]][2]
            decision = plan(node, in_c, report)
            if decision is not None:
                stage_ops, final_op, bn_rows = decision
                chain, new_convs = _chain_with_bn_relu(
                    g, node.name, stage_ops, node.inputs[0],
                    replace(node, op=final_op), taken,
                )
                keep = chain
                touched = True
                if out_w is not None:
                    _reinit_chain(out_w, g, dims, node, chain, seed)
                if bn_rows:
                    for stage_name, stage_op in new_convs:
                        c = _stage_out_channels(stage_op, in_c)
                        report.layers.append(
                            LayerDelta(f"{stage_name}_bn", "batchnorm", 0, 2 * c, 0, 0)
                        )
        node_lists.append(keep)
    if not touched:
        return g, out_w, report
    return _rebuild(g, node_lists), out_w, report


def _stage_out_channels(op: Conv2D, in_c: int) -> int:
    return in_c if op.mode == "depthwise" else int(op.out_channels)


def _reinit_chain(
    out_w: WeightContainer,
    g: NetworkGraph,
    dims: dict[str, Dims],
    original: Node,
    chain: list[Node],
    seed: int,
) -> None:
    """Replace the original conv's tensors with seeded ones for the new chain."""
    _drop(out_w, weight_name(original.name))
    in_c = dims[original.inputs[0]][2]
    cur_c = in_c
    for node in chain:
        if isinstance(node.op, Conv2D):
            shape = conv_weight_shape(node.op, cur_c)
            _set(
                out_w,
                weight_name(node.name),
                seeded_kernel(weight_name(node.name), shape, conv_fan_in(node.op, cur_c), seed),
            )
            cur_c = _stage_out_channels(node.op, cur_c)
        elif isinstance(node.op, BatchNorm):
            c = cur_c
            _set(out_w, bn_scale_name(node.name), np.ones(c, dtype=np.float32))
            _set(out_w, bn_shift_name(node.name), np.zeros(c, dtype=np.float32))
    # an existing bias keeps its length (output channels unchanged); leave it


def decompose_large_kernel(
    g: NetworkGraph, weights=None, seed: int = 0
) -> tuple[NetworkGraph, WeightContainer | None, PassReport]:
    """Split every standard 7x7 conv into three 3x3 convs.

    The first 3x3 carries the original stride and the channel change; the two
    follow-ups are stride-1 C_o -> C_o. Inserted convs get BatchNorm+ReLU; the
    conv keeping the original name inherits whatever followed it before. The
    composite receptive extent equals the original 7 for stride 1 and grows to
    4*stride+3 otherwise (the cascade still covers the original window).
    """
    def plan(node: Node, in_c: int, report: PassReport):
        op = node.op
        if op.kernel != 7 or op.mode != "standard":
            return None
        if op.dilation != 1:
            report.warnings.append(
                f"conv {node.name!r}: 7x7 with dilation {op.dilation} left untouched"
            )
            return None
        co = int(op.out_channels)
        before = 49 * in_c * co
        after = 9 * in_c * co + 2 * 9 * co * co
        oh_ow = _out_positions(g, node)
        report.layers.append(
            LayerDelta(node.name, "standard", before, after,
                       oh_ow * before, oh_ow * after)
        )
        stage_ops = [
            Conv2D(3, co, stride=op.stride, bias=False),
            Conv2D(3, co, bias=False),
        ]
        final_op = replace(op, kernel=3, stride=1)
        return stage_ops, final_op, True

    return _structural_pass(g, weights, seed, "decompose-large-kernel", plan)


def replace_dilated(
    g: NetworkGraph, weights=None, seed: int = 0
) -> tuple[NetworkGraph, WeightContainer | None, PassReport]:
    """Turn a dilation-r 3x3 conv into r cascaded dense 3x3 convs.

    A cascade of r stride-1 3x3 convs has receptive extent 2r+1, exactly the
    span of the dilated kernel it replaces. Rates 8 and 16 expand into long
    chains, which costs parameters and latency; they are flagged.
    """
    def plan(node: Node, in_c: int, report: PassReport):
        op = node.op
        if op.mode != "standard" or op.kernel != 3 or op.dilation == 1:
            return None
        r = op.dilation
        co = int(op.out_channels)
        before = 9 * in_c * co
        after = 9 * in_c * co + (r - 1) * 9 * co * co
        oh_ow = _out_positions(g, node)
        report.layers.append(
            LayerDelta(node.name, "standard", before, after,
                       oh_ow * before, oh_ow * after)
        )
        if r >= 8:
            report.warnings.append(
                f"conv {node.name!r}: dilation {r} expands into {r} convs; "
                f"consider a cheaper context block"
            )
        stage_ops = [Conv2D(3, co, stride=op.stride, bias=False)]
        stage_ops += [Conv2D(3, co, bias=False) for _ in range(r - 2)]
        final_op = replace(op, dilation=1, stride=1)
        return stage_ops, final_op, True

    return _structural_pass(g, weights, seed, "replace-dilated", plan)


def to_depthwise_separable(
    g: NetworkGraph, weights=None, seed: int = 0
) -> tuple[NetworkGraph, WeightContainer | None, PassReport]:
    """Split standard 3x3 convs (in_channels >= 16) into depthwise + pointwise.

    The depthwise 3x3 keeps stride and dilation; the pointwise takes the
    channel change, the original name, any bias, and the BN+ReLU that
    followed. Thin input stems (under 16 channels) stay dense.
    """
    report = PassReport("to-depthwise-separable")
    dims = infer_shapes(g)
    out_w = _copy_weights(weights) if weights is not None else None
    taken = set(g.inputs) | {n.name for n in g.nodes}
    node_lists: list[list[Node]] = []
    touched = False
    for node in g.nodes:
        keep = [node]
        if isinstance(node.op, Conv2D):
            op = node.op
            in_c = dims[node.inputs[0]][2]
            if op.mode == "standard" and op.kernel == 3 and in_c >= 16:
                co = int(op.out_channels)
                dw_name = _fresh_name(g, f"{node.name}_dw")
                if dw_name in taken:
                    raise GraphError(f"name {dw_name!r} already taken")
                taken.add(dw_name)
                dw_op = Conv2D(3, None, stride=op.stride, dilation=op.dilation, mode="depthwise")
                pw_op = Conv2D(1, co, mode="pointwise", bias=op.bias)
                keep = [
                    Node(dw_name, dw_op, node.inputs),
                    Node(node.name, pw_op, (dw_name,)),
                ]
                touched = True
                before = 9 * in_c * co
                after = 9 * in_c + in_c * co
                oh_ow = _out_positions(g, node)
                report.layers.append(
                    LayerDelta(node.name, "standard", before, after,
                               oh_ow * before, oh_ow * after)
                )
                if out_w is not None:
                    _drop(out_w, weight_name(node.name))
                    _set(
                        out_w,
                        weight_name(dw_name),
                        seeded_kernel(weight_name(dw_name), (3, 3, in_c), 9, seed),
                    )
                    _set(
                        out_w,
                        weight_name(node.name),
                        seeded_kernel(weight_name(node.name), (1, 1, in_c, co), in_c, seed),
                    )
        node_lists.append(keep)
    if not touched:
        return g, out_w, report
    return _rebuild(g, node_lists), out_w, report


def _out_positions(g: NetworkGraph, node: Node) -> int:
    dims = infer_shapes(g)
    oh, ow, _ = dims[node.name]
    return oh * ow


# ---------------------------------------------------------------------------
# alignment check and pipeline
# ---------------------------------------------------------------------------


def check_channel_alignment(g: NetworkGraph, lane_width: int = 32) -> list[str]:
    """Warn for conv channels that leave lanes idle.

    A conv fed (transitively, through non-conv nodes) straight from a graph
    input is exempt on its input side; a conv whose output reaches a graph
    output without passing another conv is exempt on its output side.
    """
    if lane_width <= 1:
        return []
    dims = infer_shapes(g)
    node_map = g.node_map
    warnings: list[str] = []

    def fed_by_input_only(start: str) -> bool:
        stack, seen = [start], set()
        while stack:
            ref = stack.pop()
            if ref in seen:
                continue
            seen.add(ref)
            if ref in g.inputs:
                continue
            node = node_map[ref]
            if isinstance(node.op, Conv2D):
                return False
            stack.extend(node.inputs)
        return True

    def feeds_output_only(start: str) -> bool:
        stack, seen = [start], set()
        while stack:
            ref = stack.pop()
            if ref in seen:
                continue
            seen.add(ref)
            if ref in g.outputs:
                continue
            for consumer in g.consumers(ref):
                if isinstance(node_map[consumer].op, Conv2D):
                    return False
                stack.append(consumer)
        return True

    for node in g.nodes:
        if not isinstance(node.op, Conv2D):
            continue
        in_c = dims[node.inputs[0]][2]
        out_c = dims[node.name][2]
        if in_c % lane_width and not fed_by_input_only(node.inputs[0]):
            warnings.append(
                f"conv {node.name!r}: input channels {in_c} not a multiple of {lane_width}"
            )
        if out_c % lane_width and not feeds_output_only(node.name):
            warnings.append(
                f"conv {node.name!r}: output channels {out_c} not a multiple of {lane_width}"
            )
    return warnings


def standard_pipeline(
    g: NetworkGraph, weights, seed: int = 0
) -> tuple[NetworkGraph, WeightContainer, list[PassReport]]:
    """Full hardware-lowering order: large-kernel, dilated, separable, fold."""
    reports: list[PassReport] = []
    g, weights, rep = decompose_large_kernel(g, weights, seed)
    reports.append(rep)
    g, weights, rep = replace_dilated(g, weights, seed)
    reports.append(rep)
    g, weights, rep = to_depthwise_separable(g, weights, seed)
    reports.append(rep)
    g, weights, rep = fold_batch_norm(g, weights)
    reports.append(rep)
    return g, weights, reports
