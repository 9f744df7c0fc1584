"""Bit-exact software model of the integer accelerator datapath.

Convolutions route to two engines: a 32-lane depthwise unit (nine multipliers
per lane feeding an INT32 accumulator) and a 32x32 pointwise unit that
accumulates partial products across input-channel groups before a single
requantize, with an optional bias stage and ReLU clamp. Sigmoid is a 256-entry
table over [-8, 8). Everything else (pooling, gating, adds, concat, the
half-size input resize) is plain integer arithmetic with the shared
round-half-away rule. The x8 output upsample stays on the host, so a full
network run ends at the eighth-resolution probability map.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .float_exec import (
    bias_name,
    bilinear_resize,
    weight_name,
)
from .graph import (
    BatchNorm,
    BilinearResize,
    Concat,
    Conv2D,
    Dims,
    ElemAdd,
    ElemMul,
    GlobalAvgPool,
    NetworkGraph,
    Node,
    ReLU,
    Sigmoid,
    infer_shapes,
    topo_order,
)
from .model_io import WeightContainer
from .tensor import (
    QTensor,
    QuantSpec,
    check_accumulator,
    quantize_array,
    requantize,
    round_half_away,
    saturate,
    shift_round,
)

LANES = 32
INT16_MAX = 2**15 - 1

# Fixed engine conventions: sigmoid inputs arrive as int8 sixteenths
# (so the table index is just value + 128) and outputs are u8 counts of 1/256.
SIGMOID_IN_SPEC = QuantSpec(8, -4)
SIGMOID_OUT_SPEC = QuantSpec(16, -8)


class DatapathError(ValueError):
    """The graph or weights ask for something the modeled hardware lacks."""


# ---------------------------------------------------------------------------
# sigmoid table
# ---------------------------------------------------------------------------


def build_sigmoid_lut() -> np.ndarray:
    """256 entries sampling sigmoid at the left edge of each 1/16-wide cell.

    Entry i holds round(sigmoid(-8 + i/16) * 256) clipped to a u8; entry 128
    is exactly 128 (sigmoid(0) = 1/2) and the top entry saturates at 255.
    """
    xs = -8.0 + np.arange(256, dtype=np.float64) / 16.0
    vals = round_half_away(256.0 / (1.0 + np.exp(-xs)))
    return np.clip(vals, 0, 255).astype(np.int32)


_SIGMOID_LUT = build_sigmoid_lut()


def sigmoid_lut_lookup(values: np.ndarray, spec: QuantSpec) -> np.ndarray:
    """Index the table for fixed-point inputs at any scale, clamping outside
    [-8, 8) to the endpoint entries."""
    v = np.asarray(values, dtype=np.int64)
    e = spec.scale_exp
    if e >= -4:
        idx = v << (e + 4)
    else:
        idx = v >> (-4 - e)  # arithmetic shift == floor to the cell edge
    idx = np.clip(idx + 128, 0, 255)
    return _SIGMOID_LUT[idx]


def apply_sigmoid(q: QTensor) -> QTensor:
    return QTensor(sigmoid_lut_lookup(q.data, q.spec).astype(np.int32), SIGMOID_OUT_SPEC)


# ---------------------------------------------------------------------------
# line buffer / patch streaming
# ---------------------------------------------------------------------------


class LineBuffer:
    """Two row stores plus a sliding window register, as the hardware keeps.

    Rows arrive one at a time; once a row is pushed the buffer can emit the
    3x3 windows of the previous output row (top/bottom and left/right borders
    read as zeros). Storage stays at kernel-1 rows no matter the map height.
    """

    def __init__(self, width: int, channels: int, kernel: int = 3) -> None:
        if kernel != 3:
            raise DatapathError(f"line buffer models a 3x3 window, got {kernel}")
        self.width = width
        self.channels = channels
        self._zero = np.zeros((width, channels), dtype=np.int32)
        self._stored = [self._zero, self._zero]  # rows y-2 and y-1
        self._pushed = 0

    def _windows(self, rows: list[np.ndarray]) -> np.ndarray:
        """(W, 3, 3, C) windows for one output row from three input rows."""
        padded = np.zeros((3, self.width + 2, self.channels), dtype=np.int32)
        for i, r in enumerate(rows):
            padded[i, 1:-1] = r
        out = np.empty((self.width, 3, 3, self.channels), dtype=np.int32)
        for kx in range(3):
            out[:, :, kx, :] = padded[:, kx : kx + self.width, :].transpose(1, 0, 2)
        return out

    def push_row(self, row: np.ndarray) -> np.ndarray | None:
        """Accept row y; returns the output-row y-1 windows once y >= 1."""
        row = np.asarray(row, dtype=np.int32)
        if row.shape != (self.width, self.channels):
            raise DatapathError(
                f"line buffer expects rows of shape {(self.width, self.channels)}"
            )
        out = None
        if self._pushed >= 1:
            out = self._windows([self._stored[0], self._stored[1], row])
        self._stored = [self._stored[1], row]
        self._pushed += 1
        return out

    def flush(self) -> np.ndarray:
        """Windows for the final row, with the below-image row read as zero."""
        if self._pushed == 0:
            raise DatapathError("flush before any row was pushed")
        return self._windows([self._stored[0], self._stored[1], self._zero])


def stream_patches(fmap: QTensor | np.ndarray, kernel: int = 3):
    """Raster-order 3x3 windows per 32-channel group, zero lane padding.

    Yields ((group, y, x), patch) with patch shaped (3, 3, 32); a map with C
    channels produces H * W * ceil(C/32) patches. Groups stream one after the
    other, modeling one channel-group tile in flight at a time.
    """
    data = fmap.data if isinstance(fmap, QTensor) else np.asarray(fmap)
    if data.ndim == 2:
        data = data[:, :, None]
    h, w, c = data.shape
    groups = -(-c // LANES)
    for g in range(groups):
        chunk = data[:, :, g * LANES : (g + 1) * LANES]
        gc = chunk.shape[2]
        buf = LineBuffer(w, gc, kernel)
        emitted_y = 0
        for y in range(h):
            wins = buf.push_row(chunk[y])
            if wins is not None:
                yield from _pad_and_emit(wins, g, emitted_y, gc)
                emitted_y += 1
        wins = buf.flush()
        yield from _pad_and_emit(wins, g, emitted_y, gc)


def _pad_and_emit(wins: np.ndarray, g: int, y: int, gc: int):
    w = wins.shape[0]
    if gc < LANES:
        wins = np.pad(wins, ((0, 0), (0, 0), (0, 0), (0, LANES - gc)))
    for x in range(w):
        yield (g, y, x), wins[x]


# ---------------------------------------------------------------------------
# convolution engines
# ---------------------------------------------------------------------------


def _tap_views(padded: np.ndarray, oh: int, ow: int, stride: int, ky: int, kx: int):
    return padded[
        ky : ky + (oh - 1) * stride + 1 : stride,
        kx : kx + (ow - 1) * stride + 1 : stride,
    ]


def dw_conv(
    x: QTensor,
    kernel: np.ndarray,
    w_spec: QuantSpec,
    out_spec: QuantSpec,
    stride: int = 1,
) -> QTensor:
    """Depthwise 3x3 over one channel group: per-lane 9-tap dot, requantize.

    ``kernel`` is (3, 3, C) integers at ``w_spec``; C may not exceed the 32
    hardware lanes. The INT32 accumulator bound is asserted, never rounded.
    """
    h, w, c = x.dims
    if c > LANES:
        raise DatapathError(f"depthwise group has {c} channels; lanes = {LANES}")
    kernel = np.asarray(kernel)
    if kernel.shape != (3, 3, c):
        raise DatapathError(f"depthwise kernel shape {kernel.shape} != (3, 3, {c})")
    oh, ow = -(-h // stride), -(-w // stride)
    padded = np.zeros((h + 2, w + 2, c), dtype=np.int64)
    padded[1 : h + 1, 1 : w + 1] = x.data
    k64 = kernel.astype(np.int64)
    acc = np.zeros((oh, ow, c), dtype=np.int64)
    for ky in range(3):
        for kx in range(3):
            acc += _tap_views(padded, oh, ow, stride, ky, kx) * k64[ky, kx]
    check_accumulator(acc, "depthwise accumulator")
    return requantize(acc, x.spec, w_spec, out_spec)


def pw_conv(
    x: QTensor,
    weights: np.ndarray,
    w_spec: QuantSpec,
    out_spec: QuantSpec,
    bias_acc: np.ndarray | None = None,
    relu: bool = False,
) -> QTensor:
    """Pointwise conv as 32-vector x 32x32-matrix steps.

    ``weights`` is (C_in, C_out) integers at ``w_spec``. Channels pad to the
    32-lane grid with zeros; partial products accumulate across input groups
    in INT32 (every intermediate running sum is bound-checked), then bias (an
    integer at accumulator scale) is added and one requantize produces the
    output, with ReLU clamping negatives afterwards when requested.
    """
    h, w, ci = x.dims
    weights = np.asarray(weights)
    if weights.shape[0] != ci:
        raise DatapathError(f"pointwise weights {weights.shape} do not match {ci} inputs")
    co = weights.shape[1]
    gi = -(-ci // LANES)
    xd = np.zeros((h, w, gi * LANES), dtype=np.int64)
    xd[:, :, :ci] = x.data
    wd = np.zeros((gi * LANES, co), dtype=np.int64)
    wd[:ci] = weights
    partial = np.einsum(
        "hwgc,gcn->ghwn",
        xd.reshape(h, w, gi, LANES),
        wd.reshape(gi, LANES, co),
    )
    running = np.cumsum(partial, axis=0)
    check_accumulator(running, "pointwise accumulator")
    acc = running[-1]
    if bias_acc is not None:
        acc = acc + np.asarray(bias_acc, dtype=np.int64)
        check_accumulator(acc, "pointwise bias stage")
    out = requantize(acc, x.spec, w_spec, out_spec)
    if relu:
        return QTensor(np.maximum(out.data, 0), out_spec)
    return out


def conv3_via_patches(
    x: QTensor,
    weights: np.ndarray,
    w_spec: QuantSpec,
    out_spec: QuantSpec,
    stride: int = 1,
    bias_acc: np.ndarray | None = None,
    relu: bool = False,
) -> QTensor:
    """Standard 3x3 conv on the pointwise engine via flattened patches.

    Only thin inputs qualify: the 9*C_in patch vector must fit the 32 lanes.
    This is how the 3-channel stems run without a dedicated dense engine.
    """
    h, w, ci = x.dims
    if 9 * ci > LANES:
        raise DatapathError(
            f"standard 3x3 conv needs 9*{ci} = {9 * ci} lanes; separate it first"
        )
    weights = np.asarray(weights)
    if weights.shape[:3] != (3, 3, ci):
        raise DatapathError(f"bad standard kernel shape {weights.shape}")
    oh, ow = -(-h // stride), -(-w // stride)
    padded = np.zeros((h + 2, w + 2, ci), dtype=np.int32)
    padded[1 : h + 1, 1 : w + 1] = x.data
    cols = np.empty((oh, ow, 9, ci), dtype=np.int32)
    t = 0
    for ky in range(3):
        for kx in range(3):
            cols[:, :, t, :] = _tap_views(padded, oh, ow, stride, ky, kx)
            t += 1
    patches = QTensor(cols.reshape(oh, ow, 9 * ci), x.spec)
    flat_w = weights.reshape(9 * ci, weights.shape[3])
    return pw_conv(patches, flat_w, w_spec, out_spec, bias_acc, relu)


def bias_to_acc(bias_real: np.ndarray, acc_exp: int) -> np.ndarray:
    """Real-valued bias snapped onto the accumulator grid 2**acc_exp."""
    b = round_half_away(np.asarray(bias_real, dtype=np.float64) * 2.0**-acc_exp)
    check_accumulator(b, "bias at accumulator scale")
    return b.astype(np.int64)


# ---------------------------------------------------------------------------
# integer elementwise / pooling stages
# ---------------------------------------------------------------------------


def integer_relu(q: QTensor) -> QTensor:
    return QTensor(np.maximum(q.data, 0), q.spec)


def integer_gap(q: QTensor) -> QTensor:
    """Global average with a single end rounding: round_half_away(sum/n)."""
    h, w, _ = q.dims
    sums = q.data.sum(axis=(0, 1), dtype=np.int64)
    check_accumulator(sums, "pooling accumulator")
    n = h * w
    mag = (2 * np.abs(sums) + n) // (2 * n)
    out = np.where(sums < 0, -mag, mag)
    return QTensor(out[None, None, :].astype(np.int32), q.spec)


def _gate_product_limit(a: QuantSpec, b: QuantSpec) -> int:
    """INT16 product wires in the 8-bit build; INT32 once a real 16-bit map
    is involved. The u8 sigmoid gate rides in a 16-bit spec but its values
    are 8-bit, so it keeps the narrow wires."""
    def narrow(s: QuantSpec) -> bool:
        return s.bit_width <= 8 or s == SIGMOID_OUT_SPEC

    return INT16_MAX if narrow(a) and narrow(b) else 2**31 - 1


def integer_elem_mul(a: QTensor, b: QTensor, out_spec: QuantSpec) -> QTensor:
    """Feature map times (possibly 1x1xC broadcast) gate on INT16 product wires."""
    prod = a.data.astype(np.int64) * b.data.astype(np.int64)
    limit = _gate_product_limit(a.spec, b.spec)
    if max(-int(prod.min()), int(prod.max())) > limit:
        raise AssertionError("gate product exceeded the multiplier width")
    shift = out_spec.scale_exp - a.spec.scale_exp - b.spec.scale_exp
    if shift < 0:
        raise DatapathError(f"gate product shift {shift} is negative")
    return QTensor(saturate(shift_round(prod, shift), out_spec), out_spec)


def integer_elem_add(a: QTensor, b: QTensor, out_spec: QuantSpec) -> QTensor:
    """Align both addends to the finer scale, add in INT32, rescale once."""
    e = min(a.spec.scale_exp, b.spec.scale_exp)
    va = a.data.astype(np.int64) << (a.spec.scale_exp - e)
    vb = b.data.astype(np.int64) << (b.spec.scale_exp - e)
    total = va + vb
    check_accumulator(total, "elementwise add")
    shift = out_spec.scale_exp - e
    if shift < 0:
        raise DatapathError(f"elementwise add shift {shift} is negative")
    return QTensor(saturate(shift_round(total, shift), out_spec), out_spec)


def integer_concat(parts: list[QTensor], out_spec: QuantSpec) -> QTensor:
    """Channel concat with per-input rescale onto the shared output scale."""
    pieces = []
    for p in parts:
        shift = out_spec.scale_exp - p.spec.scale_exp
        if shift < 0:
            raise DatapathError(f"concat shift {shift} is negative")
        pieces.append(saturate(shift_round(p.data, shift), out_spec))
    return QTensor(np.concatenate(pieces, axis=2), out_spec)


def integer_half_resize(q: QTensor) -> QTensor:
    """Host-side half resize: mean of each 2x2 block, one rounding."""
    h, w, c = q.dims
    if h % 2 or w % 2:
        raise DatapathError(f"half resize needs even dims, got {h}x{w}")
    blocks = q.data.reshape(h // 2, 2, w // 2, 2, c).astype(np.int64)
    sums = blocks.sum(axis=(1, 3))
    return QTensor(saturate(shift_round(sums, 2), q.spec), q.spec)


# ---------------------------------------------------------------------------
# whole-network execution
# ---------------------------------------------------------------------------


def _weight_spec(entry) -> QuantSpec:
    if entry.data.dtype == np.int8:
        return QuantSpec(8, entry.scale_exp)
    if entry.data.dtype == np.int16:
        return QuantSpec(16, entry.scale_exp)
    raise DatapathError("conv weights must be quantized to int8 or int16")


def validate_datapath(g: NetworkGraph, weights: WeightContainer) -> dict[str, Dims]:
    """Reject constructs the datapath lacks; returns inferred dims on success."""
    problems: list[str] = []
    if g.quant is None:
        raise DatapathError("graph carries no quantization map; quantize it first")
    dims = infer_shapes(g)
    quant = g.quant

    def spec_of(ref: str) -> QuantSpec | None:
        s = quant.get(ref)
        if s is None:
            problems.append(f"{ref!r} has no quantization spec")
        return s

    for port in g.inputs:
        spec_of(port)
    for node in g.nodes:
        op = node.op
        out_spec = spec_of(node.name)
        in_specs = [spec_of(r) for r in node.inputs]
        if out_spec is None or any(s is None for s in in_specs):
            continue
        if isinstance(op, BatchNorm):
            problems.append(f"{node.name!r}: batch norm must be folded before running")
        elif isinstance(op, Conv2D):
            in_c = dims[node.inputs[0]][2]
            if op.dilation != 1:
                problems.append(f"{node.name!r}: dilation {op.dilation} unsupported")
            if op.kernel not in (1, 3):
                problems.append(f"{node.name!r}: kernel {op.kernel} unsupported")
            if op.mode == "standard" and op.kernel == 3 and 9 * in_c > LANES:
                problems.append(
                    f"{node.name!r}: dense 3x3 over {in_c} channels; needs separation"
                )
            if op.mode == "depthwise" and op.kernel != 3:
                problems.append(f"{node.name!r}: depthwise engine is 3x3 only")
            if op.mode == "depthwise" and op.bias:
                problems.append(f"{node.name!r}: depthwise engine has no bias stage")
            wname = weight_name(node.name)
            if wname not in weights:
                problems.append(f"{node.name!r}: missing tensor {wname!r}")
            else:
                try:
                    w_spec = _weight_spec(weights.entry(wname))
                except DatapathError as exc:
                    problems.append(f"{node.name!r}: {exc}")
                    w_spec = None
                if w_spec is not None:
                    shift = out_spec.scale_exp - in_specs[0].scale_exp - w_spec.scale_exp
                    if shift < 0:
                        problems.append(
                            f"{node.name!r}: requantize shift {shift} is negative"
                        )
            if op.bias:
                bname = bias_name(node.name)
                if bname not in weights:
                    problems.append(f"{node.name!r}: missing tensor {bname!r}")
                elif weights.entry(bname).data.dtype != np.float32:
                    problems.append(f"{node.name!r}: bias must be stored as float32 reals")
        elif isinstance(op, (ReLU, GlobalAvgPool)):
            if out_spec != in_specs[0]:
                problems.append(f"{node.name!r}: pass-through stage must keep its spec")
        elif isinstance(op, BilinearResize):
            if op.scale == 0.5:
                if out_spec != in_specs[0]:
                    problems.append(f"{node.name!r}: half resize must keep its spec")
            elif g.consumers(node.name):
                problems.append(
                    f"{node.name!r}: upsample is host-side and must be terminal"
                )
        elif isinstance(op, ElemMul):
            if out_spec.scale_exp < in_specs[0].scale_exp + in_specs[1].scale_exp:
                problems.append(f"{node.name!r}: gate product shift is negative")
        elif isinstance(op, ElemAdd):
            if out_spec.scale_exp < min(s.scale_exp for s in in_specs):
                problems.append(f"{node.name!r}: add shift is negative")
        elif isinstance(op, Concat):
            for s, r in zip(in_specs, node.inputs):
                if out_spec.scale_exp < s.scale_exp:
                    problems.append(f"{node.name!r}: concat shift from {r!r} is negative")
    if problems:
        raise DatapathError("datapath rejects the graph:\n  " + "\n  ".join(problems))
    return dims


@dataclass(frozen=True)
class QuantTrace:
    """All integer intermediates of one inference, keyed by node name.

    Nodes listed in ``pending_upsample`` were terminal x8 resizes: their
    stored value is the pre-upsample map (the device's actual output), and
    the host finishes the job via :func:`host_upsample`.
    """

    graph: NetworkGraph
    values: dict[str, QTensor]
    pending_upsample: frozenset[str]

    def output(self, name: str | None = None) -> QTensor:
        return self.values[name or self.graph.outputs[0]]

    def prob(self, name: str | None = None) -> np.ndarray:
        q = self.output(name)
        return (q.data.astype(np.float32) * np.float32(q.spec.step)).astype(np.float32)


def run_quantized(
    g: NetworkGraph,
    weights: WeightContainer,
    image: QTensor | np.ndarray,
) -> QuantTrace:
    """Execute a lowered, quantized graph entirely in integers.

    ``image`` is either an already-quantized QTensor matching the input
    port's spec or a float array that gets quantized on the way in. Output
    values sit at 1/8 resolution when the graph ends in the x8 upsample.
    """
    dims = validate_datapath(g, weights)
    quant = g.quant
    port = next(iter(g.inputs))
    if len(g.inputs) != 1:
        raise DatapathError("quantized execution models a single input port")
    if isinstance(image, QTensor):
        if image.spec != quant[port]:
            raise DatapathError(
                f"input spec {image.spec} does not match the graph's {quant[port]}"
            )
        qimg = image
    else:
        arr = np.asarray(image)
        if arr.dtype.kind != "f":
            raise DatapathError("pass float input data or a QTensor")
        qimg = QTensor(quantize_array(arr, quant[port]), quant[port])
    values: dict[str, QTensor] = {port: qimg}
    pending: set[str] = set()
    for name in topo_order(g):
        node = g.node(name)
        ins = [values[r] for r in node.inputs]
        values[name] = _run_node(node, ins, weights, quant, pending)
    return QuantTrace(g, values, frozenset(pending))


def _conv_weights(node: Node, weights: WeightContainer):
    entry = weights.entry(weight_name(node.name))
    return entry.data, _weight_spec(entry)


def _run_node(
    node: Node,
    ins: list[QTensor],
    weights: WeightContainer,
    quant: dict[str, QuantSpec],
    pending: set[str],
) -> QTensor:
    op = node.op
    out_spec = quant[node.name]
    if isinstance(op, Conv2D):
        w, w_spec = _conv_weights(node, weights)
        x = ins[0]
        bias_acc = None
        if op.bias:
            bias_acc = bias_to_acc(
                weights[bias_name(node.name)], x.spec.scale_exp + w_spec.scale_exp
            )
        if op.mode == "depthwise":
            return _dw_grouped(x, w, w_spec, out_spec, op.stride, node.name)
        if op.mode == "pointwise" or op.kernel == 1:
            if op.stride > 1:
                # 1x1 kernel: striding is plain subsampling of the input grid
                x = QTensor(np.ascontiguousarray(x.data[:: op.stride, :: op.stride]), x.spec)
            flat = w.reshape(w.shape[2], w.shape[3])
            return pw_conv(x, flat, w_spec, out_spec, bias_acc)
        return conv3_via_patches(x, w, w_spec, out_spec, op.stride, bias_acc)
    if isinstance(op, ReLU):
        return integer_relu(ins[0])
    if isinstance(op, Sigmoid):
        return apply_sigmoid(ins[0])
    if isinstance(op, GlobalAvgPool):
        return integer_gap(ins[0])
    if isinstance(op, BilinearResize):
        if op.scale == 0.5:
            return integer_half_resize(ins[0])
        pending.add(node.name)
        return ins[0]  # device output; host upsamples later
    if isinstance(op, ElemMul):
        return integer_elem_mul(ins[0], ins[1], out_spec)
    if isinstance(op, ElemAdd):
        return integer_elem_add(ins[0], ins[1], out_spec)
    if isinstance(op, Concat):
        return integer_concat(ins, out_spec)
    raise DatapathError(f"node {node.name!r}: {type(op).__name__} not executable")


def _dw_grouped(
    x: QTensor,
    kernel: np.ndarray,
    w_spec: QuantSpec,
    out_spec: QuantSpec,
    stride: int,
    name: str,
) -> QTensor:
    c = x.dims[2]
    if kernel.shape != (3, 3, c):
        raise DatapathError(f"{name!r}: depthwise kernel shape {kernel.shape}")
    outs = []
    for g0 in range(0, c, LANES):
        xs = QTensor(x.data[:, :, g0 : g0 + LANES], x.spec)
        outs.append(dw_conv(xs, kernel[:, :, g0 : g0 + LANES], w_spec, out_spec, stride))
    return QTensor(np.concatenate([o.data for o in outs], axis=2), out_spec)


def host_upsample(q: QTensor, scale: float = 8) -> np.ndarray:
    """Finish a device run on the host: dequantize and bilinear-resize."""
    from .tensor import dequantize

    return bilinear_resize(dequantize(q), scale).data
