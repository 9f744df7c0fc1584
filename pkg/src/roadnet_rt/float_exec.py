"""Float32 reference executor for layer graphs.

This is the behavioural ground truth the integer datapath is judged against.
Convolution accumulates per kernel tap in float32 with a fixed tap order, so
repeated runs of the same build reproduce results bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .graph import (
    BatchNorm,
    BilinearResize,
    Concat,
    Conv2D,
    ElemAdd,
    ElemMul,
    GlobalAvgPool,
    GraphError,
    NetworkGraph,
    Node,
    ReLU,
    Sigmoid,
    infer_shapes,
    topo_order,
)
from .tensor import Tensor, round_half_away


class MissingWeightError(RuntimeError):
    """A node referenced a tensor the weight store does not provide."""


def weight_name(node: str) -> str:
    return f"{node}.weight"


def bias_name(node: str) -> str:
    return f"{node}.bias"


def bn_scale_name(node: str) -> str:
    return f"{node}.scale"


def bn_shift_name(node: str) -> str:
    return f"{node}.shift"


def conv2d_naive(
    x: Tensor,
    weights: np.ndarray,
    bias: np.ndarray | None = None,
    *,
    stride: int = 1,
    dilation: int = 1,
    mode: str = "standard",
) -> Tensor:
    """Same-padding convolution; zero-initialized accumulator, bias added last.

    weights: (K, K, C_in, C_out) for standard/pointwise, (K, K, C) depthwise.
    Output position (y, x) is centered on input (y*stride, x*stride); rows
    outside the input contribute zero.
    """
    data = x.data
    h, w, c = data.shape
    k = int(weights.shape[0])
    if weights.shape[1] != k:
        raise ValueError(f"kernel must be square, got {weights.shape}")
    if mode == "depthwise":
        if weights.shape != (k, k, c):
            raise ValueError(f"depthwise weights {weights.shape} vs {c} channels")
        co = c
    else:
        if weights.ndim != 4 or weights.shape[2] != c:
            raise ValueError(f"weights {weights.shape} do not fit {c} input channels")
        if mode == "pointwise" and (k != 1 or dilation != 1):
            raise ValueError("pointwise mode requires kernel 1, dilation 1")
        co = int(weights.shape[3])
    pad = (dilation * (k - 1)) // 2
    oh, ow = -(-h // stride), -(-w // stride)
    wf = np.asarray(weights, dtype=np.float32)
    acc = np.zeros((oh, ow, co), dtype=np.float32)
    for ky in range(k):
        off_y = dilation * ky - pad
        y_lo = max(0, -(-(-off_y) // stride) if off_y < 0 else 0)
        y_hi = min(oh, (h - 1 - off_y) // stride + 1 if h - 1 - off_y >= 0 else 0)
        if y_hi <= y_lo:
            continue
        for kx in range(k):
            off_x = dilation * kx - pad
            x_lo = max(0, -(-(-off_x) // stride) if off_x < 0 else 0)
            x_hi = min(ow, (w - 1 - off_x) // stride + 1 if w - 1 - off_x >= 0 else 0)
            if x_hi <= x_lo:
                continue
            rows = slice(y_lo * stride + off_y, (y_hi - 1) * stride + off_y + 1, stride)
            cols = slice(x_lo * stride + off_x, (x_hi - 1) * stride + off_x + 1, stride)
            patch = data[rows, cols, :]
            if mode == "depthwise":
                acc[y_lo:y_hi, x_lo:x_hi, :] += patch * wf[ky, kx][None, None, :]
            else:
                acc[y_lo:y_hi, x_lo:x_hi, :] += patch @ wf[ky, kx]
    if bias is not None:
        acc = acc + np.asarray(bias, dtype=np.float32)
    return Tensor(acc)


def global_avg_pool(x: Tensor) -> Tensor:
    mean = x.data.mean(axis=(0, 1), keepdims=True, dtype=np.float64)
    return Tensor(mean.astype(np.float32))


def _axis_sample(arr: np.ndarray, out_n: int, in_n: int, axis: int) -> np.ndarray:
    """Half-pixel-center bilinear sampling along one axis, edge clamped."""
    src = np.clip((np.arange(out_n) + 0.5) * (in_n / out_n) - 0.5, 0.0, in_n - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, in_n - 1)
    frac = src - i0
    a = np.take(arr, i0, axis=axis)
    b = np.take(arr, i1, axis=axis)
    shape = [1, 1, 1]
    shape[axis] = out_n
    frac = frac.reshape(shape)
    return a * (1.0 - frac) + b * frac


def resize_to(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize to explicit output dims (host-side preprocessing)."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target dims must be positive, got {out_h}x{out_w}")
    data = x.data.astype(np.float64)
    h, w, _ = data.shape
    out = _axis_sample(data, out_h, h, 0)
    out = _axis_sample(out, out_w, w, 1)
    return Tensor(out.astype(np.float32))


def bilinear_resize(x: Tensor, scale: float) -> Tensor:
    """Half-pixel-center bilinear resize by a uniform scale factor."""
    h, w, _ = x.data.shape
    if scale == 0.5 and (h % 2 or w % 2):
        raise ValueError(f"half resize needs even dims, got {h}x{w}")
    oh = max(1, int(round_half_away(h * scale)))
    ow = max(1, int(round_half_away(w * scale)))
    return resize_to(x, oh, ow)


def stable_sigmoid(values: np.ndarray) -> np.ndarray:
    x = np.asarray(values, dtype=np.float32)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class ExecutionTrace:
    """Every node's float output from one forward pass."""

    graph: NetworkGraph
    values: dict[str, Tensor]

    def output(self, name: str | None = None) -> Tensor:
        return self.values[name or self.graph.outputs[0]]


def _fetch(weights: Mapping[str, np.ndarray], node: str, tensor: str) -> np.ndarray:
    if tensor not in weights:
        raise MissingWeightError(f"node {node!r} is missing tensor {tensor!r}")
    return np.asarray(weights[tensor])


def run_float(
    g: NetworkGraph,
    weights: Mapping[str, np.ndarray],
    inputs: Tensor | Mapping[str, Tensor],
) -> ExecutionTrace:
    """Execute the graph in float32, returning all intermediate maps."""
    if isinstance(inputs, Tensor):
        if len(g.inputs) != 1:
            raise GraphError("graph has multiple input ports; pass a mapping")
        inputs = {next(iter(g.inputs)): inputs}
    actual = {port: t.dims for port, t in inputs.items()}
    infer_shapes(g, actual)  # validates connectivity against real dims
    values: dict[str, Tensor] = dict(inputs)
    for name in topo_order(g):
        node = g.node(name)
        ins = [values[ref] for ref in node.inputs]
        values[name] = _run_node(node, ins, weights)
    return ExecutionTrace(g, values)


def _run_node(
    node: Node, ins: list[Tensor], weights: Mapping[str, np.ndarray]
) -> Tensor:
    op = node.op
    if isinstance(op, Conv2D):
        w = _fetch(weights, node.name, weight_name(node.name))
        b = None
        if op.bias:
            b = _fetch(weights, node.name, bias_name(node.name))
        return conv2d_naive(
            ins[0], w, b, stride=op.stride, dilation=op.dilation, mode=op.mode
        )
    if isinstance(op, BatchNorm):
        scale = _fetch(weights, node.name, bn_scale_name(node.name))
        shift = _fetch(weights, node.name, bn_shift_name(node.name))
        out = ins[0].data * scale.astype(np.float32) + shift.astype(np.float32)
        return Tensor(out)
    if isinstance(op, ReLU):
        return Tensor(np.maximum(ins[0].data, np.float32(0)))
    if isinstance(op, Sigmoid):
        return Tensor(stable_sigmoid(ins[0].data))
    if isinstance(op, GlobalAvgPool):
        return global_avg_pool(ins[0])
    if isinstance(op, BilinearResize):
        return bilinear_resize(ins[0], op.scale)
    if isinstance(op, ElemAdd):
        return Tensor(ins[0].data + ins[1].data)
    if isinstance(op, ElemMul):
        return Tensor(ins[0].data * ins[1].data)
    if isinstance(op, Concat):
        return Tensor(np.concatenate([t.data for t in ins], axis=2))
    raise GraphError(f"node {node.name!r}: unknown op {type(op).__name__}")
