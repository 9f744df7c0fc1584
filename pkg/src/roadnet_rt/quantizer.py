"""Post-training calibration: float traces in, integer network out.

Weights get per-tensor power-of-two scales; activations get per-node scales
measured over a set of calibration images run through the float executor.
Sigmoid feeders are pinned to the table's input convention and every
requantize shift is checked (and repaired, where a legal repair exists) so
the integer datapath never needs a left shift.
"""
from __future__ import annotations

import numpy as np

from .accel_exec import SIGMOID_OUT_SPEC, validate_datapath
from .float_exec import bias_name, run_float, weight_name
from .graph import (
    BatchNorm,
    BilinearResize,
    Concat,
    Conv2D,
    ElemAdd,
    ElemMul,
    GlobalAvgPool,
    NetworkGraph,
    ReLU,
    Sigmoid,
    topo_order,
)
from .model_io import WeightContainer
from .tensor import INT32_MAX, QuantSpec, Tensor, calibrate, quantize_array

MAX_SCALE_EXP = 8


class QuantizeError(ValueError):
    """Calibration cannot produce a runnable integer network."""


def _as_tensor(img) -> Tensor:
    return img if isinstance(img, Tensor) else Tensor(np.asarray(img, dtype=np.float32))


def trace_maxima(
    g: NetworkGraph, weights, images: list
) -> dict[str, float]:
    """Largest |value| seen at every port and node across the images."""
    if not images:
        raise QuantizeError("calibration needs at least one image")
    maxima: dict[str, float] = {}
    for img in images:
        trace = run_float(g, weights, _as_tensor(img))
        for name, t in trace.values.items():
            m = float(np.abs(t.data).max()) if t.data.size else 0.0
            if not np.isfinite(m):
                raise QuantizeError(f"float trace of {name!r} is not finite")
            maxima[name] = max(maxima.get(name, 0.0), m)
    return maxima


def _accumulation_depth(w: np.ndarray) -> int:
    """Products summed per output element: 9 taps, times fan-in for dense taps."""
    if w.ndim == 3:  # depthwise (ky, kx, c): one channel per lane
        return w.shape[0] * w.shape[1]
    return w.shape[0] * w.shape[1] * w.shape[2]


def conv_weight_spec(w: np.ndarray, bit_width: int) -> QuantSpec:
    """Calibrated spec, coarsened until the worst-case product sum fits INT32.

    The 32-bit accumulator must hold depth * |x|_max * |w|_max for any in-range
    activation. Full-range int8 kernels always fit; int16 ones give up a few
    low bits on deep layers to keep the guarantee unconditional.
    """
    x_max = (1 << (bit_width - 1)) - 1
    depth = _accumulation_depth(w)
    spec = calibrate(w, bit_width)
    while depth * x_max * int(np.abs(quantize_array(w, spec)).max()) > INT32_MAX:
        spec = QuantSpec(bit_width, spec.scale_exp + 1)
    return spec


def quantize_weights(
    g: NetworkGraph, weights, bit_width: int = 8
) -> WeightContainer:
    """Integer conv kernels (per-tensor scale), biases kept as float32 reals."""
    if any(isinstance(n.op, BatchNorm) for n in g.nodes):
        raise QuantizeError("fold batch norms before quantizing")
    out = WeightContainer()
    store_dtype = np.int8 if bit_width == 8 else np.int16
    for node in g.nodes:
        if not isinstance(node.op, Conv2D):
            continue
        wname = weight_name(node.name)
        w = np.asarray(weights[wname], dtype=np.float64)
        spec = conv_weight_spec(w, bit_width)
        out.add(wname, quantize_array(w, spec).astype(store_dtype), spec.scale_exp)
        if node.op.bias:
            bname = bias_name(node.name)
            out.add(bname, np.asarray(weights[bname], dtype=np.float32))
    return out


def _pin_targets(g: NetworkGraph) -> set[str]:
    """Nodes whose output feeds a sigmoid, walking back through pass-throughs."""
    passthrough = (ReLU, GlobalAvgPool, BilinearResize)
    targets: set[str] = set()
    node_map = g.node_map
    for node in g.nodes:
        if not isinstance(node.op, Sigmoid):
            continue
        ref = node.inputs[0]
        while ref in node_map and isinstance(node_map[ref].op, passthrough):
            ref = node_map[ref].inputs[0]
        targets.add(ref)
    return targets


def _calibrated(maxima: dict[str, float], name: str, bit_width: int) -> QuantSpec:
    return calibrate(np.array([maxima.get(name, 0.0)]), bit_width)


def _bump(spec: QuantSpec, floor_exp: int, context: str) -> QuantSpec:
    if spec.scale_exp >= floor_exp:
        return spec
    if floor_exp > MAX_SCALE_EXP:
        raise QuantizeError(f"{context}: needs scale_exp {floor_exp}, past the legal range")
    return QuantSpec(spec.bit_width, floor_exp)


def assign_specs(
    g: NetworkGraph,
    weight_specs: dict[str, QuantSpec],
    maxima: dict[str, float],
    bit_width: int = 8,
) -> tuple[dict[str, QuantSpec], dict[str, QuantSpec]]:
    """Per-value QuantSpecs honoring engine pins and non-negative shifts.

    Returns (value specs, repaired weight specs). A conv feeding a pinned
    (sigmoid) output cannot move its output scale, so its weight scale is
    coarsened instead; everywhere else the output scale bumps upward.
    """
    pin_spec = QuantSpec(bit_width, -4)
    pinned = _pin_targets(g)
    specs: dict[str, QuantSpec] = {}
    repaired = dict(weight_specs)
    for port in g.inputs:
        specs[port] = _calibrated(maxima, port, bit_width)
        if port in pinned:
            specs[port] = pin_spec
    for name in topo_order(g):
        node = g.node(name)
        op = node.op
        ins = [specs[r] for r in node.inputs]
        if isinstance(op, Conv2D):
            w_spec = repaired[weight_name(name)]
            spec = pin_spec if name in pinned else _calibrated(maxima, name, bit_width)
            acc_exp = ins[0].scale_exp + w_spec.scale_exp
            if spec.scale_exp < acc_exp:
                if name in pinned:
                    # keep the pinned output; coarsen the kernel scale instead
                    we = spec.scale_exp - ins[0].scale_exp
                    if we > MAX_SCALE_EXP:
                        raise QuantizeError(
                            f"{name}: cannot reach the pinned sigmoid scale "
                            f"(weight scale_exp {we} is out of range)"
                        )
                    repaired[weight_name(name)] = QuantSpec(w_spec.bit_width, we)
                else:
                    spec = _bump(spec, acc_exp, name)
        elif isinstance(op, Sigmoid):
            spec = SIGMOID_OUT_SPEC
        elif isinstance(op, (ReLU, GlobalAvgPool, BilinearResize)):
            spec = ins[0]
        elif isinstance(op, ElemMul):
            spec = _calibrated(maxima, name, bit_width)
            spec = _bump(spec, ins[0].scale_exp + ins[1].scale_exp, name)
        elif isinstance(op, ElemAdd):
            spec = _calibrated(maxima, name, bit_width)
            spec = _bump(spec, min(s.scale_exp for s in ins), name)
        elif isinstance(op, Concat):
            spec = _calibrated(maxima, name, bit_width)
            spec = _bump(spec, max(s.scale_exp for s in ins), name)
        elif isinstance(op, BatchNorm):
            raise QuantizeError("fold batch norms before quantizing")
        else:
            raise QuantizeError(f"no spec rule for {type(op).__name__}")
        if name in pinned and not isinstance(op, Conv2D):
            spec = pin_spec
        specs[name] = spec
    return specs, repaired


def quantize_network(
    g: NetworkGraph,
    weights,
    images: list,
    bit_width: int = 8,
) -> tuple[NetworkGraph, WeightContainer]:
    """Calibrate a lowered float network into a runnable integer one."""
    qw = quantize_weights(g, weights, bit_width)
    w_specs = {
        name: QuantSpec(bit_width, qw.entry(name).scale_exp)
        for name in qw.names()
        if not name.endswith(".bias")
    }
    maxima = trace_maxima(g, weights, images)
    specs, repaired = assign_specs(g, w_specs, maxima, bit_width)
    store_dtype = np.int8 if bit_width == 8 else np.int16
    for name, new_spec in repaired.items():
        if new_spec != w_specs[name]:
            w = np.asarray(weights[name], dtype=np.float64)
            qw.remove(name)
            qw.add(name, quantize_array(w, new_spec).astype(store_dtype), new_spec.scale_exp)
    gq = g.with_quant(specs)
    validate_datapath(gq, qw)
    return gq, qw
