"""Built-in oracle-equivalence checks, runnable from an installed package.

Each check pits a production path against an independent reference route and
returns (name, passed, detail). The CLI `selftest` subcommand prints them and
fails the process if any check fails. Seeds are fixed so results never flap.
"""
from __future__ import annotations

import numpy as np

from .accel_exec import (
    SIGMOID_IN_SPEC,
    build_sigmoid_lut,
    conv3_via_patches,
    dw_conv,
    pw_conv,
)
from .float_exec import run_float
from .graph import (
    BatchNorm,
    Conv2D,
    NetworkGraph,
    Node,
)
from .metrics import maxf, sweep
from .model_io import WeightContainer
from .oracles import (
    best_f1_brute_force,
    quantized_conv_oracle,
    sigmoid_exact,
)
from .perf_model import HardwareConfig, buffer_words, resource_estimate
from .tensor import QTensor, QuantSpec, Tensor
from .transforms import fold_batch_norm, init_weights

Check = tuple[str, bool, str]


def _random_qtensor(rng, shape, spec):
    lo = -(1 << (spec.bit_width - 1))
    hi = (1 << (spec.bit_width - 1)) - 1
    return QTensor(rng.integers(lo, hi + 1, size=shape).astype(np.int32), spec)


def check_engine_bit_exactness(cases: int = 60) -> Check:
    """Integer engines vs the dequantize-convolve-requantize oracle."""
    rng = np.random.default_rng(2024)
    in_spec, w_spec = QuantSpec(8, -5), QuantSpec(8, -8)
    out_spec = QuantSpec(8, -4)
    for i in range(cases):
        h = int(rng.integers(4, 20))
        w = int(rng.integers(4, 24))
        stride = int(rng.choice([1, 2]))
        flavor = ("depthwise", "pointwise", "stem")[i % 3]
        if flavor == "depthwise":
            c = int(rng.integers(1, 33))
            x = _random_qtensor(rng, (h, w, c), in_spec)
            k = rng.integers(-127, 128, size=(3, 3, c)).astype(np.int32)
            got = dw_conv(x, k, w_spec, out_spec, stride=stride)
            want = quantized_conv_oracle(
                x.data, k, in_spec, w_spec, out_spec, stride=stride, mode="depthwise"
            )
        elif flavor == "pointwise":
            ci = int(rng.integers(1, 70))
            co = int(rng.integers(1, 48))
            x = _random_qtensor(rng, (h, w, ci), in_spec)
            k = rng.integers(-127, 128, size=(ci, co)).astype(np.int32)
            got = pw_conv(x, k, w_spec, out_spec)
            want = quantized_conv_oracle(
                x.data,
                k.reshape(1, 1, ci, co),
                in_spec,
                w_spec,
                out_spec,
                mode="pointwise",
            )
        else:
            ci = int(rng.integers(1, 4))
            co = int(rng.integers(1, 40))
            x = _random_qtensor(rng, (h, w, ci), in_spec)
            k = rng.integers(-127, 128, size=(3, 3, ci, co)).astype(np.int32)
            got = conv3_via_patches(x, k, w_spec, out_spec, stride=stride)
            want = quantized_conv_oracle(
                x.data, k, in_spec, w_spec, out_spec, stride=stride
            )
        if not np.array_equal(got.data, want):
            return (
                "engine-bit-exactness",
                False,
                f"case {i} ({flavor}, {h}x{w}, stride {stride}) diverged",
            )
    return ("engine-bit-exactness", True, f"{cases} random layers bit-exact")


def check_sigmoid_lut() -> Check:
    lut = build_sigmoid_lut()
    centers = -8.0 + (np.arange(256) + 0.5) / 16.0
    approx = lut.astype(np.float64) / 256.0
    err = float(np.abs(approx - sigmoid_exact(centers)).max())
    monotone = bool(np.all(np.diff(lut.astype(np.int64)) >= 0))
    ok = err <= 2.0**-6 and monotone
    return ("sigmoid-lut", ok, f"max center error {err:.6f}, monotone {monotone}")


def check_bn_fold(cases: int = 10) -> Check:
    rng = np.random.default_rng(7)
    for i in range(cases):
        ci = int(rng.integers(1, 9))
        co = int(rng.integers(1, 9))
        g = NetworkGraph(
            inputs={"x": (9, 11, ci)},
            nodes=(
                Node("c", Conv2D(3, co), ("x",)),
                Node("b", BatchNorm(), ("c",)),
            ),
            outputs=("b",),
        )
        w = init_weights(g, seed=i)
        for name, values in (
            ("b.scale", rng.uniform(0.5, 1.5, size=co)),
            ("b.shift", rng.uniform(-0.5, 0.5, size=co)),
        ):
            w.remove(name)
            w.add(name, values.astype(np.float32))
        x = Tensor(rng.normal(0, 1, size=(9, 11, ci)).astype(np.float32))
        before = run_float(g, w, x).output().data
        g2, w2, _ = fold_batch_norm(g, w)
        after = run_float(g2, w2, x).output().data
        rel = float(
            np.abs(after - before).max() / max(np.abs(before).max(), 1e-12)
        )
        if rel > 1e-5:
            return ("bn-fold", False, f"case {i}: relative error {rel:.2e}")
    return ("bn-fold", True, f"{cases} folded graphs within 1e-5 relative")


def check_metrics_oracle(cases: int = 10) -> Check:
    rng = np.random.default_rng(11)
    for i in range(cases):
        prob = rng.random((16, 16))
        gt = rng.random((16, 16)) > rng.uniform(0.3, 0.7)
        ours = maxf(sweep(prob, gt))
        brute = best_f1_brute_force(prob, gt)
        if abs(ours - brute) > 1e-12:
            return ("metrics-maxf", False, f"case {i}: {ours} vs {brute}")
    return ("metrics-maxf", True, f"{cases} maps match brute-force threshold scan")


def check_frozen_numbers() -> Check:
    hw = HardwareConfig()
    words = buffer_words(120, 35, 3, 32)
    dsp8, _ = resource_estimate(hw, 8)
    dsp16, _ = resource_estimate(hw, 16)
    _, bram_base = resource_estimate(hw, 8)
    _, bram_loaded = resource_estimate(hw, 8, weight_params=133_870)
    ok = (
        words == 144_448
        and dsp8 == 656
        and dsp16 == 1312
        and bram_loaded - bram_base == 30
    )
    return (
        "frozen-hardware-numbers",
        ok,
        f"buffer words {words}, dsp {dsp8}/{dsp16}, weight-store blocks "
        f"{bram_loaded - bram_base}",
    )


def run_selftest() -> list[Check]:
    return [
        check_engine_bit_exactness(),
        check_sigmoid_lut(),
        check_bn_fold(),
        check_metrics_oracle(),
        check_frozen_numbers(),
    ]
