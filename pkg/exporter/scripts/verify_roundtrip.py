#!/usr/bin/env python3
"""Cross-tool check: load an exported container with the engine and compare
every tensor against values recomputed straight from the checkpoint.

Usage: verify_roundtrip.py CONTAINER CKPT_H5 GRAPH_JSON EPSILON [--forward]

Prints one JSON object: {"ok": bool, "tensors": int, "max_abs_diff": float,
"forward": {...}?, "problems": [...]}. Exit 0 iff ok.
"""
import json
import sys

import h5py
import numpy as np

from roadnet_rt.graph import BatchNorm, Conv2D
from roadnet_rt.model_io import load_graph, load_weights

TOL = 1e-6


def expected_tensors(ckpt_path, graph, epsilon):
    out = {}
    with h5py.File(ckpt_path, "r") as f:
        for node in graph.nodes:
            if isinstance(node.op, Conv2D):
                kernel = f[f"{node.name}/{node.name}/kernel:0"][...]
                out[f"{node.name}.weight"] = np.asarray(kernel, np.float32)
                if node.op.bias:
                    bias = f[f"{node.name}/{node.name}/bias:0"][...]
                    out[f"{node.name}.bias"] = np.asarray(bias, np.float32)
            elif isinstance(node.op, BatchNorm):
                grp = f[f"{node.name}/{node.name}"]
                gamma = np.asarray(grp["gamma:0"], np.float64)
                beta = np.asarray(grp["beta:0"], np.float64)
                mean = np.asarray(grp["moving_mean:0"], np.float64)
                var = np.asarray(grp["moving_variance:0"], np.float64)
                scale = (gamma / np.sqrt(var + epsilon)).astype(np.float32)
                shift = (beta - mean * scale.astype(np.float64)).astype(np.float32)
                out[f"{node.name}.scale"] = scale
                out[f"{node.name}.shift"] = shift
    return out


def main():
    container_path, ckpt_path, graph_path, epsilon = sys.argv[1:5]
    do_forward = "--forward" in sys.argv[5:]
    graph = load_graph(graph_path)
    weights = load_weights(container_path)
    expected = expected_tensors(ckpt_path, graph, float(epsilon))

    problems = []
    loaded = set(weights.names())
    wanted = set(expected)
    for name in sorted(wanted - loaded):
        problems.append(f"container lacks {name}")
    for name in sorted(loaded - wanted):
        problems.append(f"container has unexpected {name}")

    max_diff = 0.0
    for name in sorted(wanted & loaded):
        got = weights[name]
        want = expected[name]
        if got.dtype != np.float32:
            problems.append(f"{name}: dtype {got.dtype}, wanted float32")
            continue
        if got.shape != want.shape:
            problems.append(f"{name}: shape {got.shape}, wanted {want.shape}")
            continue
        diff = float(np.max(np.abs(got.astype(np.float64) - want.astype(np.float64))))
        max_diff = max(max_diff, diff)
        if diff > TOL:
            problems.append(f"{name}: max abs diff {diff:.3e} over {TOL:.0e}")

    result = {
        "ok": not problems,
        "tensors": len(wanted & loaded),
        "max_abs_diff": max_diff,
        "problems": problems,
    }

    if do_forward and not problems:
        from roadnet_rt.float_exec import run_float
        from roadnet_rt.synthetic import synthetic_road_scene
        from roadnet_rt.tensor import Tensor

        h, w, _ = next(iter(graph.inputs.values()))
        image, _ = synthetic_road_scene(dims=(h, w), seed=5)
        x = Tensor(image.astype(np.float32) / 255.0)
        prob = run_float(graph, weights, x).output().data
        result["forward"] = {
            "output_shape": list(prob.shape),
            "finite": bool(np.isfinite(prob).all()),
            "min": float(prob.min()),
            "max": float(prob.max()),
        }
        if not result["forward"]["finite"]:
            result["ok"] = False
            result["problems"].append("forward pass produced non-finite values")

    print(json.dumps(result))
    sys.exit(0 if result["ok"] else 1)


if __name__ == "__main__":
    main()
