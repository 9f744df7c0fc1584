#!/usr/bin/env python3
"""Generate the binary test fixtures this package's suite runs against.

Everything is seeded, so regenerating produces the same logical content.
Run from the exporter directory: python3 scripts/make_fixtures.py
"""
import json
from pathlib import Path

import h5py
import numpy as np
from PIL import Image

from roadnet_rt.graph import BatchNorm, Conv2D, build_roadnet_rt
from roadnet_rt.model_io import WeightContainer, save_graph, graph_to_doc
from roadnet_rt.transforms import init_weights

HERE = Path(__file__).resolve().parent.parent
FIX = HERE / "fixtures"

BN_EPSILON = 1e-3


def keras_style_checkpoint(path, layers, note="fixture checkpoint"):
    """Write layers the way Keras save_weights lays them out:
    /<layer>/<layer>/<role>:0 datasets plus the usual top-level attrs."""
    with h5py.File(path, "w") as f:
        f.attrs["layer_names"] = np.array([n.encode() for n in layers], dtype="S64")
        f.attrs["backend"] = b"tensorflow"
        f.attrs["note"] = note
        for name, tensors in layers.items():
            outer = f.create_group(name)
            inner = outer.create_group(name)
            outer.attrs["weight_names"] = np.array(
                [f"{name}/{role}:0".encode() for role in tensors], dtype="S96"
            )
            for role, values in tensors.items():
                inner.create_dataset(
                    f"{role}:0", data=np.asarray(values, dtype=np.float32), track_times=False
                )


def reference_layers(rng):
    """Checkpoint content for the full road network: real kernel shapes from
    the engine's own initializer, invented but plausible BN statistics."""
    g = build_roadnet_rt()
    w = init_weights(g, seed=2024)
    layers = {}
    for node in g.nodes:
        if isinstance(node.op, Conv2D):
            layers[node.name] = {"kernel": w[f"{node.name}.weight"]}
            if node.op.bias:
                layers[node.name]["bias"] = w[f"{node.name}.bias"]
        elif isinstance(node.op, BatchNorm):
            c = w[f"{node.name}.scale"].shape[0]
            layers[node.name] = {
                "gamma": rng.uniform(0.5, 1.5, c),
                "beta": rng.uniform(-0.5, 0.5, c),
                "moving_mean": rng.normal(0.0, 0.5, c),
                "moving_variance": rng.uniform(0.25, 2.0, c),
            }
    return g, layers


def bn_unit_fixture():
    """One 1x1 conv into one batch norm, two channels. The BN statistics are
    the exact unit case: gamma 1, beta 0, mean 0, variance 1 - epsilon."""
    from roadnet_rt.graph import NetworkGraph, Node, ReLU

    g = NetworkGraph(
        inputs={"image": (4, 4, 2)},
        nodes=(
            Node("conv1", Conv2D(kernel=1, out_channels=2, mode="pointwise"), ("image",)),
            Node("conv1_bn", BatchNorm(), ("conv1",)),
            Node("conv1_act", ReLU(), ("conv1_bn",)),
        ),
        outputs=("conv1_act",),
    )
    save_graph(g, FIX / "bn_unit_graph.json")
    kernel = np.arange(4, dtype=np.float32).reshape(1, 1, 2, 2) / 4.0
    ones = np.ones(2, np.float32)
    zeros = np.zeros(2, np.float32)
    layers = {
        "conv1": {"kernel": kernel},
        "conv1_bn": {
            "gamma": ones,
            "beta": zeros,
            "moving_mean": zeros,
            "moving_variance": np.float32(1.0) - np.float32(BN_EPSILON) * ones,
        },
    }
    keras_style_checkpoint(FIX / "bn_unit.h5", layers)
    layers["aux_debug"] = {"kernel": np.ones((1, 1, 2, 2), np.float32)}
    keras_style_checkpoint(FIX / "bn_unit_extra.h5", layers, note="stray layer variant")


def container_sample():
    """A small container written by the engine's own serializer, with a JSON
    twin spelling out the contents, so the other side can prove byte parity."""
    rng = np.random.default_rng(7)
    w = WeightContainer()
    entries = [
        ("enc.weight", rng.standard_normal((2, 3)).astype(np.float32), 0),
        ("enc.kernel_q", rng.integers(-128, 128, (3, 3, 2), dtype=np.int8), -7),
        ("enc.acc_q", rng.integers(-3000, 3000, (5,), dtype=np.int16), -3),
    ]
    doc = []
    for name, data, scale_exp in entries:
        w.add(name, data, scale_exp)
        doc.append(
            {
                "name": name,
                "dtype": str(data.dtype),
                "scale_exp": scale_exp,
                "shape": list(data.shape),
                "values": data.ravel().tolist(),
            }
        )
    (FIX / "sample.rnrt").write_bytes(w.to_bytes())
    (FIX / "sample.json").write_text(json.dumps(doc, indent=2) + "\n")


def png_fixtures():
    Image.fromarray(np.zeros((1, 1, 3), np.uint8)).save(FIX / "black1x1.png")

    rng = np.random.default_rng(12)
    scene = rng.integers(0, 256, (4, 5, 3), dtype=np.uint8)
    Image.fromarray(scene).save(FIX / "scene_rgb.png")

    gray = np.array([[0, 100, 255], [17, 128, 254]], np.uint8)
    Image.fromarray(gray, mode="L").save(FIX / "scene_gray.png")

    rgba = np.dstack([scene[:2, :2], np.full((2, 2), 255, np.uint8)])
    Image.fromarray(rgba, mode="RGBA").save(FIX / "scene_opaque.png")
    rgba_holes = rgba.copy()
    rgba_holes[1, 1, 3] = 128
    Image.fromarray(rgba_holes, mode="RGBA").save(FIX / "scene_holes.png")

    # color GT: magenta road band, red residue, black elsewhere
    mask = np.zeros((3, 6, 3), np.uint8)
    mask[1, 1:5] = (255, 0, 255)
    mask[2, 0] = (255, 0, 0)
    Image.fromarray(mask).save(FIX / "labels_gt.png")

    gray_mask = np.array([[0, 127, 128], [255, 1, 200]], np.uint8)
    Image.fromarray(gray_mask, mode="L").save(FIX / "labels_gray_gt.png")

    deep = (np.arange(6, dtype=np.uint16) * 9000).reshape(2, 3)
    Image.fromarray(deep).save(FIX / "deep16.png")

    pal = Image.fromarray(scene).convert("P", palette=Image.ADAPTIVE, colors=16)
    pal.save(FIX / "palette.png")

    meta = {
        "scene_rgb": {"shape": list(scene.shape), "values": scene.ravel().tolist()},
        "scene_gray": {"shape": list(gray.shape), "values": gray.ravel().tolist()},
        "labels_gt_road_xy": [[1, x] for x in range(1, 5)],
        "labels_gray_road": (np.asarray(gray_mask) >= 128).astype(int).ravel().tolist(),
        "palette_rgb": {
            "shape": [4, 5, 3],
            "values": np.asarray(pal.convert("RGB")).ravel().tolist(),
        },
    }
    (FIX / "pixels.json").write_text(json.dumps(meta) + "\n")


def main():
    FIX.mkdir(exist_ok=True)
    rng = np.random.default_rng(2024)
    g, layers = reference_layers(rng)
    save_graph(g, FIX / "roadnet_graph.json")
    keras_style_checkpoint(FIX / "roadnet.h5", layers)
    without_head = {k: v for k, v in layers.items() if k != "head_conv"}
    keras_style_checkpoint(FIX / "missing_head.h5", without_head, note="head removed")
    bn_unit_fixture()
    container_sample()
    png_fixtures()
    print(f"fixtures written under {FIX}")


if __name__ == "__main__":
    main()
