"""Command-line front end: model files in, masks/reports out.

Host-side duties live here: loading PNM images, resizing inputs to the
network size, upsampling and thresholding probability maps, and writing
masks and overlays. Exit codes: 0 success, 1 usage, 2 I/O, 3 validation,
4 selftest failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .accel_exec import DatapathError, host_upsample, run_quantized
from .float_exec import MissingWeightError, Tensor, resize_to, run_float
from .graph import GraphError, NetworkGraph, RoadNetConfig, build_roadnet_rt
from .metrics import (
    avg_precision,
    confusion,
    derive,
    maxf,
    pool,
    pool_curves,
    sweep,
)
from .model_io import (
    FormatError,
    WeightContainer,
    load_graph,
    load_pgm,
    load_ppm,
    load_weights,
    overlay_image,
    save_graph,
    save_pgm,
    save_ppm,
    save_weights,
)
from .perf_model import HardwareConfig, estimate_cycles, tile_plan
from .quantizer import QuantizeError, quantize_network
from .selftest import run_selftest
from .transforms import (
    check_channel_alignment,
    count_macs,
    count_params,
    init_weights,
    separable_reduction,
    standard_pipeline,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_VALIDATION = 3
EXIT_SELFTEST = 4

# published baseline figures for the reference design, printed for context
BASELINE_PARAMS_STANDARD = 756_032
BASELINE_PARAMS_SEPARABLE = 133_870
BASELINE_FPS = 196.7


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would sys.exit(2)
        raise UsageError(message)


@dataclass
class RunConfig:
    subcommand: str
    model: str | None = None
    weights: str | None = None
    images: list[str] = field(default_factory=list)
    precision: str = "float32"
    threshold: float = 0.5
    out: str = "."
    calib_dir: str | None = None
    data_dir: str | None = None
    seed: int = 0
    clock_hz: int | None = None
    buffers: int | None = None
    bus_bytes: int | None = None
    as_json: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise UsageError(f"threshold must be inside (0, 1), got {self.threshold}")
        if self.precision not in ("float32", "int8", "int16"):
            raise UsageError(f"unknown precision {self.precision!r}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="roadnet-rt", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--json", action="store_true", dest="as_json")
        return p

    p = add("init", "write the reference graph and seeded float weights")

    p = add("info", "parameter/MAC/alignment report for a model")
    p.add_argument("--model", required=True)
    p.add_argument("--weights")

    p = add("transform", "lower the graph for the accelerator datapath")
    p.add_argument("--model", required=True)
    p.add_argument("--weights", required=True)

    p = add("quantize", "calibrate integer specs from sample images")
    p.add_argument("--model", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--calib-dir", required=True, dest="calib_dir")
    p.add_argument("--precision", default="int8", choices=["int8", "int16"])

    p = add("run", "segment one image, write mask and overlay")
    p.add_argument("--model", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True, action="append", dest="images")
    p.add_argument(
        "--precision", default="float32", choices=["float32", "int8", "int16"]
    )
    p.add_argument("--threshold", type=float, default=0.5)

    p = add("eval", "score a directory of image/ground-truth pairs")
    p.add_argument("--model", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--data", required=True, dest="data_dir")
    p.add_argument(
        "--precision", default="float32", choices=["float32", "int8", "int16"]
    )
    p.add_argument("--threshold", type=float, default=0.5)

    p = add("estimate", "accelerator cycle/fps/resource estimate")
    p.add_argument("--model", required=True)
    p.add_argument("--weights")
    p.add_argument("--clock-hz", type=int, dest="clock_hz")
    p.add_argument("--buffers", type=int)
    p.add_argument("--bus-bytes", type=int, dest="bus_bytes")
    p.add_argument("--precision", default="int8", choices=["int8", "int16"])

    add("selftest", "run the built-in oracle-equivalence checks")
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    fields = {k: v for k, v in vars(args).items() if v is not None}
    fields.setdefault("images", [])
    return RunConfig(**fields)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_image_01(path: str) -> np.ndarray:
    return load_ppm(path).astype(np.float32) / 255.0


def _network_input(g: NetworkGraph) -> tuple[str, tuple[int, int, int]]:
    if len(g.inputs) != 1:
        raise DatapathError(f"expected a single input port, graph has {len(g.inputs)}")
    port, dims = next(iter(g.inputs.items()))
    return port, dims


def _prepare_input(g: NetworkGraph, image01: np.ndarray) -> Tensor:
    _, (h, w, c) = _network_input(g)
    if image01.shape[2] != c:
        raise DatapathError(
            f"graph wants {c}-channel input, image has {image01.shape[2]}"
        )
    return resize_to(Tensor(image01), h, w)


def _check_precision(weights: WeightContainer, precision: str) -> None:
    kinds = {str(weights.entry(n).data.dtype) for n in weights.names()}
    if precision == "float32":
        if kinds - {"float32"}:
            raise DatapathError(
                "float32 run needs a float container; found " + ", ".join(sorted(kinds))
            )
        return
    want = {"int8": "int8", "int16": "int16"}[precision]
    kernel_kinds = kinds - {"float32"}  # biases stay float32 in int containers
    if not kernel_kinds:
        raise DatapathError(f"{precision} run needs a quantized container")
    if kernel_kinds != {want}:
        raise DatapathError(
            f"{precision} run against {', '.join(sorted(kernel_kinds))} kernels"
        )


def _predict_prob(
    g: NetworkGraph, weights: WeightContainer, x: Tensor, precision: str
) -> np.ndarray:
    """Full-resolution probability map in [0, 1] as H x W float32."""
    _check_precision(weights, precision)
    if precision == "float32":
        prob = run_float(g, weights, x).output().data
    else:
        trace = run_quantized(g, weights, x.data)
        out_name = g.outputs[0]
        if out_name in trace.pending_upsample:
            prob = host_upsample(trace.output(), g.node(out_name).op.scale)
        else:
            prob = trace.prob()
    return prob[:, :, 0]


def _resize_mask_nearest(mask: np.ndarray, h: int, w: int) -> np.ndarray:
    ys = np.minimum(((np.arange(h) + 0.5) * mask.shape[0] / h).astype(np.int64), mask.shape[0] - 1)
    xs = np.minimum(((np.arange(w) + 0.5) * mask.shape[1] / w).astype(np.int64), mask.shape[1] - 1)
    return mask[ys][:, xs]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_init(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    g = build_roadnet_rt(RoadNetConfig())
    weights = init_weights(g, seed=cfg.seed)
    save_graph(g, out / "graph.json")
    save_weights(weights, out / "weights.rnrt")
    print(f"graph: {out / 'graph.json'} ({len(g.nodes)} nodes)")
    print(f"weights: {out / 'weights.rnrt'} ({len(weights)} tensors, seed {cfg.seed})")
    print(f"parameters: {count_params(g)}")
    return EXIT_OK


def cmd_info(cfg: RunConfig) -> int:
    g = load_graph(cfg.model)
    params = count_params(g)
    macs = count_macs(g)
    warnings = check_channel_alignment(g)
    std_params, sep_params, factor = separable_reduction(g)

    payload = {
        "nodes": len(g.nodes),
        "parameters": params,
        "macs_per_frame": macs,
        "alignment_warnings": warnings,
        "standard_params": std_params,
        "separable_params": sep_params,
        "reduction_factor": round(factor, 3),
        "baseline_standard_params": BASELINE_PARAMS_STANDARD,
        "baseline_separable_params": BASELINE_PARAMS_SEPARABLE,
    }
    if cfg.weights:
        weights = load_weights(cfg.weights)
        payload["weight_tensors"] = len(weights)
        payload["quantized"] = any(
            weights.entry(n).data.dtype != np.float32 for n in weights.names()
        )
    if cfg.as_json:
        print(json.dumps(payload, indent=2))
        return EXIT_OK

    print(f"nodes: {payload['nodes']}")
    print(f"parameters: {params}")
    print(f"MACs/frame: {macs}")
    print(
        f"standard vs separable parameters: {std_params} -> {sep_params} "
        f"(factor {factor:.2f})"
    )
    print(
        f"published baseline: {BASELINE_PARAMS_STANDARD} -> "
        f"{BASELINE_PARAMS_SEPARABLE} (factor 5.64)"
    )
    if "weight_tensors" in payload:
        kind = "quantized" if payload["quantized"] else "float32"
        print(f"weights: {payload['weight_tensors']} tensors ({kind})")
    if warnings:
        print("alignment warnings:")
        for w in warnings:
            print(f"  {w}")
    else:
        print("alignment warnings: none")
    return EXIT_OK


def cmd_transform(cfg: RunConfig) -> int:
    g = load_graph(cfg.model)
    weights = load_weights(cfg.weights)
    lowered, new_weights, reports = standard_pipeline(g, weights, seed=cfg.seed)
    out = _out_dir(cfg)
    save_graph(lowered, out / "graph.json")
    save_weights(new_weights, out / "weights.rnrt")

    if cfg.as_json:
        print(
            json.dumps(
                {
                    "passes": [
                        {
                            "name": r.pass_name,
                            "params_before": r.params_before,
                            "params_after": r.params_after,
                            "macs_before": r.macs_before,
                            "macs_after": r.macs_after,
                            "rows": r.rows(),
                            "warnings": list(r.warnings),
                        }
                        for r in reports
                    ],
                    "graph": str(out / "graph.json"),
                    "weights": str(out / "weights.rnrt"),
                },
                indent=2,
            )
        )
        return EXIT_OK
    for report in reports:
        print(report.render())
        print()
    print(f"lowered graph: {out / 'graph.json'} ({len(lowered.nodes)} nodes)")
    print(f"weights: {out / 'weights.rnrt'} ({len(new_weights)} tensors)")
    return EXIT_OK


def cmd_quantize(cfg: RunConfig) -> int:
    g = load_graph(cfg.model)
    weights = load_weights(cfg.weights)
    calib = sorted(Path(cfg.calib_dir).glob("*.ppm"))
    if not calib:
        raise FileNotFoundError(f"no .ppm calibration images under {cfg.calib_dir}")
    images = [_prepare_input(g, _load_image_01(str(p))).data for p in calib]
    bit_width = {"int8": 8, "int16": 16}[cfg.precision]
    quantized, container = quantize_network(g, weights, images, bit_width=bit_width)

    out = _out_dir(cfg)
    save_graph(quantized, out / "graph.json")
    save_weights(container, out / "weights.rnrt")
    summary = {
        "calibration_images": len(images),
        "precision": cfg.precision,
        "weight_tensors": len(container),
        "graph": str(out / "graph.json"),
        "weights": str(out / "weights.rnrt"),
    }
    if cfg.as_json:
        print(json.dumps(summary, indent=2))
    else:
        print(
            f"calibrated {cfg.precision} from {len(images)} images -> "
            f"{out / 'weights.rnrt'} ({len(container)} tensors)"
        )
    return EXIT_OK


def cmd_run(cfg: RunConfig) -> int:
    g = load_graph(cfg.model)
    weights = load_weights(cfg.weights)
    out = _out_dir(cfg)
    results = []
    for image_path in cfg.images:
        image01 = _load_image_01(image_path)
        x = _prepare_input(g, image01)
        prob = _predict_prob(g, weights, x, cfg.precision)
        mask = prob > cfg.threshold

        stem = Path(image_path).stem
        mask_path = out / f"{stem}_mask.pgm"
        overlay_path = out / f"{stem}_overlay.ppm"
        display = np.clip(x.data * 255.0, 0, 255).astype(np.uint8)
        save_pgm(mask_path, mask.astype(np.uint8) * 255)
        save_ppm(overlay_path, overlay_image(display, mask))
        results.append(
            {
                "image": image_path,
                "mask": str(mask_path),
                "overlay": str(overlay_path),
                "road_fraction": round(float(mask.mean()), 6),
            }
        )
    if cfg.as_json:
        print(json.dumps({"precision": cfg.precision, "results": results}, indent=2))
    else:
        for r in results:
            print(
                f"{r['image']}: road {100 * r['road_fraction']:.1f}% -> "
                f"{r['mask']}, {r['overlay']}"
            )
    return EXIT_OK


def _eval_pairs(data_dir: str) -> list[tuple[Path, Path]]:
    root = Path(data_dir)
    pairs = []
    for image in sorted(root.glob("*.ppm")):
        gt = image.with_name(image.stem + "_gt.pgm")
        if gt.exists():
            pairs.append((image, gt))
    if not pairs:
        raise FileNotFoundError(
            f"no (NAME.ppm, NAME_gt.pgm) pairs found under {data_dir}"
        )
    return pairs


def cmd_eval(cfg: RunConfig) -> int:
    g = load_graph(cfg.model)
    weights = load_weights(cfg.weights)
    pairs = _eval_pairs(cfg.data_dir)

    counts = []
    curves = []
    for image_path, gt_path in pairs:
        image01 = _load_image_01(str(image_path))
        x = _prepare_input(g, image01)
        prob = _predict_prob(g, weights, x, cfg.precision)
        gt_native = load_pgm(str(gt_path)) > 127
        gt = _resize_mask_nearest(gt_native, prob.shape[0], prob.shape[1])
        counts.append(confusion(prob > cfg.threshold, gt))
        curves.append(sweep(prob, gt))

    pooled = pool(counts)
    curve = pool_curves(curves)
    m = derive(pooled)
    summary = {
        "images": len(pairs),
        "threshold": cfg.threshold,
        "maxf": round(maxf(curve), 6),
        "ap": round(avg_precision(curve), 6),
        "precision": round(m.precision, 6),
        "recall": round(m.recall, 6),
        "fpr": round(m.fpr, 6),
        "fnr": round(m.fnr, 6),
        "iou": round(m.iou, 6),
    }
    if cfg.as_json:
        print(json.dumps(summary, indent=2))
        return EXIT_OK
    print(f"evaluated {len(pairs)} image/gt pairs at threshold {cfg.threshold}")
    header = f"{'MaxF':>8}{'AP':>8}{'PRE':>8}{'REC':>8}{'FPR':>8}{'FNR':>8}{'IOU':>8}"
    print(header)
    print(
        f"{summary['maxf']:>8.4f}{summary['ap']:>8.4f}{summary['precision']:>8.4f}"
        f"{summary['recall']:>8.4f}{summary['fpr']:>8.4f}{summary['fnr']:>8.4f}"
        f"{summary['iou']:>8.4f}"
    )
    return EXIT_OK


def cmd_estimate(cfg: RunConfig) -> int:
    g = load_graph(cfg.model)
    hw_kwargs = {}
    if cfg.clock_hz is not None:
        hw_kwargs["clock_hz"] = cfg.clock_hz
    if cfg.buffers is not None:
        hw_kwargs["buffer_count"] = cfg.buffers
    if cfg.bus_bytes is not None:
        hw_kwargs["bus_bytes_per_cycle"] = cfg.bus_bytes
    try:
        hw = HardwareConfig(**hw_kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    if cfg.weights:
        weights = load_weights(cfg.weights)
        weight_params = sum(
            weights.entry(n).data.size
            for n in weights.names()
            if weights.entry(n).data.dtype != np.float32
        ) or count_params(g)
    else:
        weight_params = count_params(g)
    bit_width = {"int8": 8, "int16": 16}[cfg.precision]
    report = estimate_cycles(
        g, tile_plan(g, hw), hw, bit_width=bit_width, weight_params=weight_params
    )
    if cfg.as_json:
        fps = report.fps
        print(
            json.dumps(
                {
                    "total_cycles": report.total_cycles,
                    "compute_cycles": report.compute_cycles,
                    "transfer_cycles": report.transfer_cycles,
                    "fps": float(fps),
                    "fps_exact": [fps.numerator, fps.denominator],
                    "gops": report.gops,
                    "macs_per_frame": report.macs,
                    "ddr_bytes": report.ddr_bytes,
                    "dsp": report.dsp,
                    "bram": report.bram,
                    "baseline_fps": BASELINE_FPS,
                    "layers": report.to_rows(),
                },
                indent=2,
            )
        )
        return EXIT_OK
    print(report.render())
    print(f"published baseline throughput: {BASELINE_FPS} fps")
    return EXIT_OK


def cmd_selftest(cfg: RunConfig) -> int:
    checks = run_selftest()
    failed = False
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        if not ok:
            failed = True
    if cfg.as_json:
        print(
            json.dumps(
                [{"check": n, "passed": ok, "detail": d} for n, ok, d in checks]
            )
        )
    return EXIT_SELFTEST if failed else EXIT_OK


_COMMANDS = {
    "init": cmd_init,
    "info": cmd_info,
    "transform": cmd_transform,
    "quantize": cmd_quantize,
    "run": cmd_run,
    "eval": cmd_eval,
    "estimate": cmd_estimate,
    "selftest": cmd_selftest,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        cfg = _config_from_args(args)
        return _COMMANDS[cfg.subcommand](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FormatError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (GraphError, DatapathError, QuantizeError, MissingWeightError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, KeyError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def entry() -> None:
    sys.exit(main())
