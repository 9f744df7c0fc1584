"""On-disk formats: weight container, PNM images, overlays, graph documents.

Weight container layout (all integers little-endian):

    magic  "RNRT" | version u32 | tensor_count u32
    per tensor:
        name_len u16 | name UTF-8 | dtype u8 (0=f32, 1=i8, 2=i16) |
        scale_exp i8 | ndim u8 | dims u32 * ndim | payload (row-major LE)

An empty container is exactly the 12-byte header. Loaders never trust a
length field without checking it against the remaining bytes, so truncated
or bit-flipped files fail with a clean error instead of crashing.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

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
)
from .tensor import QuantSpec

MAGIC = b"RNRT"
CONTAINER_VERSION = 1

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.int8): 1, np.dtype(np.int16): 2}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("i1"), 2: np.dtype("<i2")}


class FormatError(ValueError):
    """Base class for malformed on-disk artifacts."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class DuplicateNameError(FormatError):
    pass


class ImageFormatError(FormatError):
    pass


class GraphFormatError(FormatError):
    pass


# ---------------------------------------------------------------------------
# weight container
# ---------------------------------------------------------------------------


@dataclass
class WeightEntry:
    data: np.ndarray
    scale_exp: int = 0


class WeightContainer:
    """Ordered name -> tensor store; behaves as a read mapping of arrays."""

    def __init__(self) -> None:
        self._entries: dict[str, WeightEntry] = {}

    def add(self, name: str, data: np.ndarray, scale_exp: int = 0) -> None:
        if name in self._entries:
            raise DuplicateNameError(f"tensor {name!r} already present")
        if not name:
            raise FormatError("tensor names must be non-empty")
        arr = np.asarray(data)
        if arr.dtype not in _DTYPE_CODES:
            if np.issubdtype(arr.dtype, np.floating):
                arr = arr.astype(np.float32)
            else:
                raise FormatError(
                    f"tensor {name!r}: dtype {arr.dtype} not storable "
                    "(use float32, int8 or int16)"
                )
        if not -128 <= scale_exp <= 127:
            raise FormatError(f"tensor {name!r}: scale_exp {scale_exp} not an i8")
        self._entries[name] = WeightEntry(np.ascontiguousarray(arr), int(scale_exp))

    def entry(self, name: str) -> WeightEntry:
        return self._entries[name]

    def remove(self, name: str) -> None:
        del self._entries[name]

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name].data

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def to_bytes(self) -> bytes:
        out = bytearray()
        out += MAGIC
        out += struct.pack("<II", CONTAINER_VERSION, len(self._entries))
        for name, entry in self._entries.items():
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise FormatError(f"tensor name too long ({len(encoded)} bytes)")
            arr = entry.data
            code = _DTYPE_CODES[arr.dtype]
            out += struct.pack("<H", len(encoded))
            out += encoded
            out += struct.pack("<Bb B", code, entry.scale_exp, arr.ndim)
            out += struct.pack(f"<{arr.ndim}I", *arr.shape)
            out += arr.astype(_CODE_DTYPES[code], copy=False).tobytes()
        return bytes(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "WeightContainer":
        off = 0

        def take(n: int, what: str) -> bytes:
            nonlocal off
            if off + n > len(blob):
                raise TruncatedError(
                    f"file ends inside {what} (need {n} bytes at offset {off})"
                )
            piece = blob[off : off + n]
            off += n
            return piece

        if take(4, "magic") != MAGIC:
            raise BadMagicError("not a weight container (bad magic)")
        version, count = struct.unpack("<II", take(8, "header"))
        if version != CONTAINER_VERSION:
            raise UnsupportedVersionError(f"container version {version} not supported")
        container = cls()
        for i in range(count):
            (name_len,) = struct.unpack("<H", take(2, f"tensor {i} name length"))
            raw_name = take(name_len, f"tensor {i} name")
            try:
                name = raw_name.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise FormatError(f"tensor {i} name is not UTF-8") from exc
            if not name:
                raise FormatError(f"tensor {i} has an empty name")
            code, scale_exp, ndim = struct.unpack(
                "<Bb B", take(3, f"tensor {name!r} descriptor")
            )
            if code not in _CODE_DTYPES:
                raise FormatError(f"tensor {name!r}: unknown dtype code {code}")
            dims = struct.unpack(f"<{ndim}I", take(4 * ndim, f"tensor {name!r} dims"))
            elems = 1
            for d in dims:
                elems *= d
            dtype = _CODE_DTYPES[code]
            payload = take(elems * dtype.itemsize, f"tensor {name!r} payload")
            arr = np.frombuffer(payload, dtype=dtype, count=elems).reshape(dims)
            if name in container:
                raise DuplicateNameError(f"tensor {name!r} appears twice")
            container.add(name, arr.copy(), scale_exp)
        if off != len(blob):
            raise FormatError(f"{len(blob) - off} trailing bytes after last tensor")
        return container


def save_weights(container: WeightContainer, path: str | Path) -> None:
    Path(path).write_bytes(container.to_bytes())


def load_weights(path: str | Path) -> WeightContainer:
    return WeightContainer.from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# PNM images
# ---------------------------------------------------------------------------


def _parse_pnm(blob: bytes, expect_magic: bytes, channels: int) -> np.ndarray:
    if len(blob) < 2:
        raise TruncatedError("file shorter than a PNM magic")
    if blob[:2] != expect_magic:
        raise ImageFormatError(
            f"expected {expect_magic.decode()} image, got {blob[:2]!r}"
        )
    off = 2
    fields: list[int] = []
    while len(fields) < 3:
        if off >= len(blob):
            raise TruncatedError("file ends inside the PNM header")
        ch = blob[off : off + 1]
        if ch == b"#":
            while off < len(blob) and blob[off : off + 1] not in (b"\n", b"\r"):
                off += 1
        elif ch.isspace():
            off += 1
        elif ch.isdigit():
            start = off
            while off < len(blob) and blob[off : off + 1].isdigit():
                off += 1
            fields.append(int(blob[start:off]))
        else:
            raise ImageFormatError(f"unexpected byte {ch!r} in PNM header")
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ImageFormatError(f"bad image dims {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"only maxval 255 supported, got {maxval}")
    if off >= len(blob) or not blob[off : off + 1].isspace():
        raise ImageFormatError("missing single whitespace after maxval")
    off += 1
    need = width * height * channels
    if len(blob) - off < need:
        raise TruncatedError(
            f"pixel payload short: need {need} bytes, have {len(blob) - off}"
        )
    if len(blob) - off > need:
        raise ImageFormatError(f"{len(blob) - off - need} trailing bytes after pixels")
    arr = np.frombuffer(blob, dtype=np.uint8, count=need, offset=off)
    if channels == 1:
        return arr.reshape(height, width).copy()
    return arr.reshape(height, width, channels).copy()


def load_ppm(path: str | Path) -> np.ndarray:
    """Binary P6 image as H x W x 3 uint8."""
    return _parse_pnm(Path(path).read_bytes(), b"P6", 3)


def load_pgm(path: str | Path) -> np.ndarray:
    """Binary P5 image as H x W uint8."""
    return _parse_pnm(Path(path).read_bytes(), b"P5", 1)


def _pnm_bytes(magic: bytes, arr: np.ndarray) -> bytes:
    h, w = arr.shape[:2]
    header = magic + f"\n{w} {h}\n255\n".encode()
    return header + arr.astype(np.uint8).tobytes()


def save_ppm(path: str | Path, image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"PPM wants H x W x 3, got {image.shape}")
    Path(path).write_bytes(_pnm_bytes(b"P6", image))


def save_pgm(path: str | Path, image: np.ndarray) -> None:
    if image.ndim != 2:
        raise ValueError(f"PGM wants H x W, got {image.shape}")
    Path(path).write_bytes(_pnm_bytes(b"P5", image))


def overlay_image(
    image: np.ndarray, pred: np.ndarray, gt: np.ndarray | None = None
) -> np.ndarray:
    """Color-coded segmentation overlay.

    With ground truth: green where prediction and truth agree on road, red for
    missed road (truth only), blue for false alarms (prediction only), original
    pixel elsewhere. Without ground truth: predicted pixels blend 50% toward
    pure green (integer floor), everything else passes through.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"overlay wants an H x W x 3 image, got {image.shape}")
    pred = pred.astype(bool)
    if pred.shape != image.shape[:2]:
        raise ValueError(f"mask {pred.shape} does not cover image {image.shape[:2]}")
    out = image.astype(np.uint8).copy()
    if gt is None:
        green = np.array([0, 255, 0], dtype=np.uint16)
        blended = ((out.astype(np.uint16) + green) // 2).astype(np.uint8)
        out[pred] = blended[pred]
        return out
    gt = gt.astype(bool)
    if gt.shape != pred.shape:
        raise ValueError(f"gt {gt.shape} does not match mask {pred.shape}")
    out[pred & gt] = (0, 255, 0)
    out[gt & ~pred] = (255, 0, 0)
    out[pred & ~gt] = (0, 0, 255)
    return out


# ---------------------------------------------------------------------------
# graph documents
# ---------------------------------------------------------------------------

GRAPH_FORMAT = "rnrt-graph"
GRAPH_VERSION = 1

_KIND_NAMES = {
    Conv2D: "Conv2D",
    BatchNorm: "BatchNorm",
    ReLU: "ReLU",
    Sigmoid: "Sigmoid",
    GlobalAvgPool: "GlobalAvgPool",
    BilinearResize: "BilinearResize",
    ElemAdd: "ElemAdd",
    ElemMul: "ElemMul",
    Concat: "Concat",
}
_NAME_KINDS = {v: k for k, v in _KIND_NAMES.items()}


def _quant_pair(spec: QuantSpec | None):
    return None if spec is None else [spec.bit_width, spec.scale_exp]


def graph_to_doc(g: NetworkGraph) -> dict:
    quant = g.quant or {}
    doc: dict = {
        "format": GRAPH_FORMAT,
        "version": GRAPH_VERSION,
        "inputs": [
            {
                "name": port,
                "dims": list(dims),
                **({"quant": _quant_pair(quant[port])} if port in quant else {}),
            }
            for port, dims in g.inputs.items()
        ],
        "outputs": list(g.outputs),
        "nodes": [],
    }
    for node in g.nodes:
        entry: dict = {
            "name": node.name,
            "kind": _KIND_NAMES[type(node.op)],
            "inputs": list(node.inputs),
        }
        if isinstance(node.op, Conv2D):
            entry["kernel"] = node.op.kernel
            if node.op.out_channels is not None:
                entry["out_channels"] = node.op.out_channels
            entry["stride"] = node.op.stride
            entry["dilation"] = node.op.dilation
            entry["mode"] = node.op.mode
            entry["has_bias"] = node.op.bias
        elif isinstance(node.op, BilinearResize):
            entry["scale"] = node.op.scale
        if node.name in quant:
            entry["quant"] = _quant_pair(quant[node.name])
        doc["nodes"].append(entry)
    return doc


def doc_to_graph(doc: dict) -> NetworkGraph:
    if not isinstance(doc, dict):
        raise GraphFormatError("graph document is not an object")
    if doc.get("format") != GRAPH_FORMAT:
        raise GraphFormatError(f"not a graph document (format {doc.get('format')!r})")
    if doc.get("version") != GRAPH_VERSION:
        raise GraphFormatError(f"graph document version {doc.get('version')!r}")
    quant: dict[str, QuantSpec] = {}

    def read_quant(owner: str, entry: dict) -> None:
        pair = entry.get("quant")
        if pair is None:
            return
        try:
            quant[owner] = QuantSpec(int(pair[0]), int(pair[1]))
        except (TypeError, ValueError, IndexError) as exc:
            raise GraphFormatError(f"{owner!r}: bad quant entry {pair!r}") from exc

    try:
        inputs = {}
        for port in doc["inputs"]:
            dims = tuple(int(d) for d in port["dims"])
            inputs[str(port["name"])] = dims
            read_quant(str(port["name"]), port)
        nodes = []
        for entry in doc["nodes"]:
            name = str(entry["name"])
            kind = entry.get("kind")
            if kind not in _NAME_KINDS:
                raise GraphFormatError(f"node {name!r}: unknown kind {kind!r}")
            if kind == "Conv2D":
                op = Conv2D(
                    kernel=int(entry["kernel"]),
                    out_channels=(
                        int(entry["out_channels"]) if "out_channels" in entry else None
                    ),
                    stride=int(entry.get("stride", 1)),
                    dilation=int(entry.get("dilation", 1)),
                    mode=str(entry.get("mode", "standard")),
                    bias=bool(entry.get("has_bias", False)),
                )
            elif kind == "BilinearResize":
                op = BilinearResize(float(entry["scale"]))
            else:
                op = _NAME_KINDS[kind]()
            nodes.append(Node(name, op, tuple(str(i) for i in entry["inputs"])))
            read_quant(name, entry)
        outputs = tuple(str(o) for o in doc["outputs"])
        g = NetworkGraph(inputs=inputs, nodes=tuple(nodes), outputs=outputs)
    except GraphFormatError:
        raise
    except (KeyError, TypeError, ValueError, GraphError) as exc:
        raise GraphFormatError(f"malformed graph document: {exc}") from exc
    return g.with_quant(quant) if quant else g


def save_graph(g: NetworkGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(graph_to_doc(g), indent=2) + "\n")


def load_graph(path: str | Path) -> NetworkGraph:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"graph document is not valid JSON: {exc}") from exc
    return doc_to_graph(doc)


def container_summary(container: WeightContainer) -> list[dict]:
    """Per-tensor manifest rows (used by the CLI and cross-tool checks)."""
    rows = []
    for name in container.names():
        entry = container.entry(name)
        arr = entry.data
        rows.append(
            {
                "name": name,
                "dtype": str(arr.dtype),
                "dims": list(arr.shape),
                "scale_exp": entry.scale_exp,
                "elements": int(arr.size),
                "min": float(arr.min()) if arr.size else 0.0,
                "max": float(arr.max()) if arr.size else 0.0,
                "sum": float(np.float64(arr.sum(dtype=np.float64))),
            }
        )
    return rows
