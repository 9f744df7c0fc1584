"""Analytic cost model for the 32-lane accelerator.

Prices a lowered graph against a fixed hardware shape: per-layer compute
cycles at one 32-channel group-pixel per cycle, DDR transfer cycles for
tiles that cannot stay in the on-chip ping-pong buffers, and DSP/BRAM
budgets. Every figure is an estimate of a steady-state pipeline, not a
simulation; the central assumptions are printed in the report header.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

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
from .transforms import conv_kernel_params, count_macs


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class HardwareConfig:
    """Accelerator shape; defaults mirror the reference 250 MHz build."""

    clock_hz: int = 250_000_000
    lane_width: int = 32
    dw_mults: int = 32 * 9
    pw_mults: int = 32 * 32
    buffer_count: int = 8
    buffer_dims: Dims = (35, 120, 32)
    bus_bytes_per_cycle: int = 16
    mults_per_dsp: tuple[tuple[int, int], ...] = ((8, 2), (16, 1))
    bram_bits_per_block: int = 36_864

    def __post_init__(self) -> None:
        scalars = (
            self.clock_hz,
            self.lane_width,
            self.dw_mults,
            self.pw_mults,
            self.buffer_count,
            self.bus_bytes_per_cycle,
            self.bram_bits_per_block,
        )
        if any(v <= 0 for v in scalars) or any(v <= 0 for v in self.buffer_dims):
            raise ValueError("hardware parameters must be positive")
        if self.buffer_dims[2] != self.lane_width:
            raise ValueError(
                f"buffer channel depth {self.buffer_dims[2]} must equal "
                f"lane width {self.lane_width}"
            )

    def dsp_packing(self, bit_width: int) -> int:
        for bw, packing in self.mults_per_dsp:
            if bw == bit_width:
                return packing
        raise ValueError(f"no DSP packing ratio for {bit_width}-bit")


def buffer_words(w: int, h: int, k: int, c: int) -> int:
    """On-chip words to hold a WxHxC map with the k-1 halo a KxK window needs."""
    if min(w, h, k, c) < 1:
        raise ValueError("buffer dimensions must be >= 1")
    return (w + k - 1) * (h + k - 1) * c


@dataclass(frozen=True)
class LayerTiles:
    """One layer's output map partitioned into buffer-sized tiles."""

    name: str
    dims: Dims
    tiles_y: int
    tiles_x: int
    tile_groups: int
    resident: bool

    @property
    def tiles(self) -> int:
        return self.tiles_y * self.tiles_x * self.tile_groups


@dataclass(frozen=True)
class TileSchedule:
    entries: tuple[LayerTiles, ...]
    dims: dict[str, Dims]
    order: tuple[str, ...]

    def entry(self, name: str) -> LayerTiles:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def resident(self, name: str) -> bool:
        for e in self.entries:
            if e.name == name:
                return e.resident
        return False  # graph inputs and unknown maps live in DDR


def _is_host_node(node: Node) -> bool:
    # resize runs on the ARM side; its operands cross DDR by definition
    return isinstance(node.op, BilinearResize)


def tile_plan(
    g: NetworkGraph,
    hw: HardwareConfig | None = None,
    input_dims: dict[str, Dims] | None = None,
) -> TileSchedule:
    """Partition every layer output into buffer tiles and mark residency.

    A map stays on chip only when its sole consumer is the very next layer
    in execution order and all its tiles fit in the ping-pong pool with two
    buffers spared for the consumer's own double buffering.
    """
    hw = hw or HardwareConfig()
    dims = infer_shapes(g, input_dims)
    order = topo_order(g)
    node_map = g.node_map
    tile_h, tile_w, _ = hw.buffer_dims
    capacity = buffer_words(tile_w, tile_h, 3, hw.lane_width)

    entries = []
    for i, name in enumerate(order):
        h, w, c = dims[name]
        ty = _ceil_div(h, tile_h)
        tx = _ceil_div(w, tile_w)
        tg = _ceil_div(c, hw.lane_width)
        need = buffer_words(min(w, tile_w), min(h, tile_h), 3, min(c, hw.lane_width))
        assert need <= capacity, f"{name}: tile exceeds a feature buffer"

        consumers = g.consumers(name)
        next_name = order[i + 1] if i + 1 < len(order) else None
        sole_next = consumers == [next_name] if next_name else False
        fits = ty * tx * tg <= hw.buffer_count - 2
        terminal = name in g.outputs
        host_edge = _is_host_node(node_map[name]) or (
            sole_next and _is_host_node(node_map[next_name])
        )
        resident = sole_next and fits and not terminal and not host_edge
        entries.append(LayerTiles(name, (h, w, c), ty, tx, tg, resident))
    return TileSchedule(tuple(entries), dims, tuple(order))


def _conv_compute_cycles(
    op: Conv2D, in_dims: Dims, out_dims: Dims, lanes: int
) -> int:
    """Group-pixels issued per output map at one per cycle."""
    oh, ow, oc = out_dims
    ic = in_dims[2]
    if op.mode == "depthwise":
        return oh * ow * _ceil_div(ic, lanes)
    if op.mode == "pointwise" or op.kernel == 1:
        return oh * ow * _ceil_div(ic, lanes) * _ceil_div(oc, lanes)
    # dense conv streams K*K*C_in-element patches through the matrix unit
    return oh * ow * _ceil_div(op.kernel * op.kernel * ic, lanes) * _ceil_div(oc, lanes)


def _node_compute_cycles(
    node: Node, in_dims: list[Dims], out_dims: Dims, lanes: int
) -> int:
    op = node.op
    if isinstance(op, Conv2D):
        return _conv_compute_cycles(op, in_dims[0], out_dims, lanes)
    if isinstance(op, GlobalAvgPool):
        h, w, c = in_dims[0]
        return h * w * _ceil_div(c, lanes)
    if isinstance(op, (BatchNorm, ReLU, Sigmoid, ElemMul, ElemAdd)):
        h, w, c = out_dims
        return h * w * _ceil_div(c, lanes)
    return 0  # Concat is buffer routing; BilinearResize runs host-side


def _fill_cycles(node: Node, tiles: LayerTiles, hw: HardwareConfig) -> int:
    """Line-buffer pipeline fill: (K-1) rows plus K taps before each tile."""
    op = node.op
    if not isinstance(op, Conv2D) or op.kernel <= 1:
        return 0
    k = op.kernel
    _, w, _ = tiles.dims
    tile_w = min(w, hw.buffer_dims[1])
    return ((k - 1) * tile_w + k) * tiles.tiles


@dataclass(frozen=True)
class LayerCost:
    name: str
    kind: str
    compute_cycles: int
    transfer_cycles: int
    ddr_bytes: int
    resident: bool

    @property
    def effective_cycles(self) -> int:
        # ping-pong double buffering overlaps compute with its own traffic
        return max(self.compute_cycles, self.transfer_cycles)


@dataclass(frozen=True)
class CostReport:
    layers: tuple[LayerCost, ...]
    macs: int
    clock_hz: int
    dsp: int
    bram: int
    bit_width: int
    assumptions: tuple[str, ...] = field(default_factory=tuple)

    @property
    def compute_cycles(self) -> int:
        return sum(l.compute_cycles for l in self.layers)

    @property
    def transfer_cycles(self) -> int:
        return sum(l.transfer_cycles for l in self.layers)

    @property
    def total_cycles(self) -> int:
        return sum(l.effective_cycles for l in self.layers)

    @property
    def ddr_bytes(self) -> int:
        return sum(l.ddr_bytes for l in self.layers)

    @property
    def fps(self) -> Fraction:
        return Fraction(self.clock_hz, self.total_cycles)

    @property
    def gops(self) -> float:
        return float(2 * self.macs * self.fps) / 1e9

    def to_rows(self) -> list[dict]:
        return [
            {
                "layer": l.name,
                "kind": l.kind,
                "compute_cycles": l.compute_cycles,
                "transfer_cycles": l.transfer_cycles,
                "effective_cycles": l.effective_cycles,
                "ddr_bytes": l.ddr_bytes,
                "resident": l.resident,
            }
            for l in self.layers
        ]

    def render(self) -> str:
        lines = ["accelerator cost estimate"]
        lines += [f"  assumption: {a}" for a in self.assumptions]
        header = f"{'layer':<24}{'kind':<12}{'compute':>10}{'transfer':>10}{'effective':>10}  res"
        lines += [header, "-" * len(header)]
        for l in self.layers:
            lines.append(
                f"{l.name:<24}{l.kind:<12}{l.compute_cycles:>10}"
                f"{l.transfer_cycles:>10}{l.effective_cycles:>10}  {'y' if l.resident else '-'}"
            )
        lines.append("-" * len(header))
        fps = self.fps
        lines += [
            f"total cycles {self.total_cycles} (compute {self.compute_cycles}, "
            f"transfer {self.transfer_cycles})",
            f"DDR traffic {self.ddr_bytes} bytes",
            f"fps {float(fps):.1f} ({fps.numerator}/{fps.denominator} exact) "
            f"at {self.clock_hz / 1e6:.0f} MHz",
            f"GOPS {self.gops:.1f} ({self.macs} MACs/frame, 2 ops per MAC)",
            f"DSP {self.dsp}  BRAM {self.bram} ({self.bit_width}-bit datapath)",
        ]
        return "\n".join(lines)


_ASSUMPTIONS = (
    "fully pipelined engines issue one 32-channel group-pixel per cycle",
    "feature maps spill to DDR unless the sole consumer is the next layer",
    "resize layers run host-side: zero device cycles, operands cross DDR",
    "weights are preloaded on chip; DDR traffic counts activations only",
)


def _kind(node: Node) -> str:
    op = node.op
    if isinstance(op, Conv2D):
        return op.mode if op.kernel > 1 or op.mode != "standard" else "pointwise"
    return type(op).__name__.lower()


def estimate_cycles(
    g: NetworkGraph,
    plan: TileSchedule | None = None,
    hw: HardwareConfig | None = None,
    bit_width: int = 8,
    weight_params: int | None = None,
) -> CostReport:
    """Per-layer cycle and DDR cost under ping-pong double buffering."""
    hw = hw or HardwareConfig()
    plan = plan or tile_plan(g, hw)
    dims = plan.dims
    node_map = g.node_map
    bytes_per_word = max(1, bit_width // 8)

    def map_bytes(name: str) -> int:
        h, w, c = dims[name]
        return h * w * c * bytes_per_word

    layers = []
    for name in plan.order:
        node = node_map[name]
        tiles = plan.entry(name)
        in_dims = [dims[r] for r in node.inputs]
        compute = _node_compute_cycles(node, in_dims, dims[name], hw.lane_width)
        compute += _fill_cycles(node, tiles, hw)

        ddr = 0
        if not _is_host_node(node):
            for ref in node.inputs:
                if not plan.resident(ref):
                    ddr += map_bytes(ref)
            if not tiles.resident:
                ddr += map_bytes(name)
        transfer = _ceil_div(ddr, hw.bus_bytes_per_cycle)
        layers.append(
            LayerCost(name, _kind(node), compute, transfer, ddr, tiles.resident)
        )

    macs = count_macs(g, {port: plan.dims[port] for port in g.inputs})
    dsp, bram = resource_estimate(hw, bit_width, weight_params or 0)
    return CostReport(
        layers=tuple(layers),
        macs=macs,
        clock_hz=hw.clock_hz,
        dsp=dsp,
        bram=bram,
        bit_width=bit_width,
        assumptions=_ASSUMPTIONS,
    )


def resource_estimate(
    hw: HardwareConfig,
    bit_width: int,
    weight_params: int = 0,
    dsp_overhead: int = 0,
) -> tuple[int, int]:
    """DSP and BRAM block budget for the datapath plus stored weights."""
    packing = hw.dsp_packing(bit_width)
    dsp = _ceil_div(hw.dw_mults + hw.pw_mults, packing) + dsp_overhead
    th, tw, _ = hw.buffer_dims
    feature_bits = hw.buffer_count * buffer_words(tw, th, 3, hw.lane_width) * bit_width
    weight_bits = weight_params * bit_width
    bram = _ceil_div(feature_bits, hw.bram_bits_per_block) + _ceil_div(
        weight_bits, hw.bram_bits_per_block
    )
    return dsp, bram
