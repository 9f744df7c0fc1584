"""Estimate what the lowered network costs on the modeled accelerator.

The cost model walks the graph in execution order, tiles feature maps
into 35x120x32 on-chip buffers, and charges each layer the larger of its
compute cycles and its DDR transfer cycles (ping-pong buffering hides
the smaller one). Residency is the whole game: a map that stays on chip
for its sole next consumer costs no bus traffic at all.
"""
from fractions import Fraction

from roadnet_rt.graph import RoadNetConfig, build_roadnet_rt
from roadnet_rt.perf_model import HardwareConfig, estimate_cycles, tile_plan
from roadnet_rt.transforms import init_weights, standard_pipeline

g = build_roadnet_rt(RoadNetConfig())
lowered, _, _ = standard_pipeline(g, init_weights(g, seed=0), seed=0)

hw = HardwareConfig()
print(
    f"hardware: {hw.clock_hz/1e6:.0f} MHz, {hw.lane_width} lanes, "
    f"{hw.buffer_count} feature buffers, {hw.bus_bytes_per_cycle} B/cycle bus"
)

plan = tile_plan(lowered, hw)
resident = sum(1 for e in plan.entries if e.resident)
print(f"tile plan: {len(plan.entries)} layers, {resident} stay resident on chip")

report = estimate_cycles(lowered, plan, hw, bit_width=8)
print()
print(report.render())

fps = report.fps
assert fps * report.total_cycles == hw.clock_hz  # rational arithmetic, no rounding
print(f"\nexact frame rate: {fps.numerator}/{fps.denominator} = {float(fps):.2f} fps")
print("(the published full design reports 196.7 fps at this clock; this model")
print(" counts idealized pipeline cycles, so treat the number as a bound)")

print("\nsensitivity: fps as the bus narrows (compute stays fixed):")
for bus in (32, 16, 8, 4):
    custom = HardwareConfig(bus_bytes_per_cycle=bus)
    r = estimate_cycles(lowered, tile_plan(lowered, custom), custom, bit_width=8)
    bar = "#" * int(float(r.fps) / 4)
    print(f"  {bus:>3} B/cycle  {float(r.fps):>7.1f} fps  {bar}")

print("\nsensitivity: fps as on-chip buffers are added (spills disappear):")
for buffers in (3, 4, 6, 8, 12):
    custom = HardwareConfig(buffer_count=buffers)
    r = estimate_cycles(lowered, tile_plan(lowered, custom), custom, bit_width=8)
    bar = "#" * int(float(r.fps) / 4)
    print(f"  {buffers:>3} buffers  {float(r.fps):>7.1f} fps  {bar}")
