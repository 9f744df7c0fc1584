"""Feature-map tensors and symmetric power-of-two fixed-point quantization.

Real value of a stored integer is always ``stored * 2**scale_exp`` with a zero
zero-point, so rescaling between layers reduces to integer shifts. Rounding is
round-half-away-from-zero everywhere; out-of-range results saturate to the
signed range of the target bit width.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCALE_EXP_MIN = -24
SCALE_EXP_MAX = 8
INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1


def round_half_away(x: np.ndarray | float) -> np.ndarray:
    """Round to the nearest integer with ties away from zero.

    Computed in float64; exact for every integer-valued or half-valued input
    the fixed-point paths produce.
    """
    x = np.asarray(x, dtype=np.float64)
    return np.trunc(x + np.copysign(0.5, x))


@dataclass(frozen=True)
class QuantSpec:
    """Symmetric fixed-point format: bit width plus power-of-two scale."""

    bit_width: int
    scale_exp: int

    def __post_init__(self) -> None:
        if self.bit_width not in (8, 16):
            raise ValueError(f"bit_width must be 8 or 16, got {self.bit_width}")
        if not SCALE_EXP_MIN <= self.scale_exp <= SCALE_EXP_MAX:
            raise ValueError(
                f"scale_exp {self.scale_exp} outside [{SCALE_EXP_MIN}, {SCALE_EXP_MAX}]"
            )

    @property
    def int_min(self) -> int:
        return -(1 << (self.bit_width - 1))

    @property
    def int_max(self) -> int:
        return (1 << (self.bit_width - 1)) - 1

    @property
    def step(self) -> float:
        return 2.0 ** self.scale_exp


@dataclass(frozen=True)
class Tensor:
    """H x W x C float32 feature map; data is read-only after construction."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ValueError(f"feature map must be rank 3, got rank {arr.ndim}")
        if min(arr.shape) < 1:
            raise ValueError(f"all dimensions must be >= 1, got {arr.shape}")
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        else:
            arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class QTensor:
    """Quantized H x W x C map: integer storage plus its QuantSpec."""

    data: np.ndarray
    spec: QuantSpec

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ValueError(f"quantized map must be rank 3, got rank {arr.ndim}")
        if min(arr.shape) < 1:
            raise ValueError(f"all dimensions must be >= 1, got {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError(f"quantized data must be integer, got {arr.dtype}")
        lo = int(arr.min()) if arr.size else 0
        hi = int(arr.max()) if arr.size else 0
        if lo < self.spec.int_min or hi > self.spec.int_max:
            raise ValueError(
                f"values [{lo}, {hi}] exceed {self.spec.bit_width}-bit range"
            )
        arr = arr.astype(np.int32, copy=True)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]


def _abs_max(values: np.ndarray) -> float:
    values = np.asarray(values)
    if not np.all(np.isfinite(values)):
        raise ValueError("calibration data contains non-finite values")
    if values.size == 0:
        return 0.0
    return float(np.max(np.abs(values)))


def calibrate(t: Tensor | np.ndarray, bit_width: int) -> QuantSpec:
    """Pick the finest scale under which no calibration element saturates.

    Scans scale_exp upward from the bottom of the legal range and returns the
    first (smallest) exponent e with max|t| <= (2**(bw-1)-1) * 2**e. All-zero
    input maps to scale_exp 0. Raises ValueError when the data is non-finite
    or too large for even the coarsest legal exponent.
    """
    if bit_width not in (8, 16):
        raise ValueError(f"bit_width must be 8 or 16, got {bit_width}")
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    m = _abs_max(data)
    if m == 0.0:
        return QuantSpec(bit_width, 0)
    limit = (1 << (bit_width - 1)) - 1
    for e in range(SCALE_EXP_MIN, SCALE_EXP_MAX + 1):
        if m <= limit * 2.0 ** e:
            return QuantSpec(bit_width, e)
    raise ValueError(
        f"max |value| {m} not representable at bit width {bit_width} "
        f"with scale_exp <= {SCALE_EXP_MAX}"
    )


def quantize_array(values: np.ndarray, spec: QuantSpec) -> np.ndarray:
    """Round values to the grid of ``spec`` and saturate; returns int32."""
    values = np.asarray(values, dtype=np.float64)
    q = round_half_away(values / spec.step)
    return np.clip(q, spec.int_min, spec.int_max).astype(np.int32)


def dequantize_array(stored: np.ndarray, spec: QuantSpec) -> np.ndarray:
    """Exact real values of stored integers, as float32."""
    return (np.asarray(stored, dtype=np.float64) * spec.step).astype(np.float32)


def quantize(t: Tensor, spec: QuantSpec) -> QTensor:
    return QTensor(quantize_array(t.data, spec), spec)


def dequantize(q: QTensor) -> Tensor:
    return Tensor(dequantize_array(q.data, q.spec))


def saturate(values: np.ndarray, spec: QuantSpec) -> np.ndarray:
    """Clamp integers to the signed range of the spec's bit width."""
    return np.clip(np.asarray(values), spec.int_min, spec.int_max).astype(np.int32)


def check_accumulator(acc: np.ndarray, context: str = "accumulator") -> None:
    """Assert 32-bit accumulator headroom was never exceeded."""
    acc = np.asarray(acc)
    if acc.size == 0:
        return
    lo, hi = int(acc.min()), int(acc.max())
    if lo < INT32_MIN or hi > INT32_MAX:
        raise AssertionError(
            f"{context} overflowed INT32: range [{lo}, {hi}]"
        )


def shift_round(acc: np.ndarray, shift: int) -> np.ndarray:
    """Divide by 2**shift with round-half-away-from-zero, in pure integers."""
    if shift < 0:
        raise ValueError(f"shift must be >= 0, got {shift}")
    acc = np.asarray(acc, dtype=np.int64)
    if shift == 0:
        return acc
    half = np.int64(1) << np.int64(shift - 1)
    mag = (np.abs(acc) + half) >> np.int64(shift)
    return np.where(acc < 0, -mag, mag)


def requantize(
    acc: np.ndarray,
    in_spec: QuantSpec,
    w_spec: QuantSpec,
    out_spec: QuantSpec,
) -> QTensor:
    """Rescale an INT32 accumulator map (scale 2**(in+w)) to ``out_spec``.

    The composite scale change is a pure right shift of
    out_spec.scale_exp - in_spec.scale_exp - w_spec.scale_exp bits; negative
    shifts are a graph-validation failure, not a runtime path.
    """
    shift = out_spec.scale_exp - in_spec.scale_exp - w_spec.scale_exp
    if shift < 0:
        raise ValueError(
            f"requantize shift {shift} is negative "
            f"(out {out_spec.scale_exp} < in {in_spec.scale_exp} + w {w_spec.scale_exp})"
        )
    acc = np.asarray(acc)
    if acc.ndim != 3:
        raise ValueError(f"accumulator map must be rank 3, got rank {acc.ndim}")
    check_accumulator(acc, "requantize input")
    return QTensor(saturate(shift_round(acc, shift), out_spec), out_spec)
