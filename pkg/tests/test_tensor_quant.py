"""Fixed-point core: worked examples frozen first, then properties."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roadnet_rt.tensor import (
    QTensor,
    QuantSpec,
    Tensor,
    calibrate,
    dequantize,
    dequantize_array,
    quantize,
    quantize_array,
    requantize,
    round_half_away,
    saturate,
    shift_round,
)


def fmap(values):
    arr = np.asarray(values, dtype=np.float32)
    return Tensor(arr.reshape(1, 1, -1) if arr.ndim == 1 else arr)


# --- frozen worked examples -------------------------------------------------

def test_calibrate_half_max_8bit():
    # max|t| = 0.5: e=-7 gives 0.5*128 = 64 <= 127, e=-8 gives 128 > 127
    spec = calibrate(fmap([0.5, -0.25, 0.1]), 8)
    assert spec.scale_exp == -7
    assert spec.bit_width == 8


def test_calibrate_at_limit_8bit():
    assert calibrate(fmap([127.0]), 8).scale_exp == 0
    assert calibrate(fmap([127.5]), 8).scale_exp == 1


def test_calibrate_half_max_16bit():
    # limit 32767: e=-16 gives 32768 > 32767, e=-15 gives 16384
    assert calibrate(fmap([0.5]), 16).scale_exp == -15


def test_calibrate_all_zero_defaults_to_exp_zero():
    assert calibrate(fmap([0.0, 0.0]), 8).scale_exp == 0


def test_calibrate_rejects_non_finite():
    with pytest.raises(ValueError):
        calibrate(fmap([np.inf]), 8)
    with pytest.raises(ValueError):
        calibrate(fmap([np.nan]), 8)


def test_calibrate_rejects_out_of_range_magnitude():
    with pytest.raises(ValueError):
        calibrate(fmap([1e12]), 8)


def test_quantize_round_half_away():
    # -0.046875 / 2**-5 = -1.5 -> -2 (ties away from zero)
    q = quantize(fmap([-0.046875]), QuantSpec(8, -5))
    assert q.data.flatten().tolist() == [-2]


def test_quantize_saturates():
    q = quantize(fmap([200.0, -200.0]), QuantSpec(8, 0))
    assert q.data.flatten().tolist() == [127, -128]


def test_requantize_worked_example():
    # shift = -10 - (-7) - (-8) = 5; 48 -> round(48/32) = round(1.5) = 2
    acc = np.full((1, 1, 1), 48, dtype=np.int64)
    out = requantize(acc, QuantSpec(8, -7), QuantSpec(8, -8), QuantSpec(8, -10))
    assert out.data.flatten().tolist() == [2]
    assert out.spec.scale_exp == -10


def test_requantize_negative_values():
    acc = np.array([-48, -640, 640]).reshape(1, 1, 3).astype(np.int64)
    out = requantize(acc, QuantSpec(8, -7), QuantSpec(8, -8), QuantSpec(8, -10))
    # -48/32 = -1.5 -> -2; 640/32 = 20 exactly
    assert out.data.flatten().tolist() == [-2, -20, 20]


def test_requantize_rejects_negative_shift():
    acc = np.zeros((1, 1, 1), dtype=np.int64)
    with pytest.raises(ValueError):
        requantize(acc, QuantSpec(8, 0), QuantSpec(8, 0), QuantSpec(8, -1))


def test_requantize_zero_shift_is_identity_plus_saturation():
    acc = np.array([300, -300, 5]).reshape(1, 1, 3).astype(np.int64)
    out = requantize(acc, QuantSpec(8, -4), QuantSpec(8, -4), QuantSpec(8, -8))
    assert out.data.flatten().tolist() == [127, -128, 5]


def test_round_half_away_scalars():
    cases = {0.5: 1, -0.5: -1, 1.5: 2, -1.5: -2, 2.5: 3, 0.49: 0, -0.49: 0}
    for x, want in cases.items():
        assert round_half_away(x) == want


def test_spec_validation():
    with pytest.raises(ValueError):
        QuantSpec(12, 0)
    with pytest.raises(ValueError):
        QuantSpec(8, -25)
    with pytest.raises(ValueError):
        QuantSpec(8, 9)
    assert QuantSpec(8, -7).int_min == -128
    assert QuantSpec(16, 0).int_max == 32767


def test_tensor_validation():
    with pytest.raises(ValueError):
        Tensor(np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(ValueError):
        Tensor(np.zeros((0, 2, 2), dtype=np.float32))
    t = Tensor(np.zeros((2, 3, 4), dtype=np.float32))
    assert (t.height, t.width, t.channels) == (2, 3, 4)
    with pytest.raises(ValueError):
        t.data[0, 0, 0] = 1.0


def test_qtensor_range_check():
    with pytest.raises(ValueError):
        QTensor(np.full((1, 1, 1), 128, dtype=np.int32), QuantSpec(8, 0))
    q = QTensor(np.full((1, 1, 1), 128, dtype=np.int32), QuantSpec(16, 0))
    assert q.data[0, 0, 0] == 128


# --- properties ---------------------------------------------------------------

finite_vals = st.floats(
    min_value=-1000.0, max_value=1000.0, allow_nan=False, allow_infinity=False, width=32
)


@settings(max_examples=200, deadline=None)
@given(st.lists(finite_vals, min_size=1, max_size=32), st.sampled_from([8, 16]))
def test_calibrate_never_saturates(values, bit_width):
    t = fmap(values)
    spec = calibrate(t, bit_width)
    q = quantize_array(t.data, spec)
    m = float(np.max(np.abs(t.data)))
    assert m <= spec.int_max * spec.step
    # rounding at the limit keeps every element strictly inside the range
    assert int(np.max(np.abs(q))) <= spec.int_max


@settings(max_examples=200, deadline=None)
@given(st.lists(finite_vals, min_size=1, max_size=32), st.sampled_from([8, 16]))
def test_round_trip_error_bound(values, bit_width):
    t = fmap(values)
    spec = calibrate(t, bit_width)
    err = np.abs(dequantize(quantize(t, spec)).data - t.data)
    assert float(err.max()) <= 2.0 ** (spec.scale_exp - 1) + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-128, 127), min_size=1, max_size=64))
def test_saturation_idempotent(stored):
    spec = QuantSpec(8, -3)
    q = QTensor(np.asarray(stored, dtype=np.int32).reshape(1, 1, -1), spec)
    again = quantize(dequantize(q), spec)
    assert np.array_equal(again.data, q.data)


@settings(max_examples=200, deadline=None)
@given(finite_vals, finite_vals)
def test_quantize_monotone(a, b):
    spec = QuantSpec(8, -4)
    lo, hi = sorted([a, b])
    qa = quantize_array(np.array([lo], dtype=np.float32), spec)
    qb = quantize_array(np.array([hi], dtype=np.float32), spec)
    assert qa[0] <= qb[0]


@settings(max_examples=200, deadline=None)
@given(st.integers(-(2**31) + 1, 2**31 - 1), st.integers(0, 20))
def test_shift_round_matches_divmod_route(acc, shift):
    got = int(shift_round(np.array([acc]), shift)[0])
    den = 1 << shift
    mag = (abs(acc) + den // 2) // den
    want = -mag if acc < 0 else mag
    assert got == want


def test_dequantize_exact_for_int16_extremes():
    spec = QuantSpec(16, 8)
    vals = dequantize_array(np.array([32767, -32768]), spec)
    assert vals.tolist() == [32767 * 256.0, -32768 * 256.0]


def test_saturate_helper():
    spec = QuantSpec(8, 0)
    out = saturate(np.array([1000, -1000, 7]), spec)
    assert out.tolist() == [127, -128, 7]
