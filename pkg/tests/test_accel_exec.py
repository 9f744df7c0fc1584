"""Integer datapath tests: engine/oracle bit-exactness, LUT bounds, streaming."""
import numpy as np
import pytest

from roadnet_rt.accel_exec import (
    LANES,
    SIGMOID_IN_SPEC,
    SIGMOID_OUT_SPEC,
    DatapathError,
    LineBuffer,
    apply_sigmoid,
    bias_to_acc,
    build_sigmoid_lut,
    conv3_via_patches,
    dw_conv,
    host_upsample,
    integer_concat,
    integer_elem_add,
    integer_elem_mul,
    integer_gap,
    integer_half_resize,
    integer_relu,
    pw_conv,
    run_quantized,
    sigmoid_lut_lookup,
    stream_patches,
    validate_datapath,
)
from roadnet_rt.graph import (
    BatchNorm,
    BilinearResize,
    Conv2D,
    ElemMul,
    NetworkGraph,
    Node,
    ReLU,
    Sigmoid,
)
from roadnet_rt.model_io import WeightContainer
from roadnet_rt.oracles import naive_patch, quantized_conv_oracle, sigmoid_exact
from roadnet_rt.tensor import QTensor, QuantSpec, round_half_away, shift_round


def rand_q(rng, shape, spec) -> QTensor:
    vals = rng.integers(spec.int_min, spec.int_max + 1, size=shape)
    return QTensor(vals.astype(np.int32), spec)


# ---------------------------------------------------------------------------
# sigmoid table
# ---------------------------------------------------------------------------


class TestSigmoidLUT:
    def test_zero_maps_to_128(self):
        lut = build_sigmoid_lut()
        assert lut[128] == 128
        assert sigmoid_lut_lookup(np.array([0]), SIGMOID_IN_SPEC)[0] == 128

    def test_entry_bounds_and_monotone(self):
        lut = build_sigmoid_lut()
        assert lut.min() >= 0 and lut.max() == 255
        assert np.all(np.diff(lut) >= 0)

    def test_error_at_samples_and_centers(self):
        lut = build_sigmoid_lut().astype(np.float64) / 256.0
        edges = -8.0 + np.arange(256) / 16.0
        centers = edges + 1.0 / 32.0
        assert np.abs(lut - sigmoid_exact(edges)).max() <= 2.0**-6
        assert np.abs(lut - sigmoid_exact(centers)).max() <= 2.0**-6

    def test_error_over_fine_grid(self):
        lut = build_sigmoid_lut().astype(np.float64) / 256.0
        xs = -8.0 + np.arange(256 * 8) / 128.0  # 8 probes per cell
        idx = np.floor((xs + 8.0) * 16.0).astype(int)
        assert np.abs(lut[idx] - sigmoid_exact(xs)).max() <= 2.0**-6

    def test_clamping_outside_domain(self):
        spec = QuantSpec(16, -8)  # values in [-128, 127.996], far past +-8
        vals = np.array([-32768, -2049, -2048, 2047, 2048, 32767])
        out = sigmoid_lut_lookup(vals, spec)
        lut = build_sigmoid_lut()
        assert out[0] == lut[0] and out[1] == lut[0]
        assert out[-1] == lut[255] and out[-2] == lut[255]

    def test_coarser_scale_indexing(self):
        # values at scale 2^-2: x = q/4, so q=2 -> x=0.5 -> cell 136
        out = sigmoid_lut_lookup(np.array([2]), QuantSpec(8, -2))
        assert out[0] == build_sigmoid_lut()[136]

    def test_apply_sigmoid_spec_and_monotone_map(self):
        rng = np.random.default_rng(0)
        q = rand_q(rng, (5, 5, 3), SIGMOID_IN_SPEC)
        out = apply_sigmoid(q)
        assert out.spec == SIGMOID_OUT_SPEC
        assert out.data.min() >= 0 and out.data.max() <= 255
        full = np.arange(-128, 128, dtype=np.int32).reshape(16, 16, 1)
        mapped = apply_sigmoid(QTensor(full, SIGMOID_IN_SPEC)).data.ravel()
        assert np.all(np.diff(mapped) >= 0)


# ---------------------------------------------------------------------------
# patch streaming
# ---------------------------------------------------------------------------


class TestStreaming:
    def test_frozen_corner_patch(self):
        fmap = np.arange(16, dtype=np.int32).reshape(4, 4, 1)
        patches = dict(stream_patches(QTensor(fmap, QuantSpec(8, 0))))
        first = patches[(0, 0, 0)]
        assert first.shape == (3, 3, LANES)
        expect = np.array([[0, 0, 0], [0, 0, 1], [0, 4, 5]])
        assert np.array_equal(first[:, :, 0], expect)
        assert np.all(first[:, :, 1:] == 0)  # lane padding

    def test_patch_count_and_group_split(self):
        fmap = np.ones((4, 4, 1), dtype=np.int32)
        assert len(list(stream_patches(fmap))) == 16
        fmap = np.ones((5, 7, 70), dtype=np.int32)
        keys = [k for k, _ in stream_patches(fmap)]
        assert len(keys) == 5 * 7 * 3
        assert {k[0] for k in keys} == {0, 1, 2}

    def test_zero_input_all_zero_patches(self):
        for _, p in stream_patches(np.zeros((3, 5, 2), dtype=np.int32)):
            assert not p.any()

    def test_patches_match_scalar_oracle(self):
        rng = np.random.default_rng(7)
        fmap = rng.integers(-100, 100, size=(6, 7, 37), dtype=np.int64).astype(np.int32)
        got = dict(stream_patches(fmap))
        for (g, y, x), patch in got.items():
            chunk = fmap[:, :, g * LANES : (g + 1) * LANES]
            expect = naive_patch(chunk, y, x, 3)
            assert np.array_equal(patch[:, :, : chunk.shape[2]], expect), (g, y, x)

    def test_line_buffer_bad_row_rejected(self):
        buf = LineBuffer(4, 2)
        with pytest.raises(DatapathError):
            buf.push_row(np.zeros((5, 2), dtype=np.int32))
        with pytest.raises(DatapathError):
            LineBuffer(4, 2, kernel=5)

    def test_single_row_map(self):
        fmap = np.array([[1, 2, 3]], dtype=np.int32).reshape(1, 3, 1)
        patches = dict(stream_patches(fmap))
        assert len(patches) == 3
        assert np.array_equal(
            patches[(0, 0, 1)][:, :, 0], np.array([[0, 0, 0], [1, 2, 3], [0, 0, 0]])
        )


# ---------------------------------------------------------------------------
# conv engines vs oracle
# ---------------------------------------------------------------------------


class TestDWEngine:
    def test_identity_kernel_zero_shift(self):
        rng = np.random.default_rng(1)
        spec = QuantSpec(8, -4)
        x = rand_q(rng, (6, 6, 8), spec)
        k = np.zeros((3, 3, 8), dtype=np.int32)
        k[1, 1, :] = 1
        out = dw_conv(x, k, QuantSpec(8, 0), spec)
        assert np.array_equal(out.data, x.data)

    def test_box_kernel_interior_count(self):
        x = QTensor(np.ones((5, 5, 1), dtype=np.int32), QuantSpec(8, 0))
        k = np.ones((3, 3, 1), dtype=np.int32)
        out = dw_conv(x, k, QuantSpec(8, 0), QuantSpec(8, 0))
        assert out.data[2, 2, 0] == 9
        assert out.data[0, 0, 0] == 4  # corner sees four live taps

    @pytest.mark.parametrize("stride", [1, 2])
    @pytest.mark.parametrize("shape", [(8, 8, 32), (7, 9, 5), (1, 6, 2)])
    def test_bit_exact_vs_oracle(self, stride, shape):
        rng = np.random.default_rng(hash((stride, shape)) % 2**32)
        in_spec, w_spec, out_spec = QuantSpec(8, -5), QuantSpec(8, -7), QuantSpec(8, -4)
        x = rand_q(rng, shape, in_spec)
        k = rng.integers(-127, 128, size=(3, 3, shape[2])).astype(np.int32)
        got = dw_conv(x, k, w_spec, out_spec, stride=stride)
        want = quantized_conv_oracle(
            x.data, k, in_spec, w_spec, out_spec, stride=stride, mode="depthwise"
        )
        assert np.array_equal(got.data, want)

    def test_sixteen_bit_inputs(self):
        rng = np.random.default_rng(11)
        in_spec, w_spec, out_spec = QuantSpec(16, -9), QuantSpec(8, -7), QuantSpec(16, -8)
        x = rand_q(rng, (6, 5, 4), in_spec)
        k = rng.integers(-127, 128, size=(3, 3, 4)).astype(np.int32)
        got = dw_conv(x, k, w_spec, out_spec)
        want = quantized_conv_oracle(x.data, k, in_spec, w_spec, out_spec, mode="depthwise")
        assert np.array_equal(got.data, want)

    def test_lane_limit_enforced(self):
        x = QTensor(np.zeros((4, 4, 33), dtype=np.int32), QuantSpec(8, 0))
        with pytest.raises(DatapathError):
            dw_conv(x, np.zeros((3, 3, 33)), QuantSpec(8, 0), QuantSpec(8, 0))

    def test_lane_padding_neutral(self):
        rng = np.random.default_rng(2)
        in_spec, w_spec, out_spec = QuantSpec(8, -5), QuantSpec(8, -7), QuantSpec(8, -4)
        x = rand_q(rng, (6, 6, 20), in_spec)
        k = rng.integers(-127, 128, size=(3, 3, 20)).astype(np.int32)
        narrow = dw_conv(x, k, w_spec, out_spec)
        xp = QTensor(np.pad(x.data, ((0, 0), (0, 0), (0, 12))), in_spec)
        kp = np.pad(k, ((0, 0), (0, 0), (0, 12)))
        wide = dw_conv(xp, kp, w_spec, out_spec)
        assert np.array_equal(wide.data[:, :, :20], narrow.data)
        assert not wide.data[:, :, 20:].any()


class TestPWEngine:
    def test_identity_block(self):
        rng = np.random.default_rng(3)
        spec = QuantSpec(8, -4)
        x = rand_q(rng, (4, 4, 32), spec)
        out = pw_conv(x, np.eye(32, dtype=np.int32), QuantSpec(8, 0), spec)
        assert np.array_equal(out.data, x.data)

    def test_two_group_accumulation(self):
        # both input groups feed identity blocks: acc = 2x before requantize
        spec = QuantSpec(8, -4)
        x = np.zeros((2, 2, 64), dtype=np.int32)
        x[..., :32] = 5
        x[..., 32:] = 5
        w = np.vstack([np.eye(32, dtype=np.int32), np.eye(32, dtype=np.int32)])
        out = pw_conv(QTensor(x, spec), w, QuantSpec(8, 0), spec)
        assert np.all(out.data == 10)

    @pytest.mark.parametrize("ci,co", [(3, 8), (32, 32), (48, 64), (70, 20)])
    def test_bit_exact_vs_matmul_oracle(self, ci, co):
        from roadnet_rt.oracles import pw_matmul_oracle

        rng = np.random.default_rng(ci * 100 + co)
        in_spec, w_spec, out_spec = QuantSpec(8, -5), QuantSpec(8, -8), QuantSpec(8, -5)
        x = rand_q(rng, (5, 6, ci), in_spec)
        w = rng.integers(-127, 128, size=(ci, co)).astype(np.int32)
        bias = rng.integers(-1000, 1000, size=co)
        got = pw_conv(x, w, w_spec, out_spec, bias_acc=bias, relu=True)
        want = pw_matmul_oracle(x.data, w, in_spec, w_spec, out_spec, bias, relu=True)
        assert np.array_equal(got.data, want)

    def test_bit_exact_vs_float_oracle(self):
        rng = np.random.default_rng(4)
        in_spec, w_spec, out_spec = QuantSpec(8, -6), QuantSpec(8, -7), QuantSpec(8, -5)
        x = rand_q(rng, (6, 6, 40), in_spec)
        w = rng.integers(-127, 128, size=(40, 24)).astype(np.int32)
        got = pw_conv(x, w, w_spec, out_spec)
        want = quantized_conv_oracle(
            x.data, w.reshape(1, 1, 40, 24), in_spec, w_spec, out_spec, mode="pointwise"
        )
        assert np.array_equal(got.data, want)

    def test_lane_padding_neutral(self):
        rng = np.random.default_rng(5)
        in_spec, w_spec, out_spec = QuantSpec(8, -5), QuantSpec(8, -8), QuantSpec(8, -5)
        x = rand_q(rng, (3, 3, 20), in_spec)
        w = rng.integers(-127, 128, size=(20, 10)).astype(np.int32)
        base = pw_conv(x, w, w_spec, out_spec)
        xp = QTensor(np.pad(x.data, ((0, 0), (0, 0), (0, 12))), in_spec)
        wp = np.pad(w, ((0, 12), (0, 0)))
        assert np.array_equal(pw_conv(xp, wp, w_spec, out_spec).data, base.data)

    def test_overflow_asserted(self):
        # 16-bit inputs times big weights across many channels blow INT32
        x = QTensor(np.full((1, 1, 512), 32767, dtype=np.int32), QuantSpec(16, 0))
        w = np.full((512, 1), 32767, dtype=np.int64)
        with pytest.raises(AssertionError):
            pw_conv(x, w, QuantSpec(16, 0), QuantSpec(16, 0))


class TestStemConv:
    @pytest.mark.parametrize("stride", [1, 2])
    def test_bit_exact_vs_oracle(self, stride):
        rng = np.random.default_rng(stride)
        in_spec, w_spec, out_spec = QuantSpec(8, -6), QuantSpec(8, -8), QuantSpec(8, -4)
        x = rand_q(rng, (9, 10, 3), in_spec)
        w = rng.integers(-127, 128, size=(3, 3, 3, 8)).astype(np.int32)
        bias = rng.integers(-500, 500, size=8)
        got = conv3_via_patches(x, w, w_spec, out_spec, stride=stride, bias_acc=bias)
        want = quantized_conv_oracle(
            x.data, w, in_spec, w_spec, out_spec, bias_int=bias, stride=stride
        )
        assert np.array_equal(got.data, want)

    def test_wide_input_rejected(self):
        x = QTensor(np.zeros((4, 4, 4), dtype=np.int32), QuantSpec(8, 0))
        with pytest.raises(DatapathError):
            conv3_via_patches(x, np.zeros((3, 3, 4, 8)), QuantSpec(8, 0), QuantSpec(8, 0))


# ---------------------------------------------------------------------------
# integer elementwise stages
# ---------------------------------------------------------------------------


class TestElementwise:
    def test_relu_and_idempotence(self):
        q = QTensor(np.array([[[-5, 0, 7]]], dtype=np.int32), QuantSpec(8, -2))
        out = integer_relu(q)
        assert np.array_equal(out.data, [[[0, 0, 7]]])
        assert np.array_equal(integer_relu(out).data, out.data)

    def test_gap_single_rounding(self):
        vals = np.array([1, 2, 2, 2], dtype=np.int32).reshape(2, 2, 1)
        out = integer_gap(QTensor(vals, QuantSpec(8, -3)))
        # mean 7/4 = 1.75 -> 2 in one rounding (per-element would give 1.75 too
        # but pre-rounded summands would lose the fraction)
        assert out.data.reshape(()) == 2
        assert out.spec == QuantSpec(8, -3)
        neg = integer_gap(QTensor(-vals, QuantSpec(8, -3)))
        assert neg.data.reshape(()) == -2  # half away from zero

    def test_gap_matches_float_reference(self):
        rng = np.random.default_rng(6)
        q = rand_q(rng, (7, 9, 5), QuantSpec(8, -4))
        out = integer_gap(q)
        want = round_half_away(q.data.astype(np.float64).sum((0, 1)) / 63.0)
        assert np.array_equal(out.data.reshape(-1), want.astype(np.int64))

    def test_elem_mul_gate_broadcast_and_shift(self):
        feat = QTensor(np.full((2, 2, 3), 64, dtype=np.int32), QuantSpec(8, -5))
        gate = QTensor(np.full((1, 1, 3), 128, dtype=np.int32), SIGMOID_OUT_SPEC)
        out = integer_elem_mul(feat, gate, QuantSpec(8, -5))
        # gate 128/256 = 0.5 exactly: output = feat / 2
        assert np.all(out.data == 32)
        assert np.array_equal(
            integer_elem_mul(gate, feat, QuantSpec(8, -5)).data, out.data
        )

    def test_gam_saturated_gate_identity(self):
        rng = np.random.default_rng(8)
        feat = rand_q(rng, (4, 5, 6), QuantSpec(8, -5))
        gate = QTensor(np.full((1, 1, 6), 255, dtype=np.int32), SIGMOID_OUT_SPEC)
        out = integer_elem_mul(feat, gate, feat.spec)
        want = shift_round(feat.data.astype(np.int64) * 255, 8)
        assert np.array_equal(out.data, want)

    def test_elem_mul_product_width_asserted(self):
        a = QTensor(np.full((1, 1, 1), 32767, dtype=np.int32), QuantSpec(16, -8))
        b = QTensor(np.full((1, 1, 1), 2, dtype=np.int32), QuantSpec(8, 0))
        with pytest.raises(AssertionError):
            integer_elem_mul(a, b, QuantSpec(16, -8))

    def test_elem_add_scale_alignment(self):
        a = QTensor(np.array([[[10]]], dtype=np.int32), QuantSpec(8, -6))
        b = QTensor(np.array([[[3]]], dtype=np.int32), QuantSpec(8, -4))
        out = integer_elem_add(a, b, QuantSpec(8, -4))
        # reals: 10/64 + 3/16 = 22/64; to -4 scale: 5.5 -> 6 half away
        assert out.data.reshape(()) == 6

    def test_elem_add_saturates(self):
        a = QTensor(np.array([[[120]]], dtype=np.int32), QuantSpec(8, -4))
        b = QTensor(np.array([[[120]]], dtype=np.int32), QuantSpec(8, -4))
        out = integer_elem_add(a, b, QuantSpec(8, -4))
        assert out.data.reshape(()) == 127

    def test_concat_rescales_each_input(self):
        a = QTensor(np.array([[[40]]], dtype=np.int32), QuantSpec(8, -6))
        b = QTensor(np.array([[[7]]], dtype=np.int32), QuantSpec(8, -4))
        out = integer_concat([a, b], QuantSpec(8, -4))
        assert np.array_equal(out.data.reshape(-1), [10, 7])

    def test_half_resize_block_means(self):
        x = np.array([[1, 2, 10, 10], [3, 5, 10, 10]], dtype=np.int32).reshape(2, 4, 1)
        out = integer_half_resize(QTensor(x, QuantSpec(8, 0)))
        # blocks: [1,2,3,5] -> 11/4 -> 3; [10,10,10,10] -> 10
        assert np.array_equal(out.data.reshape(-1), [3, 10])
        with pytest.raises(DatapathError):
            integer_half_resize(QTensor(np.zeros((3, 4, 1), dtype=np.int32), QuantSpec(8, 0)))


# ---------------------------------------------------------------------------
# whole-network execution
# ---------------------------------------------------------------------------


IN_SPEC = QuantSpec(8, -6)


def tiny_quantized_graph():
    """input -> stem 3x3(s2,bias) -> relu -> dw -> pw(bias) -> sigmoid -> x8."""
    g = NetworkGraph(
        inputs={"image": (8, 8, 3)},
        nodes=(
            Node("stem", Conv2D(3, 8, stride=2, bias=True), ("image",)),
            Node("stem_relu", ReLU(), ("stem",)),
            Node("body_dw", Conv2D(3, None, mode="depthwise"), ("stem_relu",)),
            Node("body", Conv2D(1, 1, mode="pointwise", bias=True), ("body_dw",)),
            Node("prob", Sigmoid(), ("body",)),
            Node("up", BilinearResize(8), ("prob",)),
        ),
        outputs=("up",),
    )
    quant = {
        "image": IN_SPEC,
        "stem": QuantSpec(8, -4),
        "stem_relu": QuantSpec(8, -4),
        "body_dw": QuantSpec(8, -3),
        "body": SIGMOID_IN_SPEC,
        "prob": SIGMOID_OUT_SPEC,
        "up": SIGMOID_OUT_SPEC,
    }
    return g.with_quant(quant)


def tiny_weights(seed=0, zero=False) -> WeightContainer:
    rng = np.random.default_rng(seed)
    w = WeightContainer()

    def tensor(shape):
        if zero:
            return np.zeros(shape, dtype=np.int8)
        return rng.integers(-60, 61, size=shape).astype(np.int8)

    w.add("stem.weight", tensor((3, 3, 3, 8)), scale_exp=-8)
    w.add("stem.bias", np.zeros(8, dtype=np.float32))
    w.add("body_dw.weight", tensor((3, 3, 8)), scale_exp=-7)
    w.add("body.weight", tensor((1, 1, 8, 1)), scale_exp=-8)
    w.add("body.bias", np.zeros(1, dtype=np.float32))
    return w


class TestRunQuantized:
    def test_zero_weights_give_half_probability(self):
        g = tiny_quantized_graph()
        trace = run_quantized(g, tiny_weights(zero=True), np.zeros((8, 8, 3), dtype=np.float32))
        out = trace.output()
        assert out.dims == (4, 4, 1)
        assert np.all(out.data == 128)
        assert trace.pending_upsample == frozenset({"up"})

    def test_deterministic(self):
        g = tiny_quantized_graph()
        w = tiny_weights(seed=3)
        img = np.random.default_rng(9).uniform(0, 1, size=(8, 8, 3)).astype(np.float32)
        a = run_quantized(g, w, img)
        b = run_quantized(g, w, img)
        assert np.array_equal(a.output().data, b.output().data)

    def test_matches_manual_engine_composition(self):
        g = tiny_quantized_graph()
        w = tiny_weights(seed=4)
        rng = np.random.default_rng(10)
        img = rng.uniform(0, 1, size=(8, 8, 3)).astype(np.float32)
        trace = run_quantized(g, w, img)

        from roadnet_rt.tensor import quantize_array

        x = QTensor(quantize_array(img, IN_SPEC), IN_SPEC)
        stem = conv3_via_patches(
            x, w["stem.weight"], QuantSpec(8, -8), QuantSpec(8, -4), stride=2,
            bias_acc=bias_to_acc(w["stem.bias"], -6 + -8),
        )
        act = integer_relu(stem)
        dw = dw_conv(act, w["body_dw.weight"], QuantSpec(8, -7), QuantSpec(8, -3))
        pw = pw_conv(
            dw, w["body.weight"].reshape(8, 1), QuantSpec(8, -8), SIGMOID_IN_SPEC,
            bias_acc=bias_to_acc(w["body.bias"], -3 + -8),
        )
        prob = apply_sigmoid(pw)
        assert np.array_equal(trace.values["stem"].data, stem.data)
        assert np.array_equal(trace.values["body_dw"].data, dw.data)
        assert np.array_equal(trace.output().data, prob.data)

    def test_prob_and_host_upsample(self):
        g = tiny_quantized_graph()
        trace = run_quantized(g, tiny_weights(5), np.zeros((8, 8, 3), dtype=np.float32))
        p = trace.prob()
        assert p.dtype == np.float32 and p.shape == (4, 4, 1)
        assert np.allclose(p, 0.5)
        up = host_upsample(trace.output())
        assert up.shape == (32, 32, 1)
        assert np.allclose(up, 0.5)

    def test_quantized_input_spec_checked(self):
        g = tiny_quantized_graph()
        w = tiny_weights()
        ok = QTensor(np.zeros((8, 8, 3), dtype=np.int32), IN_SPEC)
        run_quantized(g, w, ok)
        bad = QTensor(np.zeros((8, 8, 3), dtype=np.int32), QuantSpec(8, -5))
        with pytest.raises(DatapathError):
            run_quantized(g, w, bad)
        with pytest.raises(DatapathError):
            run_quantized(g, w, np.zeros((8, 8, 3), dtype=np.int32))  # int array

    def test_half_resize_runs_on_host_path(self):
        g = NetworkGraph(
            inputs={"image": (4, 4, 1)},
            nodes=(
                Node("half", BilinearResize(0.5), ("image",)),
                Node("out", Conv2D(1, 1, mode="pointwise"), ("half",)),
            ),
            outputs=("out",),
        ).with_quant({
            "image": QuantSpec(8, -4),
            "half": QuantSpec(8, -4),
            "out": QuantSpec(8, -4),
        })
        w = WeightContainer()
        w.add("out.weight", np.full((1, 1, 1, 1), 16, dtype=np.int8), scale_exp=-4)
        x = np.arange(16, dtype=np.float32).reshape(4, 4, 1) / 16.0
        trace = run_quantized(g, w, x)
        assert trace.output().dims == (2, 2, 1)

    @pytest.mark.parametrize("stride", [2, 4])
    def test_strided_pointwise_subsamples(self, stride):
        from roadnet_rt.oracles import quantized_conv_oracle

        in_spec, w_spec, out_spec = QuantSpec(8, -5), QuantSpec(8, -8), QuantSpec(8, -4)
        g = NetworkGraph(
            inputs={"image": (8, 12, 4)},
            nodes=(Node("proj", Conv2D(1, 6, stride=stride, mode="pointwise"), ("image",)),),
            outputs=("proj",),
        ).with_quant({"image": in_spec, "proj": out_spec})
        rng = np.random.default_rng(stride)
        kernel = rng.integers(-100, 101, size=(1, 1, 4, 6)).astype(np.int8)
        w = WeightContainer()
        w.add("proj.weight", kernel, scale_exp=-8)
        x = rng.integers(-128, 128, size=(8, 12, 4)).astype(np.int32)
        trace = run_quantized(g, w, QTensor(x, in_spec))
        out = trace.output()
        assert out.dims == (-(-8 // stride), -(-12 // stride), 6)
        want = quantized_conv_oracle(
            x, kernel.astype(np.int32), in_spec, w_spec, out_spec, stride=stride
        )
        assert np.array_equal(out.data, want)


class TestValidation:
    def test_missing_quant_map(self):
        g = tiny_quantized_graph()
        bare = NetworkGraph(inputs=g.inputs, nodes=g.nodes, outputs=g.outputs)
        with pytest.raises(DatapathError, match="quantization"):
            validate_datapath(bare, tiny_weights())

    def expect_reject(self, g, weights, fragment):
        with pytest.raises(DatapathError, match=fragment):
            validate_datapath(g, weights)

    def test_rejects_unlowered_constructs(self):
        quant = {"image": IN_SPEC, "c": QuantSpec(8, -4)}
        w = WeightContainer()
        w.add("c.weight", np.zeros((3, 3, 3, 8), dtype=np.int8), scale_exp=-8)

        def graph(op):
            return NetworkGraph(
                inputs={"image": (8, 8, 3)}, nodes=(Node("c", op, ("image",)),),
                outputs=("c",),
            ).with_quant(quant)

        self.expect_reject(graph(Conv2D(3, 8, dilation=2)), w, "dilation")
        w7 = WeightContainer()
        w7.add("c.weight", np.zeros((7, 7, 3, 8), dtype=np.int8), scale_exp=-8)
        self.expect_reject(graph(Conv2D(7, 8)), w7, "kernel 7")

    def test_rejects_wide_dense_conv(self):
        g = NetworkGraph(
            inputs={"image": (8, 8, 16)}, nodes=(Node("c", Conv2D(3, 8), ("image",)),),
            outputs=("c",),
        ).with_quant({"image": IN_SPEC, "c": QuantSpec(8, -4)})
        w = WeightContainer()
        w.add("c.weight", np.zeros((3, 3, 16, 8), dtype=np.int8), scale_exp=-8)
        self.expect_reject(g, w, "separation")

    def test_rejects_unfolded_batch_norm(self):
        g = NetworkGraph(
            inputs={"image": (4, 4, 2)}, nodes=(Node("n", BatchNorm(), ("image",)),),
            outputs=("n",),
        ).with_quant({"image": IN_SPEC, "n": IN_SPEC})
        self.expect_reject(g, WeightContainer(), "folded")

    def test_rejects_float_weights_and_negative_shift(self):
        g = NetworkGraph(
            inputs={"image": (4, 4, 2)},
            nodes=(Node("c", Conv2D(1, 2, mode="pointwise"), ("image",)),),
            outputs=("c",),
        ).with_quant({"image": QuantSpec(8, -4), "c": QuantSpec(8, -4)})
        wf = WeightContainer()
        wf.add("c.weight", np.zeros((1, 1, 2, 2), dtype=np.float32))
        self.expect_reject(g, wf, "int8 or int16")
        wn = WeightContainer()
        wn.add("c.weight", np.zeros((1, 1, 2, 2), dtype=np.int8), scale_exp=2)
        self.expect_reject(g, wn, "negative")

    def test_rejects_consumed_upsample(self):
        g = NetworkGraph(
            inputs={"image": (4, 4, 1)},
            nodes=(
                Node("up", BilinearResize(8), ("image",)),
                Node("r", ReLU(), ("up",)),
            ),
            outputs=("r",),
        ).with_quant({"image": IN_SPEC, "up": IN_SPEC, "r": IN_SPEC})
        self.expect_reject(g, WeightContainer(), "terminal")

    def test_rejects_spec_change_across_relu(self):
        g = NetworkGraph(
            inputs={"image": (4, 4, 1)}, nodes=(Node("r", ReLU(), ("image",)),),
            outputs=("r",),
        ).with_quant({"image": QuantSpec(8, -5), "r": QuantSpec(8, -4)})
        self.expect_reject(g, WeightContainer(), "pass-through")

    def test_rejects_missing_spec(self):
        g = NetworkGraph(
            inputs={"image": (4, 4, 1)}, nodes=(Node("r", ReLU(), ("image",)),),
            outputs=("r",),
        ).with_quant({"image": QuantSpec(8, -5)})
        self.expect_reject(g, WeightContainer(), "no quantization spec")

    def test_int16_weights_accepted(self):
        g = NetworkGraph(
            inputs={"image": (4, 4, 2)},
            nodes=(Node("c", Conv2D(1, 2, mode="pointwise"), ("image",)),),
            outputs=("c",),
        ).with_quant({"image": QuantSpec(8, -4), "c": QuantSpec(8, -4)})
        w = WeightContainer()
        w.add("c.weight", np.zeros((1, 1, 2, 2), dtype=np.int16), scale_exp=-12)
        validate_datapath(g, w)
