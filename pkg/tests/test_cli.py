"""End-to-end CLI coverage: exit codes, file outputs, report contents."""
from __future__ import annotations

import json

import numpy as np
import pytest

from roadnet_rt.cli import main
from roadnet_rt.model_io import load_pgm, load_ppm, save_pgm, save_ppm
from roadnet_rt.synthetic import synthetic_road_scene


def run_cli(capsys, *argv: str) -> tuple[int, str, str]:
    rc = main(list(argv))
    captured = capsys.readouterr()
    return rc, captured.out, captured.err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """init -> transform -> quantize once; individual tests read the results."""
    root = tmp_path_factory.mktemp("cli")
    calib = root / "calib"
    data = root / "data"
    calib.mkdir()
    data.mkdir()
    for i in range(3):
        image, mask = synthetic_road_scene((70, 240), seed=i)
        u8 = np.clip(image * 255.0, 0, 255).astype(np.uint8)
        save_ppm(calib / f"scene{i}.ppm", u8)
        save_ppm(data / f"scene{i}.ppm", u8)
        save_pgm(data / f"scene{i}_gt.pgm", mask.astype(np.uint8) * 255)

    assert main(["init", "--out", str(root / "model"), "--seed", "7"]) == 0
    assert (
        main(
            [
                "transform",
                "--model", str(root / "model" / "graph.json"),
                "--weights", str(root / "model" / "weights.rnrt"),
                "--out", str(root / "lowered"),
            ]
        )
        == 0
    )
    assert (
        main(
            [
                "quantize",
                "--model", str(root / "lowered" / "graph.json"),
                "--weights", str(root / "lowered" / "weights.rnrt"),
                "--calib-dir", str(calib),
                "--out", str(root / "q8"),
            ]
        )
        == 0
    )
    return root


class TestExitCodes:
    def test_no_arguments_is_usage_error(self, capsys):
        rc, _, err = run_cli(capsys)
        assert rc == 1
        assert "usage error" in err

    def test_unknown_subcommand_is_usage_error(self, capsys):
        rc, _, _ = run_cli(capsys, "frobnicate")
        assert rc == 1

    def test_threshold_must_be_strictly_inside_unit_interval(self, capsys, workspace):
        for bad in ("0", "1", "1.5", "-0.25"):
            rc, _, err = run_cli(
                capsys,
                "run",
                "--model", str(workspace / "lowered" / "graph.json"),
                "--weights", str(workspace / "lowered" / "weights.rnrt"),
                "--image", str(workspace / "data" / "scene0.ppm"),
                "--threshold", bad,
            )
            assert rc == 1, bad
            assert "threshold" in err

    def test_missing_model_file_is_io_error(self, capsys, workspace):
        rc, _, err = run_cli(capsys, "info", "--model", str(workspace / "absent.json"))
        assert rc == 2
        assert "i/o error" in err

    def test_corrupt_weight_container_is_io_error(self, capsys, workspace, tmp_path):
        bad = tmp_path / "bad.rnrt"
        bad.write_bytes(b"not a container at all")
        rc, _, _ = run_cli(
            capsys,
            "info",
            "--model", str(workspace / "model" / "graph.json"),
            "--weights", str(bad),
        )
        assert rc == 2

    def test_precision_container_mismatch_is_validation_error(self, capsys, workspace):
        rc, _, err = run_cli(
            capsys,
            "run",
            "--model", str(workspace / "lowered" / "graph.json"),
            "--weights", str(workspace / "lowered" / "weights.rnrt"),
            "--image", str(workspace / "data" / "scene0.ppm"),
            "--precision", "int8",
        )
        assert rc == 3
        assert "validation error" in err

    def test_selftest_passes(self, capsys):
        rc, out, _ = run_cli(capsys, "selftest")
        assert rc == 0
        lines = [l for l in out.splitlines() if l.startswith(("PASS", "FAIL"))]
        assert len(lines) == 5
        assert all(l.startswith("PASS") for l in lines)


class TestInfo:
    def test_reports_own_and_baseline_counts(self, capsys, workspace):
        rc, out, _ = run_cli(
            capsys, "info", "--model", str(workspace / "model" / "graph.json")
        )
        assert rc == 0
        assert "350048" in out
        assert "70528" in out
        assert "756032" in out and "133870" in out  # published baseline for context

    def test_json_payload(self, capsys, workspace):
        rc, out, _ = run_cli(
            capsys,
            "info",
            "--model", str(workspace / "model" / "graph.json"),
            "--weights", str(workspace / "model" / "weights.rnrt"),
            "--json",
        )
        assert rc == 0
        payload = json.loads(out)
        assert payload["parameters"] == 350048
        assert payload["standard_params"] == 350048
        assert payload["separable_params"] == 70528
        assert 4.0 <= payload["reduction_factor"] <= 8.0
        assert payload["quantized"] is False


class TestTransform:
    def test_pass_totals_match_param_counters(self, capsys, workspace, tmp_path):
        rc, out, _ = run_cli(
            capsys,
            "transform",
            "--model", str(workspace / "model" / "graph.json"),
            "--weights", str(workspace / "model" / "weights.rnrt"),
            "--out", str(tmp_path),
            "--json",
        )
        assert rc == 0
        payload = json.loads(out)
        names = [p["name"] for p in payload["passes"]]
        assert names == [
            "decompose-large-kernel",
            "replace-dilated",
            "to-depthwise-separable",
            "fold-batch-norm",
        ]
        for p in payload["passes"]:
            rows = p["rows"]
            assert sum(r["params_before"] for r in rows) == p["params_before"]
            assert sum(r["params_after"] for r in rows) == p["params_after"]

    def test_lowered_graph_runs_via_info(self, capsys, workspace):
        rc, out, _ = run_cli(
            capsys,
            "info",
            "--model", str(workspace / "lowered" / "graph.json"),
            "--json",
        )
        assert rc == 0
        payload = json.loads(out)
        assert payload["alignment_warnings"] == []


class TestRun:
    def test_float_run_writes_mask_and_overlay(self, capsys, workspace, tmp_path):
        rc, _, _ = run_cli(
            capsys,
            "run",
            "--model", str(workspace / "lowered" / "graph.json"),
            "--weights", str(workspace / "lowered" / "weights.rnrt"),
            "--image", str(workspace / "data" / "scene0.ppm"),
            "--out", str(tmp_path),
        )
        assert rc == 0
        mask = load_pgm(tmp_path / "scene0_mask.pgm")
        overlay = load_ppm(tmp_path / "scene0_overlay.ppm")
        assert mask.shape == (280, 960)
        assert set(np.unique(mask)) <= {0, 255}
        assert overlay.shape == (280, 960, 3)

    def test_zero_weights_give_empty_mask_at_default_threshold(
        self, capsys, workspace, tmp_path
    ):
        # sigmoid(0) == 0.5 exactly; "road" requires strictly above threshold
        from roadnet_rt.model_io import WeightContainer, load_weights, save_weights

        src = load_weights(workspace / "lowered" / "weights.rnrt")
        zeros = WeightContainer()
        for name in src.names():
            zeros.add(name, np.zeros_like(src.entry(name).data))
        save_weights(zeros, tmp_path / "zeros.rnrt")

        rc, _, _ = run_cli(
            capsys,
            "run",
            "--model", str(workspace / "lowered" / "graph.json"),
            "--weights", str(tmp_path / "zeros.rnrt"),
            "--image", str(workspace / "data" / "scene0.ppm"),
            "--out", str(tmp_path),
        )
        assert rc == 0
        mask = load_pgm(tmp_path / "scene0_mask.pgm")
        assert mask.max() == 0

    def test_quantized_run_resizes_any_input(self, capsys, workspace, tmp_path):
        # odd-sized photo: the host resizes to the network's 280x960 grid
        rng = np.random.default_rng(5)
        photo = rng.integers(0, 256, size=(123, 457, 3), dtype=np.uint8)
        save_ppm(tmp_path / "photo.ppm", photo)
        rc, out, _ = run_cli(
            capsys,
            "run",
            "--model", str(workspace / "q8" / "graph.json"),
            "--weights", str(workspace / "q8" / "weights.rnrt"),
            "--image", str(tmp_path / "photo.ppm"),
            "--precision", "int8",
            "--out", str(tmp_path),
            "--json",
        )
        assert rc == 0
        payload = json.loads(out)
        assert payload["results"][0]["mask"].endswith("photo_mask.pgm")
        assert load_pgm(tmp_path / "photo_mask.pgm").shape == (280, 960)


class TestEval:
    def test_eval_reports_all_metrics(self, capsys, workspace):
        rc, out, _ = run_cli(
            capsys,
            "eval",
            "--model", str(workspace / "q8" / "graph.json"),
            "--weights", str(workspace / "q8" / "weights.rnrt"),
            "--data", str(workspace / "data"),
            "--precision", "int8",
            "--json",
        )
        assert rc == 0
        payload = json.loads(out)
        assert payload["images"] == 3
        for key in ("maxf", "ap", "precision", "recall", "fpr", "fnr", "iou"):
            assert 0.0 <= payload[key] <= 1.0, key

    def test_eval_without_pairs_is_io_error(self, capsys, workspace, tmp_path):
        rc, _, _ = run_cli(
            capsys,
            "eval",
            "--model", str(workspace / "q8" / "graph.json"),
            "--weights", str(workspace / "q8" / "weights.rnrt"),
            "--data", str(tmp_path),
        )
        assert rc == 2


class TestEstimate:
    def test_fps_is_exactly_clock_over_cycles(self, capsys, workspace):
        rc, out, _ = run_cli(
            capsys,
            "estimate",
            "--model", str(workspace / "q8" / "graph.json"),
            "--weights", str(workspace / "q8" / "weights.rnrt"),
            "--json",
        )
        assert rc == 0
        payload = json.loads(out)
        num, den = payload["fps_exact"]
        # the exact rational times the cycle count recovers the clock
        assert payload["total_cycles"] * num % den == 0
        assert payload["total_cycles"] * num // den == 250_000_000
        assert payload["dsp"] == 656
        assert payload["bram"] > 0

    def test_hardware_flags_change_the_estimate(self, capsys, workspace):
        def cycles(*extra):
            rc, out, _ = run_cli(
                capsys,
                "estimate",
                "--model", str(workspace / "q8" / "graph.json"),
                "--json",
                *extra,
            )
            assert rc == 0
            return json.loads(out)

        base = cycles()
        slow_bus = cycles("--bus-bytes", "4")
        assert slow_bus["total_cycles"] > base["total_cycles"]
        half_clock = cycles("--clock-hz", "125000000")
        assert half_clock["total_cycles"] == base["total_cycles"]
        assert half_clock["fps"] == pytest.approx(base["fps"] / 2)
        starved = cycles("--buffers", "3")
        assert starved["ddr_bytes"] >= base["ddr_bytes"]

    def test_bad_hardware_flag_is_usage_error(self, capsys, workspace):
        rc, _, _ = run_cli(
            capsys,
            "estimate",
            "--model", str(workspace / "q8" / "graph.json"),
            "--buffers", "0",
        )
        assert rc == 1
