import os

import numpy as np
import pytest

from selrel.cli import main
from selrel.fixtures import main as fixture_main
from selrel.fixtures import moving_square_relevance, write_weight_bundle
from selrel.kvtext import read_kv_file
from selrel.render import save_image_sequence
from selrel.volume import Volume3, read_srvl, write_srvl


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Weights, frames, and a relevance volume shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    weights = root / "w.srwb"
    write_weight_bundle("micro-112", seed=5, path=weights)
    frames_dir = root / "frames"
    assert fixture_main(["moving-square", "--out", str(frames_dir), "--size", "112",
                         "--square", "16", "--seed", "0"]) == 0
    rel, flow_support = moving_square_relevance()
    rel_path = root / "rel.srvl"
    write_srvl(rel_path, rel)
    flow_path = root / "flow_support.srvl"
    write_srvl(flow_path, flow_support)
    return {
        "root": root,
        "weights": str(weights),
        "frames": str(frames_dir),
        "rel": str(rel_path),
        "flow_support": str(flow_path),
    }


class TestExplain:
    def test_contract_one_volume_plus_sidecar(self, workspace, tmp_path):
        out = tmp_path / "art"
        code = main([
            "explain", "--model", "micro-112", "--weights", workspace["weights"],
            "--frames", workspace["frames"], "--method", "dtd", "--class", "2",
            "--out", str(out),
        ])
        assert code == 0
        artifact = out / "dtd_c2_w000.srvl"
        assert artifact.exists()
        meta = read_kv_file(f"{artifact}.meta")
        assert meta["method"] == "dtd"
        assert meta["class_idx"] == "2"
        assert meta["channel_collapse"] == "sum"
        assert len(meta["model_fingerprint"]) == 64
        volume = read_srvl(artifact)
        assert volume.shape == (16, 112, 112)

    def test_unknown_method_fails(self, workspace, tmp_path):
        code = main([
            "explain", "--model", "micro-112", "--weights", workspace["weights"],
            "--frames", workspace["frames"], "--method", "sorcery",
            "--out", str(tmp_path),
        ])
        assert code == 1

    def test_missing_weights_reports_stage(self, workspace, tmp_path, capsys):
        code = main([
            "explain", "--model", "micro-112", "--weights", "missing.srwb",
            "--frames", workspace["frames"], "--out", str(tmp_path),
        ])
        assert code == 1
        assert "[load]" in capsys.readouterr().err

    def test_logits_only_with_layer_stats(self, workspace, tmp_path):
        stats_path = tmp_path / "stats.kv"
        code = main([
            "explain", "--model", "micro-112", "--weights", workspace["weights"],
            "--frames", workspace["frames"], "--logits-only",
            "--dump-layer-stats", str(stats_path), "--out", str(tmp_path),
        ])
        assert code == 0
        logits_csv = tmp_path / "logits_w000.csv"
        lines = logits_csv.read_text().splitlines()
        assert lines[0] == "class,logit"
        assert len(lines) == 6  # header + 5 classes
        stats = read_kv_file(stats_path)
        assert "layer.conv1.mean" in stats


class TestSelect:
    def test_triple_and_sidecar(self, workspace, tmp_path):
        code = main(["select", "--relevance", workspace["rel"], "--out", str(tmp_path)])
        assert code == 0
        for suffix in ("edge", "mask", "selected"):
            assert (tmp_path / f"rel_{suffix}.srvl").exists()
        meta = read_kv_file(tmp_path / "rel_selected.srvl.meta")
        assert meta["n_sigma"] == "4.0"  # the default threshold
        assert float(meta["threshold_value"]) > 0

    def test_mask_is_binary(self, workspace, tmp_path):
        main(["select", "--relevance", workspace["rel"], "--out", str(tmp_path)])
        mask = read_srvl(tmp_path / "rel_mask.srvl").data
        assert set(np.unique(mask)) <= {0.0, 1.0}


class TestSweep:
    def test_nested_masks_reported(self, workspace, tmp_path):
        code = main([
            "sweep", "--relevance", workspace["rel"], "--n-sigma", "1,2,3,4",
            "--out", str(tmp_path),
        ])
        assert code == 0
        report = (tmp_path / "sweep.txt").read_text()
        assert "monotonic=yes" in report
        for n in (1, 2, 3, 4):
            assert (tmp_path / f"n{n}" / "rel_selected.srvl").exists()

    def test_non_increasing_rejected(self, workspace, tmp_path, capsys):
        code = main([
            "sweep", "--relevance", workspace["rel"], "--n-sigma", "3,2",
            "--out", str(tmp_path),
        ])
        assert code == 1
        assert "increasing" in capsys.readouterr().err


class TestFlowEval:
    def test_flow_then_eval(self, workspace, tmp_path):
        flow_out = tmp_path / "flow"
        code = main(["flow", "--frames", workspace["frames"], "--iters", "40",
                     "--out", str(flow_out)])
        assert code == 0
        assert (flow_out / "flow.srfl").exists()
        mag = read_srvl(flow_out / "flow_mag.srvl")
        assert mag.shape == (16, 112, 112)

    def test_eval_selectivity_and_precision(self, workspace, tmp_path):
        sel_dir = tmp_path / "sel"
        main(["select", "--relevance", workspace["rel"], "--out", str(sel_dir)])
        code = main([
            "eval", "--relevance", str(sel_dir / "rel_selected.srvl"),
            "--baseline", workspace["rel"], "--flow-mag", workspace["flow_support"],
            "--out", str(tmp_path),
        ])
        assert code == 0
        report = (tmp_path / "report.csv").read_text().splitlines()
        assert report[0] == "metric,method,avg,std,count"
        assert len(report) == 4  # precision + area + mass

    def test_eval_refuses_mismatched_dims(self, workspace, tmp_path, capsys):
        small = tmp_path / "small.srvl"
        write_srvl(small, Volume3(np.ones((4, 4, 4), np.float32)))
        code = main([
            "eval", "--relevance", workspace["rel"], "--against", str(small),
            "--out", str(tmp_path),
        ])
        assert code == 1
        assert "dims mismatch" in capsys.readouterr().err

    def test_force_overrides_fingerprint_guard(self, workspace, tmp_path):
        # two volumes with sidecars from different models
        a = tmp_path / "a.srvl"
        b = tmp_path / "b.srvl"
        vol = Volume3(np.ones((4, 4, 4), np.float32))
        write_srvl(a, vol)
        write_srvl(b, vol)
        (tmp_path / "a.srvl.meta").write_text("model_fingerprint=xxx\n")
        (tmp_path / "b.srvl.meta").write_text("model_fingerprint=yyy\n")
        refused = main(["eval", "--relevance", str(a), "--against", str(b),
                        "--out", str(tmp_path)])
        assert refused == 1
        forced = main(["eval", "--relevance", str(a), "--against", str(b), "--force",
                       "--out", str(tmp_path)])
        assert forced == 0


class TestBench:
    def test_selective_step_writes_reports(self, tmp_path):
        code = main([
            "bench", "--task", "selective-step", "--dims", "8,32,32",
            "--reps", "5", "--warmup", "1", "--out", str(tmp_path),
        ])
        assert code == 0
        timing = (tmp_path / "timing.csv").read_text().splitlines()
        assert timing[0] == "task,avg_ms,std_ms,repetitions,warmup"
        assert timing[1].startswith("selective-step,")


class TestRender:
    def test_overlay_sequence(self, workspace, tmp_path):
        code = main([
            "render", "--frames", workspace["frames"], "--relevance", workspace["rel"],
            "--out", str(tmp_path), "--stem", "viz",
        ])
        # relevance fixture is 32x32 but frames are 112x112 -> dim error
        assert code == 1

    def test_overlay_matching_dims(self, workspace, tmp_path):
        frames_small = tmp_path / "frames32"
        rng = np.random.default_rng(0)
        save_image_sequence(
            [rng.integers(0, 255, size=(32, 32, 3)).astype(np.uint8) for _ in range(16)],
            frames_small, "frame",
        )
        code = main([
            "render", "--frames", str(frames_small), "--relevance", workspace["rel"],
            "--out", str(tmp_path / "png"), "--stem", "viz",
        ])
        assert code == 0
        files = sorted(os.listdir(tmp_path / "png"))
        assert files[0] == "viz_0000.png" and len(files) == 16


class TestConfigFile:
    def test_config_supplies_defaults_flags_override(self, workspace, tmp_path):
        cfg = tmp_path / "run.kv"
        cfg.write_text(f"relevance={workspace['rel']}\nn-sigma=2.0\n")
        out = tmp_path / "o1"
        assert main(["select", "--config", str(cfg), "--out", str(out)]) == 0
        meta = read_kv_file(out / "rel_selected.srvl.meta")
        assert meta["n_sigma"] == "2.0"
        out2 = tmp_path / "o2"
        assert main(["select", "--config", str(cfg), "--n-sigma", "3.0",
                     "--out", str(out2)]) == 0
        meta2 = read_kv_file(out2 / "rel_selected.srvl.meta")
        assert meta2["n_sigma"] == "3.0"


class TestFixtureTool:
    def test_weights_deterministic(self, tmp_path):
        a = tmp_path / "a.srwb"
        b = tmp_path / "b.srwb"
        assert fixture_main(["weights", "--arch", "tiny-conv", "--seed", "9",
                             "--out", str(a)]) == 0
        assert fixture_main(["weights", "--arch", "tiny-conv", "--seed", "9",
                             "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_probe_clip(self, tmp_path):
        out = tmp_path / "probe.srvl"
        assert fixture_main(["probe-clip", "--out", str(out)]) == 0
        packed = read_srvl(out)
        assert packed.shape == (48, 112, 112)
