import hashlib
import json

import numpy as np
import pytest

from evsynth import read_events, write_flo, write_pfm, FlowField
from evsynth.cli import main


def run_config(tmp_path, **overrides):
    cfg = {
        "width": 64,
        "height": 48,
        "duration_us": 20_000,
        "seed": 5,
        "scene": {"n_sprites": 1, "texture_count": 3, "texture_size": 48},
        "sampling": {"mode": "uniform", "count": 21},
        "flow_fields": 2,
        "emulator": {"preset": "ideal-fast", "threshold_sigma": 0.0},
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def manifest_of(root):
    files = sorted(p for p in root.rglob("*") if p.is_file() and p.name != "manifest.json")
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest() for p in files
    }


class TestGenerate:
    def test_minimal_dataset_counts(self, tmp_path, capsys):
        cfg = run_config(tmp_path)
        out = tmp_path / "ds"
        assert main(["generate", "--config", str(cfg), "--out", str(out)]) == 0
        assert len(list((out / "frames").glob("*.pfm"))) == 21
        assert len(list((out / "flow").glob("*.flo"))) == 2
        assert (out / "events.evt1").exists()
        assert (out / "scene.json").exists()
        assert (out / "meta.json").exists()
        assert (out / "manifest.json").exists()
        summary = json.loads(capsys.readouterr().out.strip())
        assert summary["frames"] == 21

    def test_rerun_identical_manifest(self, tmp_path):
        cfg = run_config(tmp_path)
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["generate", "--config", str(cfg), "--out", str(out)]) == 0
            outs.append(manifest_of(out))
        assert outs[0] == outs[1]

    def test_threads_do_not_change_outputs(self, tmp_path):
        cfg = run_config(tmp_path)
        manifests = []
        for name, threads in (("t1", "1"), ("t8", "8")):
            out = tmp_path / name
            code = main(
                ["generate", "--config", str(cfg), "--out", str(out), "--threads", threads]
            )
            assert code == 0
            manifests.append(manifest_of(out))
        assert manifests[0] == manifests[1]

    def test_adaptive_tighter_bound_more_frames(self, tmp_path, capsys):
        counts = {}
        for bound in (1.0, 4.0):
            cfg = run_config(
                tmp_path, sampling={"mode": "adaptive", "max_disp_px": bound}
            )
            out = tmp_path / f"ds{bound}"
            assert main(["generate", "--config", str(cfg), "--out", str(out)]) == 0
            counts[bound] = len(list((out / "frames").glob("*.pfm")))
            capsys.readouterr()
        assert counts[1.0] >= counts[4.0]

    def test_seed_flag_overrides(self, tmp_path):
        cfg = run_config(tmp_path)
        m = {}
        for name, seed in (("s1", "5"), ("s2", "6"), ("s3", "6")):
            out = tmp_path / name
            assert main(["generate", "--config", str(cfg), "--out", str(out), "--seed", seed]) == 0
            m[name] = manifest_of(out)
        assert m["s2"] == m["s3"] and m["s1"] != m["s2"]

    def test_invalid_config_rejected(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"width": 64}))
        out = tmp_path / "ds"
        assert main(["generate", "--config", str(path), "--out", str(out)]) != 0
        assert not out.exists() or not any(out.iterdir())

    def test_failure_cleans_partial_outputs(self, tmp_path):
        cfg = run_config(tmp_path, scene={"n_sprites": 1, "texture_pool": "/nonexistent"})
        out = tmp_path / "ds"
        assert main(["generate", "--config", str(cfg), "--out", str(out)]) != 0
        assert not out.exists()

    def test_refuses_nonempty_output(self, tmp_path):
        cfg = run_config(tmp_path)
        out = tmp_path / "ds"
        out.mkdir()
        (out / "junk").write_text("x")
        assert main(["generate", "--config", str(cfg), "--out", str(out)]) != 0


class TestSimulate:
    def test_reproduces_generated_events(self, tmp_path, capsys):
        cfg = run_config(tmp_path)
        out = tmp_path / "ds"
        assert main(["generate", "--config", str(cfg), "--out", str(out)]) == 0
        capsys.readouterr()
        ev = tmp_path / "redo.evt1"
        code = main(
            [
                "simulate",
                "--frames",
                str(out),
                "--out",
                str(ev),
                "--preset",
                "ideal-fast",
                "--set",
                "threshold_sigma=0.0",
                "--seed",
                "5",
            ]
        )
        assert code == 0
        assert ev.read_bytes() == (out / "events.evt1").read_bytes()

    @pytest.fixture
    def static_frames(self, tmp_path):
        root = tmp_path / "static"
        (root / "frames").mkdir(parents=True)
        frame = np.full((24, 32), 0.5, np.float32)
        ts = [i * 10_000 for i in range(11)]
        for i, t in enumerate(ts):
            write_pfm(root / "frames" / f"{i:06d}.pfm", frame)
        (root / "meta.json").write_text(json.dumps({"frame_timestamps_us": ts}))
        return root

    def test_ideal_fast_static_zero_events(self, static_frames, tmp_path, capsys):
        ev = tmp_path / "out.evt1"
        code = main(
            ["simulate", "--frames", str(static_frames), "--out", str(ev), "--preset", "ideal-fast"]
        )
        assert code == 0
        summary = json.loads(capsys.readouterr().out.strip())
        assert summary["events"] == 0
        assert len(read_events(ev)) == 0

    def test_low_light_static_has_noise(self, static_frames, tmp_path, capsys):
        ev = tmp_path / "noise.evt1"
        code = main(
            ["simulate", "--frames", str(static_frames), "--out", str(ev), "--preset", "low-light"]
        )
        assert code == 0
        assert json.loads(capsys.readouterr().out.strip())["events"] > 0

    def test_overrides_echo_into_meta(self, static_frames, tmp_path):
        ev = tmp_path / "o.evt1"
        main(
            [
                "simulate",
                "--frames",
                str(static_frames),
                "--out",
                str(ev),
                "--preset",
                "ideal-fast",
                "--set",
                "c_pos=0.31",
            ]
        )
        meta = json.loads(ev.with_suffix(".json").read_text())
        assert meta["overrides"]["c_pos"] == 0.31
        assert meta["emulator_config"]["c_pos"] == 0.31

    def test_missing_meta_rejected(self, tmp_path):
        bare = tmp_path / "bare"
        bare.mkdir()
        assert main(["simulate", "--frames", str(bare), "--out", str(tmp_path / "e.evt1")]) != 0


class TestEvalCommand:
    def make_flow_dirs(self, tmp_path, offset):
        g = np.random.default_rng(1)
        gt = g.normal(0, 3, (12, 12, 2)).astype(np.float32).astype(np.float64)
        pred = gt + offset
        for name, arr in (("pred", pred), ("gt", gt)):
            d = tmp_path / name
            d.mkdir(exist_ok=True)
            f = FlowField(
                12, 12, arr[..., 0], arr[..., 1], np.ones((12, 12), bool), np.zeros((12, 12), bool)
            )
            write_flo(d / "000000.flo", f)
        return tmp_path / "pred", tmp_path / "gt"

    def test_identical_dirs_zero(self, tmp_path, capsys):
        pred, gt = self.make_flow_dirs(tmp_path, 0.0)
        assert main(["eval", "--pred", str(pred), "--gt", str(gt)]) == 0
        rep = json.loads(capsys.readouterr().out.strip())
        assert rep["aee"] == 0.0 and rep["outlier_pct"] == 0.0

    def test_constant_offset_aee(self, tmp_path, capsys):
        pred, gt = self.make_flow_dirs(tmp_path, np.array([3.0, 4.0]))
        assert main(["eval", "--pred", str(pred), "--gt", str(gt)]) == 0
        rep = json.loads(capsys.readouterr().out.strip())
        assert rep["aee"] == pytest.approx(5.0, rel=1e-6)

    def test_report_written(self, tmp_path, capsys):
        pred, gt = self.make_flow_dirs(tmp_path, 0.0)
        out = tmp_path / "report.json"
        assert main(["eval", "--pred", str(pred), "--gt", str(gt), "--out", str(out)]) == 0
        assert json.loads(out.read_text())["n_valid"] == 144

    def test_mask_policy_flag_switches_n_valid(self, tmp_path, capsys):
        pred, gt = self.make_flow_dirs(tmp_path, 0.0)
        occ = np.zeros((12, 12), bool)
        occ[:3] = True
        np.save(gt / "000000.occ.npy", occ)
        n_valid = {}
        for policy in ("valid", "valid-nonoccluded"):
            assert main(["eval", "--pred", str(pred), "--gt", str(gt), "--mask-policy", policy]) == 0
            n_valid[policy] = json.loads(capsys.readouterr().out.strip())["n_valid"]
        assert n_valid == {"valid": 144, "valid-nonoccluded": 108}


class TestVoxelizeCommand:
    def test_voxelize_events(self, tmp_path, capsys):
        from evsynth import EventStream, write_events

        s = EventStream.from_arrays(8, 8, [100, 200, 300], [1, 2, 3], [1, 2, 3], [1, -1, 1])
        ev = tmp_path / "e.evt1"
        write_events(ev, s)
        out = tmp_path / "grid.npy"
        code = main(["voxelize", "--events", str(ev), "--bins", "4", "--out", str(out)])
        assert code == 0
        grid = np.load(out)
        assert grid.shape == (4, 8, 8)
        assert grid.sum() == pytest.approx(1.0)
        assert json.loads(capsys.readouterr().out.strip())["mass"] == pytest.approx(1.0)


def test_published_schema_matches_code():
    from pathlib import Path

    from evsynth.cli import RUN_CONFIG_SCHEMA

    published = json.loads(
        (Path(__file__).resolve().parent.parent / "docs" / "runconfig.schema.json").read_text()
    )
    assert published == RUN_CONFIG_SCHEMA


class TestBench:
    def test_bench_matches_oracle_and_is_repeatable(self, capsys):
        counts = []
        for _ in range(2):
            assert main(["bench", "--width", "64", "--height", "48", "--pairs", "8"]) == 0
            rep = json.loads(capsys.readouterr().out.strip())
            assert rep["matches_oracle"] is True
            assert rep["events_per_s"] > 0
            counts.append(rep["events"])
        assert counts[0] == counts[1] == 64 * 48 * 16
