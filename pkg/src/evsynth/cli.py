"""Command-line pipeline: generate, simulate, voxelize, eval, bench.

Machine-readable JSON goes to stdout; progress and errors go to stderr.
Every command is a deterministic function of its config and seed (timing
fields excepted), including under ``--threads``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import jsonschema
import numpy as np

from .emulators import make_emulator
from .events import EmulatorConfig, LogFrame, _simulate_prepared, log_transform
from .formats import (
    DatasetLayout,
    read_events,
    read_pfm,
    voxelize,
    write_events,
    write_flo,
    write_pfm,
)
from .metrics import evaluate_sequence
from .scene import build_scene, compute_flow_gt, make_texture_pool, render_frame, save_scene
from .trajectory import adaptive_timestamps, uniform_timestamps

log = logging.getLogger("evsynth")

_EMULATOR_FIELDS = set(EmulatorConfig.__dataclass_fields__)

RUN_CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "evsynth run configuration",
    "type": "object",
    "required": ["width", "height", "duration_us", "seed", "scene", "sampling", "emulator"],
    "additionalProperties": False,
    "properties": {
        "width": {"type": "integer", "minimum": 8, "maximum": 65535},
        "height": {"type": "integer", "minimum": 8, "maximum": 65535},
        "duration_us": {"type": "integer", "minimum": 2},
        "seed": {"type": "integer", "minimum": 0},
        "flow_fields": {"type": "integer", "minimum": 1, "default": 4},
        "scene": {
            "type": "object",
            "required": ["n_sprites"],
            "additionalProperties": False,
            "properties": {
                "n_sprites": {"type": "integer", "minimum": 0},
                "texture_pool": {"type": ["string", "null"], "default": None},
                "texture_count": {"type": "integer", "minimum": 1, "default": 8},
                "texture_size": {"type": "integer", "minimum": 16, "default": 128},
                "knots": {"type": "integer", "minimum": 2, "default": 4},
            },
        },
        "sampling": {
            "type": "object",
            "oneOf": [
                {
                    "properties": {
                        "mode": {"const": "uniform"},
                        "count": {"type": "integer", "minimum": 2},
                    },
                    "required": ["mode", "count"],
                    "additionalProperties": False,
                },
                {
                    "properties": {
                        "mode": {"const": "adaptive"},
                        "max_disp_px": {"type": "number", "exclusiveMinimum": 0},
                    },
                    "required": ["mode", "max_disp_px"],
                    "additionalProperties": False,
                },
            ],
        },
        "emulator": {
            "type": "object",
            "properties": {
                "preset": {"enum": ["ideal-fast", "low-light", "voltmeter"]},
                **{
                    name: {}
                    for name in sorted(_EMULATOR_FIELDS)
                },
            },
            "additionalProperties": False,
        },
    },
}


def _emulator_from_config(section: dict, seed: int | None) -> EmulatorConfig:
    section = dict(section)
    preset = section.pop("preset", None)
    if seed is not None:
        section["seed"] = seed
    if preset is not None:
        return make_emulator(preset, section)
    return EmulatorConfig(**section)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(root: Path) -> Path:
    files = sorted(p for p in root.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {str(p.relative_to(root)): _sha256(p) for p in files}
    out = root / "manifest.json"
    out.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return out


def _render_frames_f32(scene, timestamps, threads: int):
    """Rendered frames as float32, in timestamp order, threads-invariant."""

    def one(t):
        return render_frame(scene, t).astype(np.float32)

    if threads <= 1:
        for t in timestamps:
            yield one(t)
        return
    # bounded pipeline: keep at most 2*threads frames in flight
    with ThreadPoolExecutor(max_workers=threads) as pool:
        pending = []
        it = iter(timestamps)
        for t in it:
            pending.append(pool.submit(one, t))
            if len(pending) >= 2 * threads:
                yield pending.pop(0).result()
        for fut in pending:
            yield fut.result()


def cmd_generate(args) -> int:
    config = json.loads(Path(args.config).read_text())
    jsonschema.validate(config, RUN_CONFIG_SCHEMA)
    if args.seed is not None:
        config["seed"] = args.seed
    seed = int(config["seed"])
    w, h, dur = config["width"], config["height"], config["duration_us"]
    scene_cfg = config["scene"]
    flow_fields = int(config.get("flow_fields", 4))

    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        raise RuntimeError(f"output directory {out} exists and is not empty")
    out.mkdir(parents=True, exist_ok=True)
    try:
        pool_path = scene_cfg.get("texture_pool")
        if pool_path is None:
            pool_path = out / "textures"
            make_texture_pool(
                pool_path,
                int(scene_cfg.get("texture_count", 8)),
                int(scene_cfg.get("texture_size", 128)),
                seed,
            )
            log.info("synthesized %s textures into %s", scene_cfg.get("texture_count", 8), pool_path)
        scene = build_scene(
            w,
            h,
            int(scene_cfg["n_sprites"]),
            pool_path,
            duration_us=dur,
            seed=seed,
            knots=int(scene_cfg.get("knots", 4)),
        )
        save_scene(scene, out)

        sampling = config["sampling"]
        if sampling["mode"] == "uniform":
            timestamps = uniform_timestamps(0, dur, int(sampling["count"]))
        else:
            timestamps = adaptive_timestamps(scene, 0, dur, float(sampling["max_disp_px"]))
        log.info("rendering %d frames", len(timestamps))

        frames_dir = out / "frames"
        frames_dir.mkdir()
        cfg = _emulator_from_config(config["emulator"], seed)
        rendered = []
        for i, frame in enumerate(_render_frames_f32(scene, timestamps, args.threads)):
            write_pfm(frames_dir / f"{i:06d}.pfm", frame)
            rendered.append(frame)

        # events come from the float32 frames exactly as stored on disk, so
        # `simulate` over frames/ reproduces events.evt1 bit for bit
        ts_arr = np.asarray(timestamps, np.int64)
        stream = _simulate_prepared(
            (
                (log_transform(f.astype(np.float64), cfg.log_eps, t).values, t)
                for f, t in zip(rendered, timestamps)
            ),
            ts_arr,
            w,
            h,
            cfg,
            first_values=np.log(np.maximum(rendered[0].astype(np.float64), cfg.log_eps)),
        )
        write_events(out / "events.evt1", stream)

        flow_ts = uniform_timestamps(0, dur, flow_fields + 1)
        flow_dir = out / "flow"
        flow_dir.mkdir()
        for i, (ta, tb) in enumerate(zip(flow_ts, flow_ts[1:])):
            flow = compute_flow_gt(scene, ta, tb)
            write_flo(flow_dir / f"{i:06d}.flo", flow)
            np.save(flow_dir / f"{i:06d}.occ.npy", flow.occluded)

        meta = {
            "width": w,
            "height": h,
            "seed": seed,
            "frame_timestamps_us": [int(t) for t in timestamps],
            "flow_timestamps_us": [int(t) for t in flow_ts],
            "event_count": len(stream),
            "config": config,
            "emulator_config": asdict(cfg),
        }
        (out / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
        _write_manifest(out)
        DatasetLayout(out).validate()
    except BaseException:
        shutil.rmtree(out, ignore_errors=True)  # no partial datasets
        raise
    print(json.dumps({"root": str(out), "frames": len(timestamps), "events": len(stream), "flows": flow_fields}))
    return 0


def _parse_overrides(pairs: list[str]) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not KEY=VALUE")
        key, val = item.split("=", 1)
        if key not in _EMULATOR_FIELDS:
            raise ValueError(f"unknown emulator config field {key!r}")
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out


def _locate_frames(frames_arg: Path):
    """Accept either a dataset root (meta.json + frames/) or a flat frame dir."""
    root = Path(frames_arg)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise RuntimeError(f"missing meta.json under {root}")
    meta = json.loads(meta_path.read_text())
    frames_dir = root / "frames" if (root / "frames").is_dir() else root
    pfms = sorted(frames_dir.glob("*.pfm"))
    ts = meta["frame_timestamps_us"]
    if len(pfms) != len(ts):
        raise RuntimeError(f"{len(pfms)} pfm frames but {len(ts)} meta timestamps")
    if len(pfms) < 2:
        raise RuntimeError("need at least 2 frames to simulate")
    return pfms, ts, meta


def cmd_simulate(args) -> int:
    pfms, ts, meta = _locate_frames(args.frames)
    overrides = _parse_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.preset:
        cfg = make_emulator(args.preset, overrides)
    else:
        cfg = EmulatorConfig(**overrides)

    first = read_pfm(pfms[0]).astype(np.float64)
    h, w = first.shape
    ts_arr = np.asarray(ts, np.int64)

    def log_frames():
        for path, t in zip(pfms, ts):
            yield log_transform(read_pfm(path).astype(np.float64), cfg.log_eps, t).values, t

    t_begin = time.perf_counter()
    stream = _simulate_prepared(
        log_frames(), ts_arr, w, h, cfg, first_values=np.log(np.maximum(first, cfg.log_eps))
    )
    elapsed = time.perf_counter() - t_begin

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_events(out, stream)
    sim_meta = {
        "events": len(stream),
        "preset": args.preset,
        "overrides": overrides,
        "emulator_config": asdict(cfg),
        "frames": len(pfms),
    }
    out.with_suffix(".json").write_text(json.dumps(sim_meta, indent=1, sort_keys=True))
    print(
        json.dumps(
            {
                "events": len(stream),
                "elapsed_s": round(elapsed, 6),
                "events_per_s": round(len(stream) / elapsed, 1) if elapsed > 0 else None,
                "out": str(out),
            }
        )
    )
    return 0


def cmd_voxelize(args) -> int:
    stream = read_events(args.events)
    t0 = args.t0 if args.t0 is not None else (int(stream.t.min()) if len(stream) else 0)
    t1 = args.t1 if args.t1 is not None else (int(stream.t.max()) if len(stream) else 1)
    grid = voxelize(stream, t0, t1, args.bins)
    np.save(args.out, grid.values)
    print(
        json.dumps(
            {
                "bins": grid.bins,
                "height": grid.height,
                "width": grid.width,
                "mass": float(grid.values.sum()),
                "out": str(args.out),
            }
        )
    )
    return 0


def cmd_eval(args) -> int:
    report = evaluate_sequence(
        args.pred, args.gt, mask_policy=args.mask_policy, frame_weighted=args.frame_weighted
    )
    text = report.to_json(sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def cmd_bench(args) -> int:
    """Throughput on a deterministic high-contrast ramp (staircase-exact)."""
    w, h, pairs = args.width, args.height, args.pairs
    step, c = 0.5, 0.25  # dyadic: the crossing count is exact in float64
    cfg = make_emulator(args.preset, {"threshold_sigma": 0.0, "c_pos": c, "c_neg": c, "seed": 0})
    frames = [
        LogFrame(w, h, i * 1000, np.full((h, w), i * step, np.float64)) for i in range(pairs + 1)
    ]
    oracle = w * h * int((pairs * step) / c)

    from .events import simulate_sequence

    t_begin = time.perf_counter()
    stream = simulate_sequence(frames, cfg)
    elapsed = time.perf_counter() - t_begin
    print(
        json.dumps(
            {
                "width": w,
                "height": h,
                "pairs": pairs,
                "events": len(stream),
                "oracle_events": oracle,
                "matches_oracle": len(stream) == oracle,
                "elapsed_s": round(elapsed, 6),
                "events_per_s": round(len(stream) / elapsed, 1),
            }
        )
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evsynth", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="scene + frames + events + flow ground truth")
    g.add_argument("--config", required=True, help="run config JSON (see docs/runconfig.schema.json)")
    g.add_argument("--out", required=True, help="output dataset root (must not exist or be empty)")
    g.add_argument("--seed", type=int, default=None, help="override the config seed")
    g.add_argument("--threads", type=int, default=1, help="render workers; output-invariant")
    g.set_defaults(fn=cmd_generate)

    s = sub.add_parser("simulate", help="events from a rendered frame directory")
    s.add_argument("--frames", required=True, help="dataset root or directory of .pfm + meta.json")
    s.add_argument("--out", required=True, help="output events file (.evt1)")
    s.add_argument("--preset", choices=["ideal-fast", "low-light", "voltmeter"], default=None)
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="emulator config override")
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(fn=cmd_simulate)

    vx = sub.add_parser("voxelize", help="events -> temporal voxel grid (.npy)")
    vx.add_argument("--events", required=True)
    vx.add_argument("--bins", type=int, required=True)
    vx.add_argument("--t0", type=int, default=None)
    vx.add_argument("--t1", type=int, default=None)
    vx.add_argument("--out", required=True)
    vx.set_defaults(fn=cmd_voxelize)

    e = sub.add_parser("eval", help="flow metrics for predictions vs ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--mask-policy", choices=["valid", "valid-nonoccluded"], default="valid")
    e.add_argument("--frame-weighted", action="store_true")
    e.add_argument("--out", default=None, help="also write the report JSON here")
    e.set_defaults(fn=cmd_eval)

    b = sub.add_parser("bench", help="emulator throughput on a synthetic ramp")
    b.add_argument("--preset", default="ideal-fast")
    b.add_argument("--width", type=int, default=320)
    b.add_argument("--height", type=int, default=240)
    b.add_argument("--pairs", type=int, default=32)
    b.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except Exception as e:
        log.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
