"""Array-in/array-out wrappers around the evsynth core.

ML pipelines hand in plain numpy arrays and get columnar numpy arrays back,
with no files in between. Every result is bit-identical to the core
pipeline run on the same values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

import evsynth
from evsynth import EmulatorConfig, EventStream, make_emulator
from evsynth.events import _simulate_prepared, log_transform
from evsynth.formats import voxelize as _voxelize

__all__ = ["ArrayEventBatch", "py_simulate", "py_voxelize", "py_metrics", "__version__"]

__version__ = evsynth.__version__  # mirrors the core


@dataclass
class ArrayEventBatch:
    """Columnar events: t (u64 us), x (u16), y (u16), p (i8), equal lengths,
    ordered like the core event stream (time, then y, x, p)."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        n = self.t.shape[0]
        if not (self.x.shape == self.y.shape == self.p.shape == (n,)):
            raise ValueError("event columns t/x/y/p must have equal lengths")

    def __len__(self) -> int:
        return int(self.t.shape[0])

    @classmethod
    def from_stream(cls, stream: EventStream) -> "ArrayEventBatch":
        return cls(
            t=stream.t.astype(np.uint64),
            x=stream.x.astype(np.uint16),
            y=stream.y.astype(np.uint16),
            p=stream.p.astype(np.int8),
        )

    def to_stream(self, width: int, height: int) -> EventStream:
        return EventStream.from_arrays(width, height, self.t.astype(np.int64), self.x, self.y, self.p)


def _config_from_mapping(config: Mapping | None) -> EmulatorConfig:
    config = dict(config or {})
    preset = config.pop("preset", None)
    if preset is not None:
        return make_emulator(preset, config)  # rejects unknown keys by name
    unknown = set(config) - set(EmulatorConfig.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown emulator config fields: {sorted(unknown)}")
    return EmulatorConfig(**config)


def py_simulate(frames, timestamps_us, config: Mapping | None = None) -> ArrayEventBatch:
    """Events for a (T, H, W) float stack of linear intensities in [0, 1].

    ``timestamps_us`` is a length-T integer array of strictly increasing
    microsecond stamps; ``config`` maps emulator fields (plus an optional
    "preset" name). Frames are consumed in a single ingest pass.
    """
    frames = np.asarray(frames)
    if frames.ndim != 3:
        raise ValueError(f"frames: expected a (T, H, W) array, got shape {frames.shape}")
    if not np.issubdtype(frames.dtype, np.floating):
        raise ValueError(f"frames: expected a float dtype, got {frames.dtype}")
    timestamps_us = np.asarray(timestamps_us)
    if timestamps_us.ndim != 1 or timestamps_us.shape[0] != frames.shape[0]:
        raise ValueError(
            f"timestamps_us: expected shape ({frames.shape[0]},), got {timestamps_us.shape}"
        )
    if not np.issubdtype(timestamps_us.dtype, np.integer):
        raise ValueError(f"timestamps_us: expected an integer dtype, got {timestamps_us.dtype}")
    if frames.shape[0] < 2:
        raise ValueError("frames: need at least 2")
    ts = timestamps_us.astype(np.int64)
    if np.any(np.diff(ts) <= 0):
        raise ValueError("timestamps_us: must be strictly increasing")

    cfg = _config_from_mapping(config)
    _, h, w = frames.shape

    def log_values():
        for i in range(frames.shape[0]):
            yield log_transform(frames[i].astype(np.float64), cfg.log_eps, int(ts[i])).values, int(ts[i])

    first = np.log(np.maximum(frames[0].astype(np.float64), cfg.log_eps))
    stream = _simulate_prepared(log_values(), ts, w, h, cfg, first_values=first)
    return ArrayEventBatch.from_stream(stream)


def py_voxelize(batch: ArrayEventBatch, t0: int, t1: int, bins: int, height: int, width: int) -> np.ndarray:
    """(bins, height, width) float64 grid of linearly binned polarity mass."""
    grid = _voxelize(batch.to_stream(width, height), t0, t1, bins)
    return grid.values


def py_metrics(pred, gt, valid=None) -> dict:
    """Flow metrics as a plain mapping: aee, outlier_pct, ae_deg, npe, n_valid."""
    from evsynth import aee, angular_error, npe, outlier_rate

    pred = np.asarray(pred, np.float64)
    gt = np.asarray(gt, np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    if valid is None:
        valid = np.ones(pred.shape[:2], bool)
    valid = np.asarray(valid, bool)
    return {
        "aee": aee(pred, gt, valid),
        "outlier_pct": outlier_rate(pred, gt, valid),
        "ae_deg": angular_error(pred, gt, valid),
        "npe": {str(n): npe(pred, gt, valid, n) for n in (1, 2, 3)},
        "n_valid": int(valid.sum()),
    }
