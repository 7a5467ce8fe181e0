"""Bit-exact readers and writers for events, frames, flow, and voxel grids.

EVT1 event container (all little-endian):

    offset  size  field
    0       4     magic "EVT1"
    4       4     u32 sensor width   (1..65535)
    8       4     u32 sensor height  (1..65535)
    12      8     u64 event count
    20      16*n  records: u64 t_us | u16 x | u16 y | i8 p | 3 zero pad bytes

Records are 16-byte aligned for mapped reads; the magic versions the
layout. The reader re-checks every invariant (magic, size arithmetic,
coordinate bounds, polarity, pad bytes, time ordering) and reports each
violation with its byte offset.

Flow interchange is the Middlebury .flo layout (float tag 202021.25, i32
width/height, interleaved float32 u/v, row-major); invalid pixels carry the
sentinel 1e10 in both components. Float frames use grayscale PFM ("Pf",
scale -1.0 for little-endian, bottom-up rows).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .events import EventStream
from .scene import FlowField

__all__ = [
    "Evt1Error",
    "VoxelGrid",
    "DatasetLayout",
    "write_events",
    "read_events",
    "write_flo",
    "read_flo",
    "write_pfm",
    "read_pfm",
    "voxelize",
]

EVT1_MAGIC = b"EVT1"
EVT1_HEADER = struct.Struct("<4sIIQ")
EVT1_RECORD = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "V3")])
FLO_TAG = 202021.25
FLO_INVALID = 1e10  # written where valid is False; anything > 1e9 reads as invalid


class Evt1Error(ValueError):
    """EVT1 parse failure; ``errors`` itemizes offenses with byte offsets."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


@dataclass
class VoxelGrid:
    """Signed polarity mass binned over time: values has shape (bins, H, W)."""

    bins: int
    height: int
    width: int
    values: np.ndarray


@dataclass
class DatasetLayout:
    """Directory layout produced by the generate command."""

    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    @property
    def scene_json(self) -> Path:
        return self.root / "scene.json"

    @property
    def frames_dir(self) -> Path:
        return self.root / "frames"

    @property
    def flow_dir(self) -> Path:
        return self.root / "flow"

    @property
    def events_path(self) -> Path:
        return self.root / "events.evt1"

    @property
    def meta_path(self) -> Path:
        return self.root / "meta.json"

    def frame_paths(self) -> list[Path]:
        return sorted(self.frames_dir.glob("*.pfm"))

    def flow_paths(self) -> list[Path]:
        return sorted(self.flow_dir.glob("*.flo"))

    def validate(self) -> None:
        import json

        meta = json.loads(self.meta_path.read_text())
        ts = meta["frame_timestamps_us"]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("meta frame timestamps are not strictly increasing")
        if len(self.frame_paths()) != len(ts):
            raise ValueError("frame file count does not match meta timestamps")
        if len(self.flow_paths()) != len(meta["flow_timestamps_us"]) - 1:
            raise ValueError("flow file count does not match meta timestamps")
        for p in (self.scene_json, self.events_path):
            if not p.exists():
                raise ValueError(f"missing {p.name}")


def _open(path_or_file, mode):
    if hasattr(path_or_file, "read") or hasattr(path_or_file, "write"):
        return path_or_file, False
    return open(path_or_file, mode), True


def write_events(path_or_file, stream: EventStream, validate: bool = True) -> None:
    """Serialize a stream to EVT1; the stream invariants are checked first."""
    if validate:
        stream.validate()
    if not (1 <= stream.width <= 0xFFFF and 1 <= stream.height <= 0xFFFF):
        raise ValueError("sensor dimensions must be within the u16 coordinate range")
    f, close = _open(path_or_file, "wb")
    try:
        f.write(EVT1_HEADER.pack(EVT1_MAGIC, stream.width, stream.height, len(stream)))
        rec = np.zeros(len(stream), EVT1_RECORD)
        rec["t"] = stream.t
        rec["x"] = stream.x
        rec["y"] = stream.y
        rec["p"] = stream.p
        f.write(rec.tobytes())
    finally:
        if close:
            f.close()


def read_events(path_or_file) -> EventStream:
    """Parse and fully validate an EVT1 file; bad input raises Evt1Error."""
    f, close = _open(path_or_file, "rb")
    try:
        raw = f.read()
    finally:
        if close:
            f.close()

    errors: list[str] = []
    if len(raw) < EVT1_HEADER.size:
        raise Evt1Error([f"file truncated: {len(raw)} bytes < {EVT1_HEADER.size}-byte header"])
    magic, width, height, count = EVT1_HEADER.unpack_from(raw, 0)
    if magic != EVT1_MAGIC:
        errors.append(f"bad magic {magic!r} at offset 0")
    if not 1 <= width <= 0xFFFF:
        errors.append(f"width {width} at offset 4 outside [1, 65535]")
    if not 1 <= height <= 0xFFFF:
        errors.append(f"height {height} at offset 8 outside [1, 65535]")
    expected = EVT1_HEADER.size + EVT1_RECORD.itemsize * count
    if len(raw) != expected:
        errors.append(
            f"count {count} at offset 12 implies {expected} bytes, file has {len(raw)}"
        )
    if errors:
        raise Evt1Error(errors)

    rec = np.frombuffer(raw, EVT1_RECORD, count=count, offset=EVT1_HEADER.size)
    base = EVT1_HEADER.size
    rsz = EVT1_RECORD.itemsize

    def offenders(mask, what):
        for i in np.flatnonzero(mask)[:10]:
            errors.append(f"{what} in record {i} at offset {base + int(i) * rsz}")

    offenders(~np.isin(rec["p"], (-1, 1)), "polarity not in {-1, +1}")
    offenders(rec["x"] >= width, "x out of bounds")
    offenders(rec["y"] >= height, "y out of bounds")
    if count:
        pad = np.frombuffer(raw, np.uint8, offset=base).reshape(-1, rsz)[:, 13:16]
        offenders((pad != 0).any(axis=1), "nonzero pad bytes")
    if count:
        offenders(np.r_[False, np.diff(rec["t"].astype(np.int64)) < 0], "timestamp regression")
    if errors:
        raise Evt1Error(errors)

    stream = EventStream(
        width=int(width),
        height=int(height),
        t=rec["t"].astype(np.int64),
        x=rec["x"].copy(),
        y=rec["y"].copy(),
        p=rec["p"].copy(),
    )
    try:
        stream.validate()
    except ValueError as e:
        raise Evt1Error([str(e)]) from e
    return stream


def write_flo(path_or_file, flow: FlowField) -> None:
    """Middlebury .flo with the invalid-pixel sentinel written where not valid."""
    u = np.asarray(flow.u, np.float32).copy()
    v = np.asarray(flow.v, np.float32).copy()
    invalid = ~np.asarray(flow.valid, bool)
    u[invalid] = FLO_INVALID
    v[invalid] = FLO_INVALID
    if not (np.isfinite(u).all() and np.isfinite(v).all()):
        raise ValueError("flow must be finite where valid")
    f, close = _open(path_or_file, "wb")
    try:
        f.write(struct.pack("<fii", FLO_TAG, flow.width, flow.height))
        f.write(np.stack([u, v], axis=-1).astype("<f4").tobytes())
    finally:
        if close:
            f.close()


def read_flo(path_or_file) -> FlowField:
    f, close = _open(path_or_file, "rb")
    try:
        raw = f.read()
    finally:
        if close:
            f.close()
    if len(raw) < 12:
        raise ValueError("flo file truncated before header")
    tag, w, h = struct.unpack_from("<fii", raw, 0)
    if tag != FLO_TAG:
        raise ValueError(f"bad flo tag {tag!r} (expected {FLO_TAG})")
    need = 12 + 8 * w * h
    if w <= 0 or h <= 0 or len(raw) != need:
        raise ValueError(f"flo size mismatch: {w}x{h} needs {need} bytes, file has {len(raw)}")
    data = np.frombuffer(raw, "<f4", count=2 * w * h, offset=12).reshape(h, w, 2)
    u = data[..., 0].astype(np.float64)
    v = data[..., 1].astype(np.float64)
    valid = (np.abs(u) <= 1e9) & (np.abs(v) <= 1e9)
    return FlowField(
        width=w, height=h, u=u, v=v, valid=valid, occluded=np.zeros((h, w), bool)
    )


def write_pfm(path_or_file, frame: np.ndarray) -> None:
    """Grayscale little-endian PFM, rows bottom-up per the format convention."""
    frame = np.asarray(frame, np.float32)
    if frame.ndim != 2:
        raise ValueError("pfm writer expects a 2-D grayscale frame")
    h, w = frame.shape
    f, close = _open(path_or_file, "wb")
    try:
        f.write(b"Pf\n%d %d\n-1.0\n" % (w, h))
        f.write(np.flipud(frame).astype("<f4").tobytes())
    finally:
        if close:
            f.close()


def read_pfm(path_or_file) -> np.ndarray:
    f, close = _open(path_or_file, "rb")
    try:
        raw = f.read()
    finally:
        if close:
            f.close()
    parts = raw.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"Pf":
        raise ValueError("malformed pfm header (expected grayscale 'Pf')")
    try:
        w, h = (int(v) for v in parts[1].split())
        scale = float(parts[2])
    except Exception as e:
        raise ValueError(f"malformed pfm header: {e}") from e
    if scale >= 0:
        raise ValueError("big-endian pfm (scale >= 0) is not supported")
    data = parts[3]
    if len(data) != 4 * w * h:
        raise ValueError(f"pfm data size mismatch: expected {4 * w * h} bytes, got {len(data)}")
    arr = np.frombuffer(data, "<f4").reshape(h, w)
    return np.flipud(arr).copy()


def voxelize(stream: EventStream, t0: int, t1: int, bins: int) -> VoxelGrid:
    """Accumulate event polarities into ``bins`` temporal bins over [t0, t1].

    Each event splits its polarity linearly between the two nearest bin
    centers (centers at t0 + (b + 0.5) * (t1 - t0) / bins); events outside
    the center range land fully in the boundary bin. Total mass equals the
    sum of in-window polarities.
    """
    if t0 >= t1:
        raise ValueError("t0 must be < t1")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    h, w = stream.height, stream.width
    grid = np.zeros(bins * h * w, np.float64)
    inside = (stream.t >= t0) & (stream.t <= t1)
    if inside.any():
        t = stream.t[inside].astype(np.float64)
        pol = stream.p[inside].astype(np.float64)
        pix = stream.y[inside].astype(np.int64) * w + stream.x[inside].astype(np.int64)
        pos = (t - t0) / (t1 - t0) * bins - 0.5  # position in bin-center units
        pos = np.clip(pos, 0.0, bins - 1.0)
        lo = np.floor(pos).astype(np.int64)
        lo = np.minimum(lo, bins - 2) if bins > 1 else lo
        w_hi = pos - lo
        np.add.at(grid, lo * h * w + pix, pol * (1.0 - w_hi))
        if bins > 1:
            np.add.at(grid, (lo + 1) * h * w + pix, pol * w_hi)
    return VoxelGrid(bins=bins, height=h, width=w, values=grid.reshape(bins, h, w))
