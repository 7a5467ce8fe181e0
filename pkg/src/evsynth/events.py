"""Core event-camera model: domain types and threshold-crossing generation.

A pixel holds a reference log intensity (the level memorized at its last
event). Between two frames the log signal is modeled as linear in time; an
event of polarity +1/-1 fires each time the signal crosses
``ref + k * c_pos`` / ``ref - k * c_neg`` (k = 1, 2, ...), after which the
reference advances by exactly the crossed threshold. This staircase is the
noise-free backbone; per-pixel threshold variation, timestamp jitter,
refractory filtering and background noise are layered on top by
:mod:`evsynth.emulators`.

Times are integer microseconds. Within a frame pair (t0, t1], crossing
times are quantized to whole microseconds and per-pixel times are kept
strictly increasing by bumping collisions forward 1 us (events pushed past
t1 are dropped; a physical pixel cannot fire faster than the clock).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Literal, Sequence

import numpy as np

from . import rng

__all__ = [
    "Event",
    "EventStream",
    "LogFrame",
    "PixelState",
    "EmulatorConfig",
    "log_transform",
    "generate_events_pair",
    "simulate_sequence",
]


@dataclass
class Event:
    """A single polarity impulse: time (us), column, row, polarity in {-1, +1}."""

    t: int
    x: int
    y: int
    p: int


@dataclass
class EventStream:
    """Columnar event storage with the sensor geometry.

    Events are kept sorted by time (ties broken by y, x, p) and timestamps
    are strictly increasing per pixel. Columns: t int64 (us), x/y uint16,
    p int8.
    """

    width: int
    height: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        return cls(
            width,
            height,
            np.empty(0, np.int64),
            np.empty(0, np.uint16),
            np.empty(0, np.uint16),
            np.empty(0, np.int8),
        )

    @classmethod
    def from_arrays(cls, width, height, t, x, y, p) -> "EventStream":
        return cls(
            int(width),
            int(height),
            np.asarray(t, np.int64),
            np.asarray(x, np.uint16),
            np.asarray(y, np.uint16),
            np.asarray(p, np.int8),
        )

    @classmethod
    def from_events(cls, width: int, height: int, events: Sequence[Event]) -> "EventStream":
        return cls.from_arrays(
            width,
            height,
            [e.t for e in events],
            [e.x for e in events],
            [e.y for e in events],
            [e.p for e in events],
        )

    def __len__(self) -> int:
        return self.t.shape[0]

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )

    def pixel_index(self) -> np.ndarray:
        """Flattened row-major pixel index per event."""
        return self.y.astype(np.int64) * self.width + self.x.astype(np.int64)

    def canonical_sort(self) -> "EventStream":
        """Sort by (t, y, x, p); the canonical on-disk and in-memory order."""
        order = np.lexsort((self.p, self.x, self.y, self.t))
        return EventStream(
            self.width, self.height, self.t[order], self.x[order], self.y[order], self.p[order]
        )

    def dedupe_pixel_ties(self) -> "EventStream":
        """Drop events sharing (x, y, t) with an earlier one (canonical order kept)."""
        if len(self) < 2:
            return self
        same = (
            (self.t[1:] == self.t[:-1])
            & (self.x[1:] == self.x[:-1])
            & (self.y[1:] == self.y[:-1])
        )
        keep = np.r_[True, ~same]
        return EventStream(
            self.width, self.height, self.t[keep], self.x[keep], self.y[keep], self.p[keep]
        )

    def validate(self) -> None:
        """Raise ValueError on any violated stream invariant."""
        n = len(self)
        if not (self.x.shape[0] == self.y.shape[0] == self.p.shape[0] == n):
            raise ValueError("event columns have mismatched lengths")
        if n == 0:
            return
        if self.t.min() < 0:
            raise ValueError("event timestamps must be >= 0")
        if self.x.max(initial=0) >= self.width or self.y.max(initial=0) >= self.height:
            raise ValueError("event coordinates out of sensor bounds")
        if not np.isin(self.p, (-1, 1)).all():
            raise ValueError("event polarity must be -1 or +1")
        if np.any(np.diff(self.t) < 0):
            raise ValueError("event timestamps must be nondecreasing")
        pix = self.pixel_index()
        order = np.lexsort((self.t, pix))
        ps, ts = pix[order], self.t[order]
        if np.any((ps[1:] == ps[:-1]) & (ts[1:] <= ts[:-1])):
            raise ValueError("per-pixel timestamps must be strictly increasing")

    @staticmethod
    def concatenate(streams: Sequence["EventStream"]) -> "EventStream":
        if not streams:
            raise ValueError("need at least one stream")
        w, h = streams[0].width, streams[0].height
        for s in streams[1:]:
            if (s.width, s.height) != (w, h):
                raise ValueError("streams have mismatched sensor sizes")
        return EventStream(
            w,
            h,
            np.concatenate([s.t for s in streams]),
            np.concatenate([s.x for s in streams]),
            np.concatenate([s.y for s in streams]),
            np.concatenate([s.p for s in streams]),
        )


@dataclass
class LogFrame:
    """Per-pixel natural-log intensity at one timestamp (us)."""

    width: int
    height: int
    t: int
    values: np.ndarray  # (height, width) float64, finite

    def validate(self) -> None:
        if self.values.shape != (self.height, self.width):
            raise ValueError(
                f"log frame values have shape {self.values.shape}, "
                f"expected {(self.height, self.width)}"
            )
        if not np.isfinite(self.values).all():
            bad = np.argwhere(~np.isfinite(self.values))[0]
            raise ValueError(f"non-finite log intensity at pixel (x={bad[1]}, y={bad[0]})")


FrameSequence = Sequence[LogFrame]


@dataclass
class PixelState:
    """Per-pixel emulator memory threaded through consecutive frame pairs.

    ``ref_level`` is the log intensity memorized at each pixel's last event
    (initially the first frame); ``last_event_t`` is -1 until a pixel fires.
    The per-pixel threshold maps are sampled once per sequence so that
    repeated pair calls reproduce a whole-sequence run exactly.
    """

    ref_level: np.ndarray  # (H, W) float64
    last_event_t: np.ndarray  # (H, W) int64, -1 = never fired
    c_pos: np.ndarray  # (H, W) float64, > 0
    c_neg: np.ndarray  # (H, W) float64, > 0

    @classmethod
    def initial(cls, first: LogFrame, cfg: "EmulatorConfig", window=None) -> "PixelState":
        """State at the start of a sequence whose first frame is ``first``.

        ``window`` is the (t_first, t_last) span of the sequence; it only
        matters for spatiotemporal threshold configs, where the map is
        resampled per simulated window (derived from cfg.seed, so still a
        pure function of the inputs).
        """
        h, w = first.height, first.width
        if cfg.threshold_sigma > 0:
            map_seed = cfg.seed
            if cfg.spatiotemporal_thresholds and window is not None:
                map_seed = rng.spawn_seed(cfg.seed, rng.TAG_THRESHOLD_SEED, window[0], window[1])
            from .emulators import sample_threshold_map

            tm = sample_threshold_map(w, h, cfg.c_pos, cfg.threshold_sigma, map_seed)
            tm_neg = sample_threshold_map(
                w, h, cfg.c_neg, cfg.threshold_sigma, rng.spawn_seed(map_seed, 1)
            )
            c_pos, c_neg = tm.c_pos, tm_neg.c_neg
        else:
            c_pos = np.full((h, w), cfg.c_pos)
            c_neg = np.full((h, w), cfg.c_neg)
        return cls(
            ref_level=first.values.astype(np.float64).copy(),
            last_event_t=np.full((h, w), -1, np.int64),
            c_pos=c_pos,
            c_neg=c_neg,
        )


@dataclass(frozen=True)
class EmulatorConfig:
    """Everything the event emulator needs besides the frames themselves."""

    c_pos: float = 0.2  # ON contrast threshold, log units
    c_neg: float = 0.2  # OFF contrast threshold, log units
    threshold_sigma: float = 0.0  # per-pixel threshold std dev, log units
    spatiotemporal_thresholds: bool = False  # resample map per simulated window
    refractory_us: int = 0  # pixel dead time after an event
    timestamp_model: Literal["linear", "brownian"] = "linear"
    brownian_shape_us: float = 10_000.0  # inverse-Gaussian shape parameter (us)
    leak_rate_hz: float = 0.0  # background noise rate per pixel at reference temp
    shot_noise_scale: float = 0.0  # extra rate multiplier in dark regions
    temperature_noise: bool = False  # scale noise rates with temperature
    temperature_c: float = 25.0
    ref_temperature_c: float = 25.0
    temperature_efold_c: float = 30.0  # degC per e-fold of the noise rate
    seed: int = 0
    log_eps: float = 1e-3  # intensity floor before the log

    def __post_init__(self):
        if self.c_pos <= 0 or self.c_neg <= 0:
            raise ValueError("contrast thresholds must be > 0")
        if self.threshold_sigma < 0:
            raise ValueError("threshold_sigma must be >= 0")
        if self.refractory_us < 0:
            raise ValueError("refractory_us must be >= 0")
        if self.timestamp_model not in ("linear", "brownian"):
            raise ValueError(f"unknown timestamp model {self.timestamp_model!r}")
        if self.brownian_shape_us <= 0:
            raise ValueError("brownian_shape_us must be > 0")
        if self.leak_rate_hz < 0 or self.shot_noise_scale < 0:
            raise ValueError("noise rates must be >= 0")
        if self.temperature_efold_c <= 0:
            raise ValueError("temperature_efold_c must be > 0")
        if self.log_eps <= 0:
            raise ValueError("log_eps must be > 0")


def log_transform(frame: np.ndarray, log_eps: float, t: int = 0) -> LogFrame:
    """Map a linear-intensity frame in [0, 1] to natural-log intensity.

    Values are floored at ``log_eps`` before the log so zero intensity stays
    finite. Non-finite or negative input is rejected with the offending
    pixel named.
    """
    if log_eps <= 0:
        raise ValueError("log_eps must be > 0")
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise ValueError("expected a 2-D intensity frame")
    bad = ~np.isfinite(frame)
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise ValueError(f"non-finite intensity at pixel (x={x}, y={y})")
    neg = frame < 0
    if neg.any():
        y, x = np.argwhere(neg)[0]
        raise ValueError(f"negative intensity at pixel (x={x}, y={y})")
    h, w = frame.shape
    return LogFrame(width=w, height=h, t=int(t), values=np.log(np.maximum(frame, log_eps)))


# ---------------------------------------------------------------------------
# grouped-array helpers (contiguous groups expanded by np.repeat)


def _grouped_arange(counts: np.ndarray) -> np.ndarray:
    """0-based index within each group of the expanded array."""
    starts = np.cumsum(counts) - counts
    return np.arange(int(counts.sum()), dtype=np.int64) - np.repeat(starts, counts)


def _grouped_cumsum(values: np.ndarray, counts: np.ndarray) -> np.ndarray:
    total = np.cumsum(values)
    starts = np.cumsum(counts) - counts
    base = np.repeat(np.concatenate(([0.0], total))[starts], counts)
    return total - base


def _grouped_cummax(values: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Running maximum restarted at each group boundary."""
    if values.size == 0:
        return values
    starts = np.cumsum(counts) - counts
    base = np.repeat(values[starts], counts)
    rel = values - base  # intra-group spread only; keeps the offset trick in range
    gid = np.repeat(np.arange(counts.shape[0], dtype=np.int64), counts)
    span = int(rel.max()) - int(rel.min()) + 1
    run = np.maximum.accumulate(rel + gid * span) - gid * span
    return run + base


def _strictify_times(times: np.ndarray, counts: np.ndarray, t_max: int):
    """Force strictly-increasing times within each group; flag drops past t_max.

    times must be nondecreasing within groups. Any event bumped beyond
    ``t_max`` is marked for dropping (the interval ran out of microseconds).
    """
    k = _grouped_arange(counts)
    bumped = _grouped_cummax(times - k, counts) + k
    return bumped, bumped <= t_max


def _sample_invgauss(mu: np.ndarray, lam: float, u_norm: np.ndarray, u_acc: np.ndarray):
    """Inverse-Gaussian(mu, lam) draws from one normal + one uniform each.

    Transformation method: x from the Wald-distribution root of a chi-square
    variate, then a size-biased acceptance flip between x and mu^2/x.
    """
    nu = u_norm
    y = nu * nu
    x = mu + (mu * mu * y) / (2.0 * lam) - (mu / (2.0 * lam)) * np.sqrt(
        4.0 * mu * lam * y + mu * mu * y * y
    )
    x = np.maximum(x, 1e-12 * mu)  # guard the subtractive cancellation at tiny y
    return np.where(u_acc <= mu / (mu + x), x, (mu * mu) / x)


def _pair_event_arrays(
    vals0: np.ndarray,
    vals1: np.ndarray,
    t0: int,
    t1: int,
    state: PixelState,
    cfg: EmulatorConfig,
):
    """Vectorized threshold-crossing events for one frame pair.

    Returns columnar (t, x, y, p) sorted by (t, y, x, p) and updates
    ``state`` in place (reference levels advance by every counted crossing,
    last_event_t by the last emitted one).
    """
    h, w = vals0.shape
    dt = float(t1 - t0)
    v0 = vals0.ravel()
    v1 = vals1.ravel()
    ref = state.ref_level.ravel()
    cp = state.c_pos.ravel()
    cn = state.c_neg.ravel()
    d = v1 - v0

    with np.errstate(invalid="ignore", divide="ignore"):
        n_pos = np.floor((v1 - ref) / cp).astype(np.int64)
        n_neg = np.floor((ref - v1) / cn).astype(np.int64)
    np.clip(n_pos, 0, None, out=n_pos)
    np.clip(n_neg, 0, None, out=n_neg)

    out_t, out_pix, out_p = [], [], []
    for sign, n, c in ((1, n_pos, cp), (-1, n_neg, cn)):
        firing = np.flatnonzero(n)
        if firing.size == 0:
            continue
        counts = n[firing]
        pix = np.repeat(firing, counts)
        k = _grouped_arange(counts) + 1
        level = ref[pix] + sign * k * c[pix]
        if cfg.timestamp_model == "linear":
            frac = (level - v0[pix]) / d[pix]
            tt = np.rint(t0 + frac * dt).astype(np.int64)
        else:
            # brownian timestamps: inter-crossing gaps are inverse-Gaussian
            # with mean equal to the linear model's gap, addressed by
            # (seed, pixel, pair, crossing index) so draw order is irrelevant
            gap_first = (level - v0[pix]) / d[pix] * dt
            gap_rest = sign * c[pix] / d[pix] * dt
            mu = np.where(k == 1, gap_first, gap_rest)
            u_n = rng.normals(cfg.seed, rng.TAG_BROWNIAN, pix, t1, sign * k, 0)
            u_a = rng.uniforms(cfg.seed, rng.TAG_BROWNIAN, pix, t1, sign * k, 1)
            tau = _sample_invgauss(mu, cfg.brownian_shape_us, u_n, u_a)
            tt = np.rint(t0 + _grouped_cumsum(tau, counts)).astype(np.int64)
        np.clip(tt, t0 + 1, None, out=tt)
        tt, keep = _strictify_times(tt, counts, t1)

        # the signal really moved by n crossings: advance the reference for
        # all of them, even the (rare) ones dropped by the us clock or window
        ref[firing] += sign * counts * c[firing]

        pix_kept, tt_kept = pix[keep], tt[keep]
        if pix_kept.size:
            last = np.r_[pix_kept[1:] != pix_kept[:-1], True]
            lt = state.last_event_t.ravel()
            np.maximum.at(lt, pix_kept[last], tt_kept[last])
            out_t.append(tt_kept)
            out_pix.append(pix_kept)
            out_p.append(np.full(tt_kept.shape[0], sign, np.int8))

    if not out_t:
        return (
            np.empty(0, np.int64),
            np.empty(0, np.uint16),
            np.empty(0, np.uint16),
            np.empty(0, np.int8),
        )
    t_all = np.concatenate(out_t)
    pix_all = np.concatenate(out_pix)
    p_all = np.concatenate(out_p)
    x_all = (pix_all % w).astype(np.uint16)
    y_all = (pix_all // w).astype(np.uint16)
    order = np.lexsort((p_all, x_all, y_all, t_all))
    return t_all[order], x_all[order], y_all[order], p_all[order]


def generate_events_pair(
    prev: LogFrame, next: LogFrame, state: PixelState, cfg: EmulatorConfig
) -> tuple[list[Event], PixelState]:
    """Events from one consecutive frame pair; state is advanced in place.

    Event times lie in (prev.t, next.t]; within the pair, output is sorted
    by (t, y, x, p).
    """
    if (prev.width, prev.height) != (next.width, next.height):
        raise ValueError("frame dimensions differ within the pair")
    if state.ref_level.shape != (prev.height, prev.width):
        raise ValueError("pixel state does not match the frame dimensions")
    if prev.t >= next.t:
        raise ValueError(f"frame times must increase (got {prev.t} then {next.t})")
    t, x, y, p = _pair_event_arrays(prev.values, next.values, prev.t, next.t, state, cfg)
    events = [Event(int(t[i]), int(x[i]), int(y[i]), int(p[i])) for i in range(t.shape[0])]
    return events, state


def simulate_sequence(frames: FrameSequence, cfg: EmulatorConfig) -> EventStream:
    """Run the full emulator over a frame sequence.

    Equivalent to threading :func:`generate_events_pair` over consecutive
    pairs, merging in background noise, applying the refractory filter, and
    canonically sorting. Deterministic in (frames, cfg) including the seed.
    """
    frames = list(frames)
    if len(frames) < 2:
        raise ValueError("need at least 2 frames")
    w, h = frames[0].width, frames[0].height
    times = []
    for f in frames:
        if (f.width, f.height) != (w, h):
            raise ValueError("all frames must share one resolution")
        times.append(f.t)
    times = np.asarray(times, np.int64)
    if np.any(np.diff(times) <= 0):
        raise ValueError("frame timestamps must be strictly increasing")

    return _simulate_prepared(
        ((f.values, f.t) for f in frames), times, w, h, cfg, first_values=frames[0].values
    )


def _simulate_prepared(value_time_iter, times, w, h, cfg, first_values) -> EventStream:
    """Shared driver for in-memory and streamed (file-backed) sequences."""
    window = (int(times[0]), int(times[-1]))
    state = PixelState.initial(
        LogFrame(w, h, window[0], np.asarray(first_values, np.float64)), cfg, window=window
    )

    chunks_t, chunks_x, chunks_y, chunks_p = [], [], [], []
    prev_vals = None
    prev_t = None
    for vals, t in value_time_iter:
        vals = np.asarray(vals, np.float64)
        if prev_vals is not None:
            t_arr, x_arr, y_arr, p_arr = _pair_event_arrays(
                prev_vals, vals, prev_t, t, state, cfg
            )
            if t_arr.shape[0]:
                chunks_t.append(t_arr)
                chunks_x.append(x_arr)
                chunks_y.append(y_arr)
                chunks_p.append(p_arr)
        prev_vals, prev_t = vals, t

    if chunks_t:
        signal = EventStream(
            w,
            h,
            np.concatenate(chunks_t),
            np.concatenate(chunks_x),
            np.concatenate(chunks_y),
            np.concatenate(chunks_p),
        )
    else:
        signal = EventStream.empty(w, h)

    if cfg.leak_rate_hz > 0:
        from .emulators import NoiseModel, inject_noise_events

        # noise rate depends on scene brightness; the first frame stands in
        # for the whole window (adequate at the durations simulated here)
        illum = np.clip(np.exp(np.asarray(first_values, np.float64)), 0.0, 1.0)
        noise = inject_noise_events(
            w,
            h,
            window[0],
            window[1],
            NoiseModel.from_config(cfg),
            illum,
            rng.spawn_seed(cfg.seed, rng.TAG_NOISE_COUNT),
        )
        merged = EventStream.concatenate([signal, noise]).canonical_sort()
    else:
        # per-pair blocks are time-disjoint, so concatenation is already
        # globally sorted; noise-free runs skip the full sort
        merged = signal

    if cfg.refractory_us > 0:
        from .emulators import apply_refractory

        merged = apply_refractory(merged, cfg.refractory_us)
    else:
        merged = merged.dedupe_pixel_ties()
    return merged
