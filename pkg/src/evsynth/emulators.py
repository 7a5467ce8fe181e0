"""Composable sensor non-idealities and the three emulator personalities.

The stages here bolt onto the ideal staircase model of :mod:`evsynth.events`:

* per-pixel threshold variation (spatial, or resampled per window),
* refractory filtering (pixel dead time),
* background/leak noise, boosted in dark regions, scaled with temperature,
* first-passage ("brownian") event timestamps instead of linear ones.

Presets wire these into three personalities: ``ideal-fast`` (spatial
thresholds only, fastest), ``low-light`` (refractory + illumination-dependent
noise), and ``voltmeter`` (window-resampled thresholds, brownian timestamps,
temperature-scaled noise).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from . import rng
from .events import EmulatorConfig, EventStream, _sample_invgauss

__all__ = [
    "ThresholdMap",
    "NoiseModel",
    "sample_threshold_map",
    "apply_refractory",
    "inject_noise_events",
    "brownian_crossing_times",
    "sample_crossing_intervals",
    "make_emulator",
    "PRESET_FEATURES",
]

THRESHOLD_CLAMP = (0.01, 1.0)  # keep sampled thresholds physical


@dataclass
class ThresholdMap:
    """Per-pixel ON/OFF contrast thresholds (log units, every entry > 0)."""

    width: int
    height: int
    c_pos: np.ndarray
    c_neg: np.ndarray


@dataclass(frozen=True)
class NoiseModel:
    """Background-noise parameters, detached from the full emulator config."""

    leak_rate_hz: float
    shot_noise_scale: float
    temperature_noise: bool = False
    temperature_c: float = 25.0
    ref_temperature_c: float = 25.0
    temperature_efold_c: float = 30.0

    def __post_init__(self):
        if self.leak_rate_hz < 0 or self.shot_noise_scale < 0:
            raise ValueError("noise rates must be >= 0")

    @classmethod
    def from_config(cls, cfg: EmulatorConfig) -> "NoiseModel":
        return cls(
            leak_rate_hz=cfg.leak_rate_hz,
            shot_noise_scale=cfg.shot_noise_scale,
            temperature_noise=cfg.temperature_noise,
            temperature_c=cfg.temperature_c,
            ref_temperature_c=cfg.ref_temperature_c,
            temperature_efold_c=cfg.temperature_efold_c,
        )

    def temperature_scale(self) -> float:
        if not self.temperature_noise:
            return 1.0
        return float(np.exp((self.temperature_c - self.ref_temperature_c) / self.temperature_efold_c))

    def rate_map(self, illum: np.ndarray) -> np.ndarray:
        """Per-pixel noise rate in Hz given linear illumination in [0, 1]."""
        illum = np.clip(np.asarray(illum, np.float64), 0.0, 1.0)
        return self.leak_rate_hz * self.temperature_scale() * (
            1.0 + self.shot_noise_scale * (1.0 - illum)
        )


def sample_threshold_map(
    width: int, height: int, c_nominal: float, sigma: float, seed: int
) -> ThresholdMap:
    """Normal(c_nominal, sigma^2) per-pixel thresholds, clamped to [0.01, 1.0]."""
    if c_nominal <= 0:
        raise ValueError("c_nominal must be > 0")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        c = np.full((height, width), float(c_nominal))
    else:
        g = np.random.default_rng(seed)
        c = np.clip(g.normal(c_nominal, sigma, (height, width)), *THRESHOLD_CLAMP)
    return ThresholdMap(width=width, height=height, c_pos=c, c_neg=c.copy())


def apply_refractory(stream: EventStream, refractory_us: int) -> EventStream:
    """Drop events arriving within ``refractory_us`` of the last kept one per pixel.

    Scanning each pixel in time order, an event survives iff its time is at
    least the previous survivor's time plus the refractory period. Zero is
    the identity.
    """
    if refractory_us < 0:
        raise ValueError("refractory_us must be >= 0")
    n = len(stream)
    if refractory_us == 0 or n == 0:
        return stream

    pix = stream.pixel_index()
    order = np.lexsort((stream.t, pix))
    ps = pix[order]
    ts = stream.t[order]

    group_start = np.r_[True, ps[1:] != ps[:-1]]
    gid = np.cumsum(group_start) - 1  # dense group id per event
    n_groups = int(gid[-1]) + 1

    t_rel = ts - int(ts.min())
    span = int(t_rel.max()) + refractory_us + 2
    keep = np.zeros(n, dtype=bool)

    if n_groups * span < (1 << 62):
        # one sorted key per event lets a single searchsorted jump to the
        # next survivor candidate inside the same pixel group
        combined = gid * span + t_rel
        cur = np.flatnonzero(group_start)
        while cur.size:
            keep[cur] = True
            nxt = np.searchsorted(combined, gid[cur] * span + t_rel[cur] + refractory_us)
            ok = nxt < n
            nxt = nxt[ok]
            ok2 = gid[nxt] == gid[cur[ok]]
            cur = nxt[ok2]
    else:
        # degenerate time spans: fall back to a per-group scan
        starts = np.flatnonzero(group_start)
        ends = np.r_[starts[1:], n]
        for s, e in zip(starts, ends):
            last = None
            for i in range(s, e):
                if last is None or ts[i] >= last + refractory_us:
                    keep[i] = True
                    last = ts[i]

    kept_sorted = order[keep]
    kept_mask = np.zeros(n, dtype=bool)
    kept_mask[kept_sorted] = True
    return EventStream(
        stream.width,
        stream.height,
        stream.t[kept_mask],
        stream.x[kept_mask],
        stream.y[kept_mask],
        stream.p[kept_mask],
    )


def inject_noise_events(
    width: int,
    height: int,
    t0: int,
    t1: int,
    model: NoiseModel,
    illum: np.ndarray,
    seed: int,
) -> EventStream:
    """Poisson background events over (t0, t1], polarity fair-coin.

    Per pixel, the count is Poisson with rate
    ``leak * temp_scale * (1 + shot_scale * (1 - illum))`` over the window;
    times are uniform. Draws are addressed by (seed, pixel, index), so the
    result is identical however the work is split.
    """
    if t0 >= t1:
        raise ValueError("t0 must be < t1")
    illum = np.asarray(illum, np.float64)
    if illum.shape != (height, width):
        raise ValueError("illumination map does not match the sensor size")

    window_s = (t1 - t0) * 1e-6
    lam = (model.rate_map(illum) * window_s).ravel()
    counts = np.zeros(lam.shape[0], np.int64)
    active = np.flatnonzero(lam > 0)
    if active.size:
        # Knuth multiplication method on per-pixel hashed uniform streams;
        # rounds are bounded, so every pixel consumes an addressable prefix
        limit = np.exp(-lam[active])
        prod = np.ones(active.size)
        alive = np.arange(active.size)
        round_idx = 0
        max_rounds = int(lam.max() + 12.0 * np.sqrt(lam.max()) + 64)
        while alive.size and round_idx < max_rounds:
            u = rng.uniforms(seed, rng.TAG_NOISE_COUNT, active[alive], round_idx)
            prod[alive] = prod[alive] * u
            done = prod[alive] <= limit[alive]
            counts[active[alive[~done]]] += 1
            alive = alive[~done]
            round_idx += 1

    total = int(counts.sum())
    if total == 0:
        return EventStream.empty(width, height)

    firing = np.flatnonzero(counts)
    pix = np.repeat(firing, counts[firing])
    starts = np.cumsum(counts[firing]) - counts[firing]
    idx = np.arange(total, dtype=np.int64) - np.repeat(starts, counts[firing])

    u_t = rng.uniforms(seed, rng.TAG_NOISE_TIME, pix, idx)
    t = t0 + 1 + np.floor(u_t * (t1 - t0)).astype(np.int64)  # uniform over (t0, t1]
    u_p = rng.uniforms(seed, rng.TAG_NOISE_POLARITY, pix, idx)
    p = np.where(u_p < 0.5, -1, 1).astype(np.int8)

    stream = EventStream(
        width,
        height,
        t,
        (pix % width).astype(np.uint16),
        (pix // width).astype(np.uint16),
        p,
    )
    return stream.canonical_sort().dedupe_pixel_ties()


def sample_crossing_intervals(
    mu_us: float, shape_us: float, count: int, seed: int
) -> np.ndarray:
    """Raw inverse-Gaussian inter-crossing intervals (mean mu, shape lam).

    This is exactly the sampler behind :func:`brownian_crossing_times`; the
    k-th interval of a given seed matches the k-th gap of that call before
    quantization.
    """
    if mu_us <= 0:
        raise ValueError("mu_us must be > 0")
    if shape_us <= 0:
        raise ValueError("shape_us must be > 0")
    k = np.arange(1, count + 1, dtype=np.int64)
    u_n = rng.normals(seed, rng.TAG_BROWNIAN, 0, 0, k, 0)
    u_a = rng.uniforms(seed, rng.TAG_BROWNIAN, 0, 0, k, 1)
    return _sample_invgauss(np.full(count, float(mu_us)), float(shape_us), u_n, u_a)


def brownian_crossing_times(
    delta_l: float, threshold: float, t0: int, t1: int, shape_us: float, seed: int
) -> list[int]:
    """Threshold-crossing times (us) under the first-passage timestamp model.

    A signal drifting by ``delta_l`` over (t0, t1] crosses ``threshold``
    floor(|delta_l| / threshold) times; the gaps between crossings are
    inverse-Gaussian with mean ``(t1 - t0) * threshold / |delta_l|`` (the
    linear model's gap) and shape ``shape_us``. Crossings past t1 are
    discarded. As shape grows the gaps collapse onto the linear model.
    """
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    if t0 >= t1:
        raise ValueError("t0 must be < t1")
    if shape_us <= 0:
        raise ValueError("shape_us must be > 0")
    n = int(abs(delta_l) // threshold)
    if n == 0:
        return []
    mu = (t1 - t0) * threshold / abs(delta_l)
    tau = sample_crossing_intervals(mu, shape_us, n, seed)
    times = np.rint(t0 + np.cumsum(tau)).astype(np.int64)
    times = np.maximum(times, t0 + 1)
    times = np.maximum.accumulate(times - np.arange(n)) + np.arange(n)  # strictly increasing
    return [int(v) for v in times[times <= t1]]


# preset name -> feature matrix entry; the config built by make_emulator
# must realize exactly these features
PRESET_FEATURES: dict[str, dict] = {
    "ideal-fast": {
        "threshold": "spatial",
        "timestamps": "linear",
        "temperature_noise": False,
        "low_illumination": False,
        "refractory": False,
    },
    "low-light": {
        "threshold": "spatial",
        "timestamps": "linear",
        "temperature_noise": False,
        "low_illumination": True,
        "refractory": True,
    },
    "voltmeter": {
        "threshold": "spatiotemporal",
        "timestamps": "brownian",
        "temperature_noise": True,
        "low_illumination": False,
        "refractory": False,
    },
}

_PRESET_CONFIGS = {
    "ideal-fast": dict(
        threshold_sigma=0.03,
    ),
    "low-light": dict(
        threshold_sigma=0.03,
        refractory_us=500,
        leak_rate_hz=1.0,
        shot_noise_scale=4.0,
    ),
    "voltmeter": dict(
        threshold_sigma=0.03,
        spatiotemporal_thresholds=True,
        timestamp_model="brownian",
        leak_rate_hz=1.0,
        temperature_noise=True,
    ),
}

_PRESET_ALIASES = {"idealfast": "ideal-fast", "lowlight": "low-light"}


def config_features(cfg: EmulatorConfig) -> dict:
    """The feature-matrix row a config realizes (used to check presets)."""
    if cfg.threshold_sigma <= 0:
        threshold = "uniform"
    else:
        threshold = "spatiotemporal" if cfg.spatiotemporal_thresholds else "spatial"
    return {
        "threshold": threshold,
        "timestamps": cfg.timestamp_model,
        "temperature_noise": bool(cfg.temperature_noise and cfg.leak_rate_hz > 0),
        "low_illumination": bool(cfg.leak_rate_hz > 0 and cfg.shot_noise_scale > 0),
        "refractory": cfg.refractory_us > 0,
    }


def make_emulator(preset: str, overrides: Mapping | None = None) -> EmulatorConfig:
    """Build an EmulatorConfig for a named preset, with optional overrides."""
    key = preset.strip().lower().replace("_", "-")
    key = _PRESET_ALIASES.get(key.replace("-", ""), key)
    if key not in _PRESET_CONFIGS:
        raise ValueError(
            f"unknown preset {preset!r}; choose from {sorted(_PRESET_CONFIGS)}"
        )
    cfg = EmulatorConfig(**_PRESET_CONFIGS[key])
    if overrides:
        unknown = set(overrides) - set(cfg.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown emulator config fields: {sorted(unknown)}")
        cfg = replace(cfg, **dict(overrides))
    return cfg
