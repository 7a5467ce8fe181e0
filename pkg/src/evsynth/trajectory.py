"""6-DoF trajectory sampling, spline interpolation, and collision cutting.

Translations follow a centripetal Catmull-Rom spline through the control
poses (one-sided tangents at the ends); rotations follow piecewise
spherical interpolation over sign-aligned unit quaternions (w, x, y, z).
Both pass exactly through every control pose at its knot time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

__all__ = [
    "Pose",
    "PoseSpline",
    "CollisionReport",
    "sample_poses",
    "fit_pose_spline",
    "query_pose",
    "uniform_timestamps",
    "adaptive_timestamps",
    "detect_and_cut",
    "quat_multiply",
    "quat_conjugate",
    "quat_rotate",
    "quat_slerp",
    "quat_yaw",
]


# --- quaternion helpers (w, x, y, z) ---------------------------------------


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q, v):
    """Rotate 3-vectors (..., 3) by a unit quaternion."""
    v = np.asarray(v, np.float64)
    qv = np.asarray(q[1:4], np.float64)
    w = float(q[0])
    uv = np.cross(qv, v)
    uuv = np.cross(qv, uv)
    return v + 2.0 * (w * uv + uuv)


def quat_slerp(q0, q1, s: float):
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -np.asarray(q1)
        dot = -dot
    if dot > 1.0 - 1e-12:
        out = q0 + s * (np.asarray(q1) - q0)
        return out / np.linalg.norm(out)
    omega = np.arccos(np.clip(dot, -1.0, 1.0))
    so = np.sin(omega)
    out = (np.sin((1.0 - s) * omega) / so) * np.asarray(q0) + (np.sin(s * omega) / so) * np.asarray(q1)
    return out / np.linalg.norm(out)


def quat_yaw(q) -> float:
    """Rotation about +z (rad) of a unit quaternion."""
    w, x, y, z = q
    return float(np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z)))


def quat_angle_between(q0, q1) -> float:
    d = abs(float(np.dot(q0, q1)))
    return 2.0 * np.arccos(np.clip(d, -1.0, 1.0))


@dataclass
class Pose:
    """Rigid pose: translation (scene units) and unit quaternion rotation."""

    translation: np.ndarray
    rotation: np.ndarray  # (w, x, y, z), |q| = 1

    def __post_init__(self):
        self.translation = np.asarray(self.translation, np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, np.float64).reshape(4)
        n = np.linalg.norm(self.rotation)
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"quaternion norm {n} is not 1 within 1e-9")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    def inverse(self) -> "Pose":
        qc = quat_conjugate(self.rotation)
        return Pose(-quat_rotate(qc, self.translation), qc)

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other: (self o other)(p) = self(other(p))."""
        q = quat_multiply(self.rotation, other.rotation)
        q = q / np.linalg.norm(q)
        return Pose(quat_rotate(self.rotation, other.translation) + self.translation, q)

    def transform(self, points):
        return quat_rotate(self.rotation, points) + self.translation


@dataclass
class CollisionReport:
    time: int  # us
    pair: tuple[int, int]  # indices of the colliding bodies
    distance: float  # center distance at detection, scene units


@dataclass
class PoseSpline:
    """Continuous pose trajectory through control poses at knot times (us).

    The query domain is [knot_times[0], end_time]; ``end_time`` starts at
    the last knot and may be shortened by collision cutting.
    """

    knot_times: np.ndarray  # int64, strictly increasing
    translations: np.ndarray  # (n, 3)
    quaternions: np.ndarray  # (n, 4), consecutive rows sign-aligned
    end_time: int
    _tangents: np.ndarray = field(repr=False, default=None)
    _dc: np.ndarray = field(repr=False, default=None)

    @property
    def control_poses(self) -> list[Pose]:
        return [Pose(self.translations[i], self.quaternions[i]) for i in range(len(self.knot_times))]

    @property
    def start_time(self) -> int:
        return int(self.knot_times[0])

    def query(self, t: int) -> Pose:
        return query_pose(self, t)

    def query_clamped(self, t: int) -> Pose:
        """Pose with time clamped into the domain (cut bodies freeze)."""
        return query_pose(self, min(max(int(t), self.start_time), self.end_time))


def sample_poses(n: int, translation_bounds, seed: int) -> list[Pose]:
    """n poses with translations uniform in a box and rotations uniform on SO(3)."""
    if n < 2:
        raise ValueError("need at least 2 poses")
    lo, hi = (np.asarray(b, np.float64).reshape(3) for b in translation_bounds)
    if np.any(hi < lo):
        raise ValueError("translation bounds must satisfy min <= max per axis")
    g = np.random.default_rng(seed)
    trans = g.uniform(0.0, 1.0, (n, 3)) * (hi - lo) + lo
    # uniform unit quaternions from three uniforms (subgroup algorithm)
    u1, u2, u3 = g.uniform(0.0, 1.0, (3, n))
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    quats = np.stack(
        [b * np.cos(2 * np.pi * u3), a * np.sin(2 * np.pi * u2), a * np.cos(2 * np.pi * u2), b * np.sin(2 * np.pi * u3)],
        axis=1,
    )
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return [Pose(trans[i], quats[i]) for i in range(n)]


def fit_pose_spline(poses: Sequence[Pose], knot_times) -> PoseSpline:
    """Interpolating spline through poses at strictly increasing times (us)."""
    knot_times = np.asarray(knot_times, np.int64)
    if len(poses) != knot_times.shape[0]:
        raise ValueError("pose and knot-time counts differ")
    if knot_times.shape[0] < 2:
        raise ValueError("need at least 2 knots")
    if np.any(np.diff(knot_times) <= 0):
        raise ValueError("knot times must be strictly increasing (no duplicates)")

    trans = np.stack([p.translation for p in poses])
    quats = np.stack([p.rotation for p in poses]).astype(np.float64)
    for i in range(1, quats.shape[0]):  # sign-align so slerp takes the short arc
        if np.dot(quats[i - 1], quats[i]) < 0:
            quats[i] = -quats[i]

    # centripetal parameterization: sqrt of chord length per segment
    chord = np.linalg.norm(np.diff(trans, axis=0), axis=1)
    dc = np.maximum(np.sqrt(chord), 1e-9)
    n = trans.shape[0]
    tangents = np.zeros_like(trans)
    tangents[0] = (trans[1] - trans[0]) / dc[0]
    tangents[-1] = (trans[-1] - trans[-2]) / dc[-1]
    for i in range(1, n - 1):
        tangents[i] = (
            (trans[i + 1] - trans[i]) / dc[i]
            + (trans[i] - trans[i - 1]) / dc[i - 1]
            - (trans[i + 1] - trans[i - 1]) / (dc[i] + dc[i - 1])
        )

    return PoseSpline(
        knot_times=knot_times,
        translations=trans,
        quaternions=quats,
        end_time=int(knot_times[-1]),
        _tangents=tangents,
        _dc=dc,
    )


def query_pose(spline: PoseSpline, t: int) -> Pose:
    """Pose at time t; rejects t outside [first knot, end_time]."""
    t = int(t)
    kt = spline.knot_times
    if t < kt[0] or t > spline.end_time:
        raise ValueError(f"time {t} outside spline domain [{kt[0]}, {spline.end_time}]")
    i = int(np.searchsorted(kt, t, side="right")) - 1
    i = min(max(i, 0), kt.shape[0] - 2)
    s = (t - kt[i]) / float(kt[i + 1] - kt[i])

    p0, p1 = spline.translations[i], spline.translations[i + 1]
    m0 = spline._tangents[i] * spline._dc[i]
    m1 = spline._tangents[i + 1] * spline._dc[i]
    s2, s3 = s * s, s * s * s
    trans = (
        (2 * s3 - 3 * s2 + 1) * p0
        + (s3 - 2 * s2 + s) * m0
        + (-2 * s3 + 3 * s2) * p1
        + (s3 - s2) * m1
    )
    rot = quat_slerp(spline.quaternions[i], spline.quaternions[i + 1], s)
    return Pose(trans, rot)


def uniform_timestamps(t0: int, t1: int, count: int) -> list[int]:
    """count evenly spaced integer-us timestamps from t0 to t1 inclusive."""
    if count < 2:
        raise ValueError("count must be >= 2")
    if t0 >= t1:
        raise ValueError("t0 must be < t1")
    ts = np.rint(np.linspace(t0, t1, count)).astype(np.int64)
    return [int(v) for v in ts]


def adaptive_timestamps(scene, t0: int, t1: int, max_disp_px: float) -> list[int]:
    """Timestamps chosen greedily so no layer corner moves more than max_disp_px.

    From each accepted time the largest step (1 us resolution, found by
    doubling then bisection) whose measured corner displacement stays within
    the bound is taken; the final timestamp is exactly t1. A motionless
    scene yields [t0, t1].
    """
    if max_disp_px <= 0:
        raise ValueError("max_disp_px must be > 0")
    if t0 >= t1:
        raise ValueError("t0 must be < t1")
    disp = scene.max_corner_displacement

    out = [int(t0)]
    t = int(t0)
    while t < t1:
        if disp(t, t1) <= max_disp_px:
            out.append(int(t1))
            break
        if disp(t, t + 1) > max_disp_px:
            out.append(t + 1)  # resolution floor: never step below 1 us
            t += 1
            continue
        h = 1
        while t + 2 * h <= t1 and disp(t, t + 2 * h) <= max_disp_px:
            h *= 2
        lo, hi = h, min(2 * h, t1 - t)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if disp(t, t + mid) <= max_disp_px:
                lo = mid
            else:
                hi = mid
        out.append(t + lo)
        t += lo
    return out


def detect_and_cut(
    splines: Sequence[PoseSpline],
    radii: Sequence[float],
    camera_index: int | None,
    check_dt: int,
) -> list[CollisionReport]:
    """Scan bounding spheres along the trajectories and cut colliders.

    Trajectories are sampled on the shared grid of step check_dt; at the
    first grid time a pair's center distance drops below the sum of its
    radii, the pair is reported and both non-camera members get
    ``end_time = time - check_dt`` (they freeze there). Cut bodies leave the
    scan; remaining pairs keep being checked. The report set is independent
    of body ordering.
    """
    if check_dt <= 0:
        raise ValueError("check_dt must be > 0")
    radii = [float(r) for r in radii]
    if len(radii) != len(splines):
        raise ValueError("radii and spline counts differ")
    if any(r <= 0 for r in radii):
        raise ValueError("radii must be > 0")

    t_start = max(s.start_time for s in splines)
    t_end = min(s.end_time for s in splines)
    reports: list[CollisionReport] = []
    active = set(range(len(splines)))

    t = t_start
    while t <= t_end:
        centers = {i: splines[i].query(t).translation for i in active}
        hit_pairs = []
        for i, j in combinations(sorted(active), 2):
            dist = float(np.linalg.norm(centers[i] - centers[j]))
            if dist < radii[i] + radii[j]:
                hit_pairs.append((i, j, dist))
        to_cut = set()
        for i, j, dist in hit_pairs:
            reports.append(CollisionReport(time=int(t), pair=(i, j), distance=dist))
            for k in (i, j):
                if k != camera_index:
                    to_cut.add(k)
        for k in to_cut:
            splines[k].end_time = max(splines[k].start_time, int(t) - check_dt)
            active.discard(k)
        t += check_dt
    return reports
