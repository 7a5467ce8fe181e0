import numpy as np
import pytest

from evsynth import (
    Pose,
    fit_pose_spline,
    query_pose,
    sample_poses,
    uniform_timestamps,
    adaptive_timestamps,
    detect_and_cut,
)
from evsynth.trajectory import quat_angle_between, quat_yaw


def yaw_quat(angle):
    return np.array([np.cos(angle / 2), 0.0, 0.0, np.sin(angle / 2)])


def line_spline(p0, p1, t0=0, t1=100_000):
    return fit_pose_spline(
        [Pose(p0, [1, 0, 0, 0]), Pose(p1, [1, 0, 0, 0])], [t0, t1]
    )


class TestSamplePoses:
    def test_degenerate_box(self):
        poses = sample_poses(5, ((1.0, 2.0, 3.0), (1.0, 2.0, 3.0)), 0)
        for p in poses:
            assert np.array_equal(p.translation, [1.0, 2.0, 3.0])

    def test_uniform_translation_stats(self):
        poses = sample_poses(100_000, ((0, 0, 0), (1, 1, 1)), 42)
        trans = np.stack([p.translation for p in poses])
        assert np.all(np.abs(trans.mean(axis=0) - 0.5) < 0.01)

    def test_rotation_uniformity(self):
        poses = sample_poses(100_000, ((0, 0, 0), (1, 1, 1)), 7)
        quats = np.stack([p.rotation for p in poses])
        fixed = np.array([0.5, 0.5, 0.5, 0.5])
        assert abs((quats @ fixed).mean()) < 0.01

    def test_rejects_small_n(self):
        with pytest.raises(ValueError):
            sample_poses(1, ((0, 0, 0), (1, 1, 1)), 0)

    def test_deterministic(self):
        a = sample_poses(10, ((0, 0, 0), (1, 1, 1)), 5)
        b = sample_poses(10, ((0, 0, 0), (1, 1, 1)), 5)
        assert all(np.array_equal(x.translation, y.translation) for x, y in zip(a, b))


class TestPoseSpline:
    def test_exact_at_knots(self):
        g = np.random.default_rng(1)
        poses = sample_poses(6, ((-5, -5, -5), (5, 5, 5)), 3)
        times = np.cumsum(g.integers(500, 5000, 6)).tolist()
        sp = fit_pose_spline(poses, times)
        for pose, t in zip(poses, times):
            q = query_pose(sp, t)
            assert np.linalg.norm(q.translation - pose.translation) <= 1e-9
            assert abs(abs(np.dot(q.rotation, pose.rotation)) - 1.0) <= 1e-9

    def test_two_knot_linear_midpoint(self):
        sp = line_spline([0, 0, 0], [1, 0, 0])
        mid = query_pose(sp, 50_000)
        assert np.allclose(mid.translation, [0.5, 0, 0], atol=1e-12)

    def test_slerp_midpoint_45_deg(self):
        sp = fit_pose_spline(
            [Pose([0, 0, 0], [1, 0, 0, 0]), Pose([0, 0, 0], yaw_quat(np.pi / 2))],
            [0, 1000],
        )
        mid = query_pose(sp, 500)
        assert abs(quat_yaw(mid.rotation) - np.pi / 4) < 1e-6

    def test_duplicate_times_rejected(self):
        with pytest.raises(ValueError):
            fit_pose_spline(
                [Pose([0, 0, 0], [1, 0, 0, 0])] * 3, [0, 1000, 1000]
            )

    def test_domain_errors_and_cut_end(self):
        sp = line_spline([0, 0, 0], [1, 0, 0], 0, 10_000)
        sp.end_time = 6_000
        query_pose(sp, 6_000)  # closed domain end
        with pytest.raises(ValueError):
            query_pose(sp, 6_001)
        with pytest.raises(ValueError):
            query_pose(sp, -1)

    def test_between_knots_stays_near_controls(self):
        # dense evaluation against the active controls' box, inflated for
        # the catmull-rom overshoot
        g = np.random.default_rng(6)
        poses = sample_poses(8, ((-10, -10, -10), (10, 10, 10)), 9)
        times = np.cumsum(g.integers(1000, 4000, 8)).tolist()
        sp = fit_pose_spline(poses, times)
        trans = np.stack([p.translation for p in poses])
        for seg in range(7):
            lo_i, hi_i = max(seg - 1, 0), min(seg + 2, 7)
            box_lo = trans[lo_i : hi_i + 1].min(axis=0)
            box_hi = trans[lo_i : hi_i + 1].max(axis=0)
            pad = 0.5 * (box_hi - box_lo) + 1e-9
            for t in np.linspace(times[seg], times[seg + 1], 40):
                pt = query_pose(sp, int(t)).translation
                assert np.all(pt >= box_lo - pad) and np.all(pt <= box_hi + pad)

    def test_rotation_continuity(self):
        poses = sample_poses(5, ((0, 0, 0), (1, 1, 1)), 11)
        sp = fit_pose_spline(poses, [0, 2500, 5000, 7500, 10_000])
        # worst-case segment rate: pi rad over 2500 us
        max_rate = np.pi / 2500
        g = np.random.default_rng(2)
        for t in g.integers(0, 9_999, 200):
            a = query_pose(sp, int(t)).rotation
            b = query_pose(sp, int(t) + 1).rotation
            assert quat_angle_between(a, b) <= max_rate * 2 + 1e-9


class TestUniformTimestamps:
    def test_examples(self):
        assert uniform_timestamps(0, 1000, 3) == [0, 500, 1000]
        assert uniform_timestamps(0, 1000, 2) == [0, 1000]
        assert uniform_timestamps(0, 999, 4) == [0, 333, 666, 999]

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            uniform_timestamps(0, 1000, 1)
        with pytest.raises(ValueError):
            uniform_timestamps(5, 5, 3)


class _LinearScene:
    """Minimal displacement oracle: one corner moving at px_per_us."""

    def __init__(self, px_per_us):
        self.px_per_us = px_per_us

    def max_corner_displacement(self, ta, tb):
        return abs(tb - ta) * self.px_per_us


class TestAdaptiveTimestamps:
    def test_static_scene(self):
        assert adaptive_timestamps(_LinearScene(0.0), 0, 10_000, 2.0) == [0, 10_000]

    def test_linear_motion_spacing(self):
        # 1 px / 1000 us against a 2 px bound: steps of exactly 2000 us
        ts = adaptive_timestamps(_LinearScene(0.001), 0, 10_000, 2.0)
        assert ts == [0, 2000, 4000, 6000, 8000, 10_000]

    def test_bound_holds_on_sprite_scene(self, tmp_path):
        from evsynth import build_scene, make_texture_pool

        make_texture_pool(tmp_path, 3, 64, seed=1)
        scene = build_scene(96, 72, 2, tmp_path, duration_us=50_000, seed=3)
        bound = 1.5
        ts = adaptive_timestamps(scene, 0, 50_000, bound)
        assert ts[0] == 0 and ts[-1] == 50_000
        for a, b in zip(ts, ts[1:]):
            assert scene.max_corner_displacement(a, b) <= bound + 1e-9

    def test_rejects_bad_bound(self):
        with pytest.raises(ValueError):
            adaptive_timestamps(_LinearScene(0.0), 0, 1000, 0.0)


class TestDetectAndCut:
    def test_head_on_analytic(self):
        # closing speed 2v over gap g with radii sum s: contact at (g-s)/(2v)
        v = 0.002  # units per us
        g0, radius = 20.0, 1.5
        a = line_spline([0, 0, 0], [v * 100_000, 0, 0], 0, 100_000)
        b = line_spline([g0, 0, 0], [g0 - v * 100_000, 0, 0], 0, 100_000)
        check_dt = 500
        reports = detect_and_cut([a, b], [radius, radius], None, check_dt)
        t_true = (g0 - 2 * radius) / (2 * v)
        assert len(reports) == 1
        assert 0 <= reports[0].time - t_true <= check_dt
        assert a.end_time == reports[0].time - check_dt
        assert b.end_time == reports[0].time - check_dt
        assert reports[0].distance <= 2 * radius

    def test_parallel_no_reports(self):
        a = line_spline([0, 0, 0], [10, 0, 0])
        b = line_spline([0, 5, 0], [10, 5, 0])
        assert detect_and_cut([a, b], [1.0, 1.0], None, 1000) == []

    def test_third_body_untouched(self):
        a = line_spline([0, 0, 0], [10, 0, 0])
        b = line_spline([10, 0, 0], [0, 0, 0])
        c = line_spline([0, 50, 0], [10, 50, 0])
        end_c = c.end_time
        reports = detect_and_cut([a, b, c], [1.0, 1.0, 1.0], None, 1000)
        assert {r.pair for r in reports} == {(0, 1)}
        assert c.end_time == end_c

    def test_camera_not_cut(self):
        cam = line_spline([0, 0, 0], [10, 0, 0])
        obj = line_spline([10, 0, 0], [0, 0, 0])
        end_before = cam.end_time
        reports = detect_and_cut([cam, obj], [1.0, 1.0], 0, 1000)
        assert len(reports) == 1
        assert cam.end_time == end_before
        assert obj.end_time < end_before

    def test_order_independent(self):
        def build():
            a = line_spline([0, 0, 0], [10, 0, 0])
            b = line_spline([10, 0, 0], [0, 0, 0])
            c = line_spline([0, 3, 0], [10, 3, 0])
            return [a, b, c]

        r1 = detect_and_cut(build(), [1.0, 1.0, 1.0], None, 500)
        perm = [2, 0, 1]  # bodies reordered; map reported pairs back
        bodies = build()
        r2 = detect_and_cut([bodies[i] for i in perm], [1.0] * 3, None, 500)
        back = {new: old for new, old in enumerate(perm)}
        mapped = {(tuple(sorted((back[i], back[j]))), t.time) for t in r2 for i, j in [t.pair]}
        assert {(tuple(sorted(r.pair)), r.time) for r in r1} == mapped
