import numpy as np
import pytest

from evsynth import (
    FlowField,
    aee,
    angular_error,
    endpoint_error,
    evaluate_sequence,
    npe,
    outlier_rate,
    write_flo,
)


from oracles import scalar_metrics


def rand_fields(g, h=16, w=16, scale=6.0):
    pred = g.normal(0, scale, (h, w, 2))
    gt = g.normal(0, scale, (h, w, 2))
    mask = g.uniform(0, 1, (h, w)) > 0.2
    return pred, gt, mask


class TestEndpointError:
    def test_zero_when_equal(self):
        f = np.random.default_rng(0).normal(0, 3, (8, 8, 2))
        assert np.all(endpoint_error(f, f) == 0)

    def test_three_four_five(self):
        gt = np.zeros((4, 4, 2))
        pred = gt + np.array([3.0, 4.0])
        assert np.all(endpoint_error(pred, gt) == 5.0)

    def test_matches_scalar_loop_exactly(self):
        g = np.random.default_rng(1)
        pred, gt, _ = rand_fields(g)
        vec = endpoint_error(pred, gt)
        for y in range(16):
            for x in range(16):
                du, dv = pred[y, x] - gt[y, x]
                assert vec[y, x] == np.hypot(du, dv)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            endpoint_error(np.zeros((2, 2, 2)), np.zeros((3, 2, 2)))


class TestAeeOutlier:
    def test_large_magnitude_not_outlier(self):
        # epe 4 > 3 px but 4 < 5% of |gt| = 5: not an outlier
        gt = np.zeros((2, 2, 2))
        gt[..., 0] = 100.0
        pred = gt.copy()
        pred[..., 1] += 4.0
        assert outlier_rate(pred, gt) == 0.0
        assert aee(pred, gt) == pytest.approx(4.0)

    def test_small_magnitude_outlier(self):
        # epe 4 > 3 px and 4 > 5% of |gt| = 0.5: outlier
        gt = np.zeros((2, 2, 2))
        gt[..., 0] = 10.0
        pred = gt.copy()
        pred[..., 1] += 4.0
        assert outlier_rate(pred, gt) == 100.0

    def test_perfect_prediction(self):
        gt = np.random.default_rng(2).normal(0, 5, (6, 6, 2))
        assert outlier_rate(gt, gt) == 0.0

    def test_empty_mask(self):
        z = np.zeros((2, 2, 2))
        with pytest.raises(ValueError, match="undefined"):
            aee(z, z, np.zeros((2, 2), bool))
        assert outlier_rate(z, z, np.zeros((2, 2), bool)) == 0.0


class TestAngularError:
    def test_zero_when_equal(self):
        f = np.random.default_rng(3).normal(0, 2, (5, 5, 2))
        assert angular_error(f, f) == pytest.approx(0.0, abs=1e-6)

    def test_sixty_degrees(self):
        # (1,0,1).(0,1,1) / 2 = 1/2 -> 60 deg
        pred = np.zeros((3, 3, 2))
        pred[..., 0] = 1.0
        gt = np.zeros((3, 3, 2))
        gt[..., 1] = 1.0
        assert angular_error(pred, gt) == pytest.approx(60.0, abs=1e-9)

    def test_both_zero_flow(self):
        z = np.zeros((2, 2, 2))
        assert angular_error(z, z) == 0.0


class TestNpe:
    def test_zero_when_equal(self):
        f = np.random.default_rng(4).normal(0, 2, (5, 5, 2))
        for n in (1, 2, 3):
            assert npe(f, f, n=n) == 0.0

    def test_uniform_epe(self):
        gt = np.zeros((4, 4, 2))
        pred = gt + np.array([1.5, 2.0])  # epe 2.5 everywhere
        assert npe(pred, gt, n=1) == 100.0
        assert npe(pred, gt, n=2) == 100.0
        assert npe(pred, gt, n=3) == 0.0

    def test_monotone_in_n(self):
        g = np.random.default_rng(5)
        pred, gt, mask = rand_fields(g)
        assert npe(pred, gt, mask, 1) >= npe(pred, gt, mask, 2) >= npe(pred, gt, mask, 3)

    def test_rejects_bad_n(self):
        with pytest.raises(ValueError):
            npe(np.zeros((2, 2, 2)), np.zeros((2, 2, 2)), n=0)


class TestOracleAndInvariants:
    def test_matches_scalar_loop(self):
        g = np.random.default_rng(6)
        for _ in range(10):
            pred, gt, mask = rand_fields(g)
            ref = scalar_metrics(pred, gt, mask)
            assert aee(pred, gt, mask) == pytest.approx(ref["aee"], rel=1e-6)
            assert outlier_rate(pred, gt, mask) == pytest.approx(ref["outlier_pct"], rel=1e-6, abs=1e-9)
            assert angular_error(pred, gt, mask) == pytest.approx(ref["ae_deg"], rel=1e-6)
            for n in (1, 2, 3):
                assert npe(pred, gt, mask, n) == pytest.approx(ref["npe"][n], rel=1e-6, abs=1e-9)

    def test_outlier_bounded_by_3pe(self):
        g = np.random.default_rng(7)
        for _ in range(20):
            pred, gt, mask = rand_fields(g, scale=float(g.uniform(0.5, 30)))
            assert outlier_rate(pred, gt, mask) <= npe(pred, gt, mask, 3) + 1e-12

    def test_permutation_invariance(self):
        g = np.random.default_rng(8)
        pred, gt, mask = rand_fields(g)
        perm = g.permutation(16 * 16)
        ps = pred.reshape(-1, 2)[perm].reshape(16, 16, 2)
        gs = gt.reshape(-1, 2)[perm].reshape(16, 16, 2)
        ms = mask.reshape(-1)[perm].reshape(16, 16)
        assert aee(ps, gs, ms) == pytest.approx(aee(pred, gt, mask), rel=1e-12)
        assert outlier_rate(ps, gs, ms) == outlier_rate(pred, gt, mask)
        assert angular_error(ps, gs, ms) == pytest.approx(angular_error(pred, gt, mask), rel=1e-12)


def flow_from(arr, valid=None):
    h, w = arr.shape[:2]
    return FlowField(
        width=w,
        height=h,
        u=arr[..., 0],
        v=arr[..., 1],
        valid=np.ones((h, w), bool) if valid is None else valid,
        occluded=np.zeros((h, w), bool),
    )


class TestEvaluateSequence:
    def write_pair(self, d, name, pred, gt, occ=None):
        (d / "pred").mkdir(exist_ok=True)
        (d / "gt").mkdir(exist_ok=True)
        write_flo(d / "pred" / name, flow_from(pred))
        write_flo(d / "gt" / name, flow_from(gt))
        if occ is not None:
            np.save((d / "gt" / name).with_suffix(".occ.npy"), occ)

    def test_identical_dirs_zero_report(self, tmp_path):
        g = np.random.default_rng(9)
        f = g.normal(0, 2, (8, 8, 2)).astype(np.float32).astype(np.float64)
        self.write_pair(tmp_path, "000000.flo", f, f)
        rep = evaluate_sequence(tmp_path / "pred", tmp_path / "gt")
        assert rep.aee == 0.0 and rep.outlier_pct == 0.0 and rep.ae_deg == 0.0
        assert rep.n_valid == 64 and rep.frames == 1

    def test_single_frame_equals_direct(self, tmp_path):
        g = np.random.default_rng(10)
        pred = np.round(g.normal(0, 3, (8, 8, 2)), 3)
        gt = np.round(g.normal(0, 3, (8, 8, 2)), 3)
        self.write_pair(tmp_path, "000000.flo", pred, gt)
        rep = evaluate_sequence(tmp_path / "pred", tmp_path / "gt")
        # .flo is float32; compare against metrics of the stored precision
        p32 = pred.astype(np.float32).astype(np.float64)
        g32 = gt.astype(np.float32).astype(np.float64)
        assert rep.aee == pytest.approx(aee(p32, g32), rel=1e-12)

    def test_pixel_weighted_aggregation(self, tmp_path):
        # frame A: 100 valid px with epe 1; frame B: 300 valid px with epe 2
        # pixel-weighted AEE = (100*1 + 300*2) / 400 = 1.75
        gt_a = np.zeros((10, 10, 2))
        pred_a = gt_a + np.array([1.0, 0.0])
        gt_b = np.zeros((300, 1, 2))
        pred_b = gt_b + np.array([2.0, 0.0])
        self.write_pair(tmp_path, "000000.flo", pred_a, gt_a)
        self.write_pair(tmp_path, "000001.flo", pred_b, gt_b)
        rep = evaluate_sequence(tmp_path / "pred", tmp_path / "gt")
        assert rep.aee == pytest.approx(1.75)
        assert rep.n_valid == 400 and rep.frames == 2
        rep_fw = evaluate_sequence(tmp_path / "pred", tmp_path / "gt", frame_weighted=True)
        assert rep_fw.aee == pytest.approx(1.5)

    def test_missing_files_itemized(self, tmp_path):
        g = np.zeros((4, 4, 2))
        self.write_pair(tmp_path, "000000.flo", g, g)
        write_flo(tmp_path / "gt" / "000001.flo", flow_from(g))
        write_flo(tmp_path / "pred" / "000002.flo", flow_from(g))
        with pytest.raises(ValueError) as exc:
            evaluate_sequence(tmp_path / "pred", tmp_path / "gt")
        assert "missing prediction for 000001.flo" in str(exc.value)
        assert "prediction 000002.flo has no ground truth" in str(exc.value)

    def test_mask_policy_changes_n_valid(self, tmp_path):
        g = np.random.default_rng(11)
        pred = g.normal(0, 2, (8, 8, 2))
        gt = g.normal(0, 2, (8, 8, 2))
        occ = np.zeros((8, 8), bool)
        occ[:2] = True
        self.write_pair(tmp_path, "000000.flo", pred, gt, occ=occ)
        rep_v = evaluate_sequence(tmp_path / "pred", tmp_path / "gt", mask_policy="valid")
        rep_n = evaluate_sequence(
            tmp_path / "pred", tmp_path / "gt", mask_policy="valid-nonoccluded"
        )
        assert rep_v.n_valid == 64 and rep_n.n_valid == 48

    def test_report_json_schema(self, tmp_path):
        import json

        f = np.zeros((4, 4, 2))
        self.write_pair(tmp_path, "000000.flo", f, f)
        rep = evaluate_sequence(tmp_path / "pred", tmp_path / "gt")
        doc = json.loads(rep.to_json())
        assert set(doc) == {"aee", "outlier_pct", "ae_deg", "npe", "n_valid", "frames"}
        assert set(doc["npe"]) == {"1", "2", "3"}
