"""Flow-accuracy metrics over validity masks, plus directory-level reports.

All metrics reduce per-pixel quantities under a boolean mask:

* endpoint error (EPE): Euclidean distance between flow vectors,
* AEE: masked mean EPE,
* outlier rate: percent with EPE > 3 px AND EPE > 5% of the true magnitude,
* angular error: angle between homogeneous (u, v, 1) directions, degrees,
* N-PE: percent with EPE > N px.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .scene import FlowField

__all__ = [
    "EvalReport",
    "endpoint_error",
    "aee",
    "outlier_rate",
    "angular_error",
    "npe",
    "evaluate_sequence",
]

OUTLIER_ABS_PX = 3.0
OUTLIER_REL = 0.05
NPE_LEVELS = (1, 2, 3)


@dataclass
class EvalReport:
    aee: float
    outlier_pct: float
    ae_deg: float
    npe: dict[int, float]
    n_valid: int
    frames: int = 1

    def to_dict(self) -> dict:
        return {
            "aee": self.aee,
            "outlier_pct": self.outlier_pct,
            "ae_deg": self.ae_deg,
            "npe": {str(k): v for k, v in self.npe.items()},
            "n_valid": self.n_valid,
            "frames": self.frames,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _uv(flow) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(flow, FlowField):
        return np.asarray(flow.u, np.float64), np.asarray(flow.v, np.float64)
    arr = np.asarray(flow, np.float64)
    return arr[..., 0], arr[..., 1]


def _check(pred, gt, mask):
    pu, pv = _uv(pred)
    gu, gv = _uv(gt)
    if pu.shape != gu.shape:
        raise ValueError(f"pred shape {pu.shape} != gt shape {gu.shape}")
    if mask is None:
        mask = np.ones(pu.shape, bool)
    else:
        mask = np.asarray(mask, bool)
        if mask.shape != pu.shape:
            raise ValueError(f"mask shape {mask.shape} != flow shape {pu.shape}")
    return pu, pv, gu, gv, mask


def endpoint_error(pred, gt, mask=None) -> np.ndarray:
    """Per-pixel EPE in px; entries outside the mask are 0."""
    pu, pv, gu, gv, mask = _check(pred, gt, mask)
    epe = np.hypot(pu - gu, pv - gv)
    return np.where(mask, epe, 0.0)


def aee(pred, gt, mask=None) -> float:
    """Masked mean endpoint error; undefined (raises) on an empty mask."""
    pu, pv, gu, gv, mask = _check(pred, gt, mask)
    if not mask.any():
        raise ValueError("aee is undefined on an empty mask")
    return float(np.hypot(pu - gu, pv - gv)[mask].mean())


def outlier_rate(pred, gt, mask=None) -> float:
    """Percent of masked pixels with EPE > 3 px and EPE > 5% of |gt|."""
    pu, pv, gu, gv, mask = _check(pred, gt, mask)
    if not mask.any():
        return 0.0
    epe = np.hypot(pu - gu, pv - gv)[mask]
    mag = np.hypot(gu, gv)[mask]
    bad = (epe > OUTLIER_ABS_PX) & (epe > OUTLIER_REL * mag)
    return 100.0 * float(bad.mean())


def _angle_deg(pu, pv, gu, gv) -> np.ndarray:
    # angle between (pu, pv, 1) and (gu, gv, 1) via atan2(|cross|, dot):
    # identical to arccos of the normalized dot but exact at equality and
    # well-conditioned for small angles
    cx = pv - gv
    cy = gu - pu
    cz = pu * gv - pv * gu
    cross = np.sqrt(cx * cx + cy * cy + cz * cz)
    dot = pu * gu + pv * gv + 1.0
    return np.degrees(np.arctan2(cross, dot))


def angular_error(pred, gt, mask=None) -> float:
    """Masked mean angle (deg) between homogeneous (u, v, 1) directions.

    The appended 1 keeps zero flow well-defined: two zero vectors agree at
    0 degrees.
    """
    pu, pv, gu, gv, mask = _check(pred, gt, mask)
    if not mask.any():
        return 0.0
    return float(_angle_deg(pu, pv, gu, gv)[mask].mean())


def npe(pred, gt, mask=None, n: float = 1) -> float:
    """Percent of masked pixels with EPE greater than n px."""
    if n <= 0:
        raise ValueError("n must be > 0")
    pu, pv, gu, gv, mask = _check(pred, gt, mask)
    if not mask.any():
        return 0.0
    epe = np.hypot(pu - gu, pv - gv)[mask]
    return 100.0 * float((epe > n).mean())


@dataclass
class _Accumulator:
    """Per-pixel sums so frame aggregation stays associative."""

    sum_epe: float = 0.0
    sum_ang: float = 0.0
    n_outlier: int = 0
    n_npe: dict = field(default_factory=lambda: {k: 0 for k in NPE_LEVELS})
    n: int = 0
    frames: int = 0
    # frame-weighted alternative
    frame_aee: list = field(default_factory=list)
    frame_out: list = field(default_factory=list)
    frame_ang: list = field(default_factory=list)
    frame_npe: dict = field(default_factory=lambda: {k: [] for k in NPE_LEVELS})

    def add(self, pred, gt, mask):
        pu, pv, gu, gv, mask = _check(pred, gt, mask)
        self.frames += 1
        if not mask.any():
            return
        epe = np.hypot(pu - gu, pv - gv)[mask]
        mag = np.hypot(gu, gv)[mask]
        ang = _angle_deg(pu, pv, gu, gv)[mask]
        out = (epe > OUTLIER_ABS_PX) & (epe > OUTLIER_REL * mag)

        self.sum_epe += float(epe.sum())
        self.sum_ang += float(ang.sum())
        self.n_outlier += int(out.sum())
        for k in NPE_LEVELS:
            self.n_npe[k] += int((epe > k).sum())
        self.n += int(epe.shape[0])

        self.frame_aee.append(float(epe.mean()))
        self.frame_out.append(100.0 * float(out.mean()))
        self.frame_ang.append(float(ang.mean()))
        for k in NPE_LEVELS:
            self.frame_npe[k].append(100.0 * float((epe > k).mean()))

    def report(self, frame_weighted: bool = False) -> EvalReport:
        if self.n == 0:
            return EvalReport(0.0, 0.0, 0.0, {k: 0.0 for k in NPE_LEVELS}, 0, self.frames)
        if frame_weighted:
            return EvalReport(
                aee=float(np.mean(self.frame_aee)),
                outlier_pct=float(np.mean(self.frame_out)),
                ae_deg=float(np.mean(self.frame_ang)),
                npe={k: float(np.mean(self.frame_npe[k])) for k in NPE_LEVELS},
                n_valid=self.n,
                frames=self.frames,
            )
        return EvalReport(
            aee=self.sum_epe / self.n,
            outlier_pct=100.0 * self.n_outlier / self.n,
            ae_deg=self.sum_ang / self.n,
            npe={k: 100.0 * self.n_npe[k] / self.n for k in NPE_LEVELS},
            n_valid=self.n,
            frames=self.frames,
        )


def evaluate_sequence(
    pred_dir,
    gt_dir,
    mask_policy: str = "valid",
    frame_weighted: bool = False,
) -> EvalReport:
    """Aggregate metrics over matching .flo files in two directories.

    Files are matched by sorted name; missing or extra files are reported
    together. ``mask_policy``: "valid" uses the ground-truth validity mask,
    "valid-nonoccluded" additionally drops pixels whose `<stem>.occ.npy`
    occlusion flag (next to the ground-truth file) is set.
    """
    from .formats import read_flo

    if mask_policy not in ("valid", "valid-nonoccluded"):
        raise ValueError(f"unknown mask policy {mask_policy!r}")
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    pred_files = sorted(pred_dir.glob("*.flo"))
    gt_files = sorted(gt_dir.glob("*.flo"))
    problems = []
    pred_names = {p.name for p in pred_files}
    gt_names = {p.name for p in gt_files}
    for name in sorted(gt_names - pred_names):
        problems.append(f"missing prediction for {name}")
    for name in sorted(pred_names - gt_names):
        problems.append(f"prediction {name} has no ground truth")
    if problems:
        raise ValueError("; ".join(problems))
    if not gt_files:
        raise ValueError(f"no .flo files in {gt_dir}")

    acc = _Accumulator()
    for gt_path in gt_files:
        gt = read_flo(gt_path)
        pred = read_flo(pred_dir / gt_path.name)
        mask = gt.valid
        if mask_policy == "valid-nonoccluded":
            occ_path = gt_path.with_suffix(".occ.npy")
            if occ_path.exists():
                mask = mask & ~np.load(occ_path)
        acc.add(pred, gt, mask)
    return acc.report(frame_weighted=frame_weighted)
