"""Segmentation metrics: DSC, aggregated DSC, HD95 and mean surface distance.

Surface voxels are foreground voxels with at least one 6-connected
background neighbour (voxels outside the grid count as background).
Distances are measured between voxel centres in mm. HD95 and MSD are taken
over the pooled multiset of both directed surface distances; the 95th
percentile interpolates linearly between the closest ranks.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCohort, GeometryMismatch
from .nifti_io import LabelMask3
from .roi import LABEL_NAMES
from .volume import voxel_volume_mm3

LABELS = (1, 2)


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise GeometryMismatch(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    return pred, gt


def dsc(pred, gt) -> float:
    """Dice coefficient; 1.0 when both masks are empty, 0.0 when only one is."""
    pred, gt = _check_pair(pred, gt)
    inter = int(np.count_nonzero(pred & gt))
    total = int(np.count_nonzero(pred)) + int(np.count_nonzero(gt))
    if total == 0:
        return 1.0
    return 2.0 * inter / total


def dsc_from_tallies(tallies) -> float:
    """Pooled Dice from ``(intersection, pred_voxels, gt_voxels)`` triples."""
    inter = sum(int(t[0]) for t in tallies)
    total = sum(int(t[1]) + int(t[2]) for t in tallies)
    if total == 0:
        return 1.0
    return 2.0 * inter / total


def dsc_agg(cases) -> float:
    """Aggregated Dice over ``(pred, gt)`` binary pairs: pooled overlap / pooled size."""
    cases = list(cases)
    if not cases:
        raise EmptyCohort("dsc_agg needs at least one case")
    tallies = []
    for pred, gt in cases:
        pred, gt = _check_pair(pred, gt)
        tallies.append((np.count_nonzero(pred & gt), np.count_nonzero(pred), np.count_nonzero(gt)))
    return dsc_from_tallies(tallies)


def surface_mask(m) -> np.ndarray:
    m = np.asarray(m, dtype=bool)
    p = np.pad(m, 1, constant_values=False)
    interior = p[1:-1, 1:-1, 1:-1].copy()
    for axis in range(3):
        for step in (-1, 1):
            interior &= np.roll(p, step, axis=axis)[1:-1, 1:-1, 1:-1]
    return m & ~interior


def surface_voxels(m) -> np.ndarray:
    """``(n, 3)`` integer coordinates of surface voxels, in C order."""
    return np.argwhere(surface_mask(m))


def directed_surface_distances(a, b, spacing) -> np.ndarray:
    """For each surface voxel of ``a``, the mm distance to the nearest surface voxel of ``b``."""
    sp = np.asarray(spacing, dtype=np.float64)
    pa = surface_voxels(a) * sp
    pb = surface_voxels(b) * sp
    if len(pa) == 0 or len(pb) == 0:
        return np.empty(0)
    dist, _ = cKDTree(pb).query(pa, k=1)
    return dist


def pooled_surface_distances(pred, gt, spacing) -> np.ndarray | None:
    pred, gt = _check_pair(pred, gt)
    if not pred.any() or not gt.any():
        return None
    return np.concatenate(
        [directed_surface_distances(pred, gt, spacing), directed_surface_distances(gt, pred, spacing)]
    )


def hd95(pred, gt, spacing=(1.0, 1.0, 1.0)) -> float | None:
    """95th percentile Hausdorff distance in mm, or ``None`` if either mask is empty."""
    d = pooled_surface_distances(pred, gt, spacing)
    if d is None:
        return None
    return float(np.percentile(d, 95))


def msd(pred, gt, spacing=(1.0, 1.0, 1.0), mode: str = "pooled") -> float | None:
    """Mean surface distance in mm, or ``None`` if either mask is empty.

    ``mode="pooled"`` averages the pooled bidirectional multiset;
    ``mode="average"`` averages the two directed means instead.
    """
    pred, gt = _check_pair(pred, gt)
    if not pred.any() or not gt.any():
        return None
    if mode == "pooled":
        return float(np.mean(pooled_surface_distances(pred, gt, spacing)))
    if mode == "average":
        a = directed_surface_distances(pred, gt, spacing).mean()
        b = directed_surface_distances(gt, pred, spacing).mean()
        return float((a + b) / 2.0)
    raise ValueError(f"unknown msd mode {mode!r}")


@dataclass
class LabelMetrics:
    dsc: float
    hd95_mm: float | None
    msd_mm: float | None
    pred_volume_cc: float
    gt_volume_cc: float
    intersection_voxels: int
    pred_voxels: int
    gt_voxels: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def label_metrics(pred, gt, spacing) -> LabelMetrics:
    pred, gt = _check_pair(pred, gt)
    inter = int(np.count_nonzero(pred & gt))
    n_pred = int(np.count_nonzero(pred))
    n_gt = int(np.count_nonzero(gt))
    vox_cc = voxel_volume_mm3(spacing) / 1000.0
    d = pooled_surface_distances(pred, gt, spacing)
    return LabelMetrics(
        dsc=dsc_from_tallies([(inter, n_pred, n_gt)]),
        hd95_mm=None if d is None else float(np.percentile(d, 95)),
        msd_mm=None if d is None else float(np.mean(d)),
        pred_volume_cc=n_pred * vox_cc,
        gt_volume_cc=n_gt * vox_cc,
        intersection_voxels=inter,
        pred_voxels=n_pred,
        gt_voxels=n_gt,
    )


@dataclass
class CaseMetrics:
    case_id: str
    labels: dict[str, LabelMetrics] = field(default_factory=dict)
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "error": self.error,
            "labels": {k: v.to_dict() for k, v in self.labels.items()},
        }

    @classmethod
    def from_dict(cls, d) -> "CaseMetrics":
        return cls(
            case_id=d["case_id"],
            labels={k: LabelMetrics(**v) for k, v in d.get("labels", {}).items()},
            error=d.get("error"),
        )


def evaluate_case(pred: LabelMask3, gt: LabelMask3, case_id: str, spacing=None) -> CaseMetrics:
    if pred.shape != gt.shape:
        raise GeometryMismatch(f"{case_id}: prediction grid {pred.shape} != ground truth grid {gt.shape}")
    if spacing is None:
        if not np.allclose(pred.spacing, gt.spacing, rtol=0, atol=1e-5):
            raise GeometryMismatch(f"{case_id}: spacing {pred.spacing} != {gt.spacing}")
        spacing = gt.spacing
    out = CaseMetrics(case_id)
    for lab in LABELS:
        out.labels[LABEL_NAMES[lab]] = label_metrics(pred.data == lab, gt.data == lab, spacing)
    return out


def _mean_defined(values):
    vals = [v for v in values if v is not None]
    return (sum(vals) / len(vals) if vals else None), len(values) - len(vals)


def summarize(cases) -> dict:
    """Per-label cohort aggregates over the cases that evaluated cleanly."""
    ok = [c for c in cases if c.error is None]
    summary = {}
    for lab in LABELS:
        name = LABEL_NAMES[lab]
        rows = [c.labels[name] for c in ok if name in c.labels]
        if not rows:
            summary[name] = {
                "n_cases": 0,
                "dsc_agg": None,
                "mean_dsc": None,
                "mean_hd95_mm": None,
                "mean_msd_mm": None,
                "hd95_excluded": 0,
                "msd_excluded": 0,
            }
            continue
        mean_hd, hd_excl = _mean_defined([r.hd95_mm for r in rows])
        mean_msd, msd_excl = _mean_defined([r.msd_mm for r in rows])
        summary[name] = {
            "n_cases": len(rows),
            "dsc_agg": dsc_from_tallies([(r.intersection_voxels, r.pred_voxels, r.gt_voxels) for r in rows]),
            "mean_dsc": sum(r.dsc for r in rows) / len(rows),
            "mean_hd95_mm": mean_hd,
            "mean_msd_mm": mean_msd,
            "hd95_excluded": hd_excl,
            "msd_excluded": msd_excl,
        }
    aggs = [summary[LABEL_NAMES[lab]]["dsc_agg"] for lab in LABELS]
    summary["mean_dsc_agg"] = None if any(a is None for a in aggs) else sum(aggs) / len(aggs)
    return summary


@dataclass
class CohortReport:
    cases: list[CaseMetrics]
    summary: dict

    @classmethod
    def from_cases(cls, cases) -> "CohortReport":
        cases = sorted(cases, key=lambda c: c.case_id)
        return cls(cases, summarize(cases))

    @property
    def failed(self) -> list[CaseMetrics]:
        return [c for c in self.cases if c.error is not None]

    def label_summary(self, name: str) -> dict:
        return self.summary[name]

    def to_dict(self) -> dict:
        return {"cases": [c.to_dict() for c in self.cases], "summary": self.summary}

    @classmethod
    def from_dict(cls, d) -> "CohortReport":
        # aggregates are recomputed from the stored tallies, not trusted
        return cls.from_cases([CaseMetrics.from_dict(c) for c in d["cases"]])

    def per_case(self, name: str, key: str = "dsc") -> dict[str, float]:
        return {c.case_id: getattr(c.labels[name], key) for c in self.cases if c.error is None}

    def to_csv(self) -> str:
        cols = [
            "case_id",
            "label",
            "dsc",
            "hd95_mm",
            "msd_mm",
            "pred_volume_cc",
            "gt_volume_cc",
            "intersection_voxels",
            "pred_voxels",
            "gt_voxels",
            "error",
        ]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for c in self.cases:
            if c.error is not None:
                w.writerow([c.case_id, "", "", "", "", "", "", "", "", "", c.error])
                continue
            for name, m in c.labels.items():
                row = [c.case_id, name]
                for key in cols[2:-1]:
                    v = getattr(m, key)
                    row.append("" if v is None else repr(v) if isinstance(v, float) else v)
                row.append("")
                w.writerow(row)
        return buf.getvalue()


def evaluate_cohort(pairs, spacing=None) -> CohortReport:
    """Score ``(pred, gt, case_id)`` triples; a failing case is recorded, not raised."""
    cases = []
    for pred, gt, case_id in pairs:
        try:
            cases.append(evaluate_case(pred, gt, case_id, spacing))
        except Exception as exc:  # noqa: BLE001 - recorded per case
            cases.append(CaseMetrics(case_id, error=f"{type(exc).__name__}: {exc}"))
    return CohortReport.from_cases(cases)

