"""Detection and segmentation metrics: connected-component instances, FROC,
Dice, radius-stratified sensitivity, and ROC/AUC with tie handling.

The hit criterion is one voxel of overlap by default (optionally an IoU
threshold); each prediction counts toward at most one ground-truth instance,
chosen greedily by descending overlap. FROC reports, for each requested
false-positive rate, the sensitivity at the largest achievable rate not
exceeding it (step interpolation, no linear smoothing).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volgrid import Mask, Volume, check_geometry

SMALL_TUMOR_RADIUS_MM = 20.0


@dataclass(frozen=True)
class Instance:
    """One connected component of a label mask."""

    voxels: np.ndarray          # sorted flat indices into the mask grid
    score: float                # detection confidence in [0, 1]
    volume_mm3: float
    equivalent_radius_mm: float
    centroid: tuple[float, float, float]

    def __post_init__(self):
        if len(self.voxels) == 0:
            raise ValueError("instance must contain at least one voxel")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"instance score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class MatchEdge:
    pred_index: int
    gt_index: int
    overlap_voxels: int


@dataclass(frozen=True)
class CaseEval:
    """Instances and prediction-to-GT matches for one subject."""

    gt: tuple
    pred: tuple
    edges: tuple

    @classmethod
    def from_masks(cls, pred_mask: Mask, gt_mask: Mask, score_map: Volume | None = None,
                   connectivity: int = 26, iou_threshold: float = 0.0) -> "CaseEval":
        check_geometry(pred_mask, gt_mask)
        pred = extract_instances(pred_mask, score_map, connectivity)
        gt = extract_instances(gt_mask, None, connectivity)
        return cls(gt=tuple(gt), pred=tuple(pred),
                   edges=tuple(match_instances(pred, gt, iou_threshold)))


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 26:
        return np.ones((3, 3, 3), dtype=bool)
    if connectivity == 6:
        return ndimage.generate_binary_structure(3, 1)
    raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")


def extract_instances(mask: Mask, score_map: Volume | None = None,
                      connectivity: int = 26) -> list[Instance]:
    """Connected components of positive labels, with per-component scores.

    Component score is the max score_map value over the component (1.0 when
    no score map is given); volume comes from voxel count times voxel volume.
    """
    if score_map is not None:
        check_geometry(mask, score_map)
    binary = mask.labels > 0
    labeled, n = ndimage.label(binary, structure=_structure(connectivity))
    out = []
    flat = labeled.ravel()
    scores = score_map.values.ravel() if score_map is not None else None
    voxvol = mask.voxel_volume_mm3
    for comp in range(1, n + 1):
        idx = np.flatnonzero(flat == comp)
        score = 1.0 if scores is None else float(scores[idx].max())
        vol = len(idx) * voxvol
        coords = np.unravel_index(idx, mask.dims)
        out.append(Instance(
            voxels=idx, score=score, volume_mm3=vol,
            equivalent_radius_mm=(3.0 * vol / (4.0 * math.pi)) ** (1.0 / 3.0),
            centroid=tuple(float(c.mean()) for c in coords)))
    return out


def match_instances(pred, gt, iou_threshold: float = 0.0) -> list[MatchEdge]:
    """Assign each prediction to at most one GT, greedily by descending overlap.

    A pair qualifies with >= 1 voxel of overlap (and IoU above iou_threshold
    when one is set). Ties go to the lower GT index.
    """
    edges = []
    for pi, p in enumerate(pred):
        best = None
        for gi, g in enumerate(gt):
            ov = len(np.intersect1d(p.voxels, g.voxels, assume_unique=True))
            if ov == 0:
                continue
            if iou_threshold > 0:
                iou = ov / (len(p.voxels) + len(g.voxels) - ov)
                if iou < iou_threshold:
                    continue
            if best is None or ov > best[1]:
                best = (gi, ov)
        if best is not None:
            edges.append(MatchEdge(pred_index=pi, gt_index=best[0], overlap_voxels=best[1]))
    return edges


# ---------------------------------------------------------------------------
# FROC
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FrocPoint:
    threshold: float
    fp_per_subject: float
    sensitivity: float


@dataclass(frozen=True)
class FrocCurve:
    points: tuple                    # FrocPoint per distinct threshold, descending
    n_cases: int
    n_gt: int
    sensitivity_at: dict             # fp target -> sensitivity
    threshold_at: dict               # fp target -> operating threshold (inf if none)

    def to_dict(self) -> dict:
        return {
            "n_cases": self.n_cases,
            "n_gt": self.n_gt,
            "points": [{"threshold": p.threshold, "fp_per_subject": p.fp_per_subject,
                        "sensitivity": p.sensitivity} for p in self.points],
            "sensitivity_at": {str(k): v for k, v in self.sensitivity_at.items()},
            "threshold_at": {str(k): (None if math.isinf(v) else v)
                             for k, v in self.threshold_at.items()},
        }


def froc(cases, fp_targets) -> FrocCurve:
    """Free-response ROC over a case list.

    Sweeps the threshold over all distinct prediction scores; at each, the
    operating point is (total FP / n_cases, detected GT / total GT). Per
    target, reports sensitivity at the largest achievable rate <= target.
    """
    cases = list(cases)
    if not cases:
        raise ValueError("froc needs at least one case")
    targets = [float(t) for t in fp_targets]
    if any(t <= 0 for t in targets):
        raise ValueError("fp targets must be > 0")
    n_gt = sum(len(c.gt) for c in cases)
    if n_gt == 0:
        raise ValueError("no ground-truth instances in any case")

    # (score, gt key or None) per prediction, across cases
    records = []
    for ci, c in enumerate(cases):
        matched = {e.pred_index: e.gt_index for e in c.edges}
        for pi, p in enumerate(c.pred):
            gi = matched.get(pi)
            records.append((p.score, None if gi is None else (ci, gi)))

    thresholds = sorted({s for s, _ in records}, reverse=True)
    points = []
    for t in thresholds:
        active = [(s, g) for s, g in records if s >= t]
        fp = sum(1 for _, g in active if g is None)
        detected = {g for _, g in active if g is not None}
        points.append(FrocPoint(threshold=t, fp_per_subject=fp / len(cases),
                                sensitivity=len(detected) / n_gt))

    sens_at, thr_at = {}, {}
    for target in targets:
        eligible = [p for p in points if p.fp_per_subject <= target]
        if eligible:
            best = eligible[-1]  # lowest threshold, max sensitivity under the cap
            sens_at[target] = best.sensitivity
            thr_at[target] = best.threshold
        else:
            sens_at[target] = 0.0
            thr_at[target] = math.inf
    return FrocCurve(points=tuple(points), n_cases=len(cases), n_gt=n_gt,
                     sensitivity_at=sens_at, threshold_at=thr_at)


# ---------------------------------------------------------------------------
# Dice
# ---------------------------------------------------------------------------

def dice(pred: Mask, gt: Mask) -> float:
    """2|P & G| / (|P| + |G|) over positive labels; 1.0 when both are empty."""
    check_geometry(pred, gt)
    p = pred.labels > 0
    g = gt.labels > 0
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


# ---------------------------------------------------------------------------
# Radius-stratified sensitivity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BinSensitivity:
    radius_lo_mm: float
    radius_hi_mm: float
    n_gt: int
    n_detected: int
    sensitivity: float | None     # None marks an empty (undefined) bin

    def to_dict(self) -> dict:
        return {"radius_lo_mm": self.radius_lo_mm,
                "radius_hi_mm": None if math.isinf(self.radius_hi_mm) else self.radius_hi_mm,
                "n_gt": self.n_gt, "n_detected": self.n_detected,
                "sensitivity": self.sensitivity}


def stratified_sensitivity(cases, radius_bins_mm, fp_target: float) -> list[BinSensitivity]:
    """Per-radius-bin sensitivity at the global threshold froc picks for fp_target.

    radius_bins_mm are ordered bin edges; the last bin is open-ended when the
    final edge is infinite. Bins hold GT instances with lo <= radius < hi.
    """
    edges = [float(e) for e in radius_bins_mm]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError(f"radius bins must be increasing edges, got {radius_bins_mm}")
    cases = list(cases)
    thr = froc(cases, [fp_target]).threshold_at[float(fp_target)]

    detected = set()
    for ci, c in enumerate(cases):
        for e in c.edges:
            if c.pred[e.pred_index].score >= thr:
                detected.add((ci, e.gt_index))

    out = []
    for lo, hi in zip(edges, edges[1:]):
        n = hit = 0
        for ci, c in enumerate(cases):
            for gi, g in enumerate(c.gt):
                if lo <= g.equivalent_radius_mm < hi:
                    n += 1
                    hit += (ci, gi) in detected
        out.append(BinSensitivity(radius_lo_mm=lo, radius_hi_mm=hi, n_gt=n,
                                  n_detected=hit, sensitivity=None if n == 0 else hit / n))
    return out


# ---------------------------------------------------------------------------
# ROC
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RocCurve:
    points: tuple                # (fpr, tpr) pairs from (0,0) to (1,1)
    auc: float

    def to_dict(self) -> dict:
        return {"points": [list(p) for p in self.points], "auc": self.auc}


def roc(labels, scores) -> RocCurve:
    """Threshold-sweep ROC with tied scores grouped; AUC by trapezoid rule,
    which equals the Mann-Whitney statistic with ties counted half."""
    y = np.asarray(labels).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise ValueError("labels and scores must be 1D and the same length")
    n_pos = int(y.sum())
    n_neg = int(len(y) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc needs both classes present")
    order = np.argsort(-s, kind="stable")
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[order[j]] == s[order[i]]:
            tp += bool(y[order[j]])
            fp += not y[order[j]]
            j += 1
        points.append((fp / n_neg, tp / n_pos))
        i = j
    auc = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        auc += (x1 - x0) * (y0 + y1) / 2.0
    return RocCurve(points=tuple(points), auc=auc)


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

def write_eval_report(out_dir, curve: FrocCurve, strata: list[BinSensitivity],
                      dice_per_case: dict, roc_curve: RocCurve | None = None) -> dict:
    """Write results.json, summary.csv, and plot-ready TSV point files.

    Returns the results dict that was written.
    """
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dices = list(dice_per_case.values())
    results = {
        "froc": curve.to_dict(),
        "stratified_sensitivity": [b.to_dict() for b in strata],
        "dice": {"per_case": dice_per_case,
                 "mean": (sum(dices) / len(dices)) if dices else None},
    }
    if roc_curve is not None:
        results["roc"] = roc_curve.to_dict()
    (out / "results.json").write_text(json.dumps(results, indent=2) + "\n")

    with open(out / "summary.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["metric", "value"])
        for target in sorted(curve.sensitivity_at):
            wr.writerow([f"sensitivity@{target}FP/subject", curve.sensitivity_at[target]])
        for b in strata:
            hi = "inf" if math.isinf(b.radius_hi_mm) else b.radius_hi_mm
            val = "undefined" if b.sensitivity is None else b.sensitivity
            wr.writerow([f"sensitivity[radius {b.radius_lo_mm}-{hi}mm]", val])
        if dices:
            wr.writerow(["dice_mean", sum(dices) / len(dices)])

    with open(out / "froc_points.tsv", "w") as f:
        f.write("fp_per_subject\tsensitivity\n")
        for p in curve.points:
            f.write(f"{p.fp_per_subject}\t{p.sensitivity}\n")
    if roc_curve is not None:
        with open(out / "roc_points.tsv", "w") as f:
            f.write("fpr\ttpr\n")
            for x, yv in roc_curve.points:
                f.write(f"{x}\t{yv}\n")
    return results
