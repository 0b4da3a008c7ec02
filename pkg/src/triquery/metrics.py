"""Segmentation quality metrics for binary tracklets.

Region similarity J is mean per-frame IoU; contour accuracy F is a boundary
F-measure where boundaries are the mask minus its one-step (4-neighborhood)
erosion, matched within a 1-pixel Chebyshev tolerance. Dataset-level numbers
add overall IoU (pixel totals), mean per-sample IoU, and a single-instance
average precision over the IoU thresholds 0.50, 0.55, ..., 0.95.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAP_THRESHOLDS = tuple(t / 100 for t in range(50, 100, 5))


@dataclass
class MetricReport:
    j: float
    f: float
    jf: float
    oiou: float
    miou: float
    map: float

    def to_dict(self):
        return {
            "J": self.j,
            "F": self.f,
            "J&F": self.jf,
            "oIoU": self.oiou,
            "mIoU": self.miou,
            "mAP": self.map,
        }


def _check_pair(pred, gt):
    pred = np.asarray(pred) > 0.5
    gt = np.asarray(gt) > 0.5
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    return pred, gt


def frame_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0  # both empty
    return float(np.logical_and(pred, gt).sum() / union)


def _erode4(mask: np.ndarray) -> np.ndarray:
    p = np.pad(mask, 1, constant_values=False)
    return mask & p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]


def boundary(mask: np.ndarray) -> np.ndarray:
    """Mask pixels lost under one 4-neighborhood erosion (image border counts
    as background, so masks touching the edge keep a boundary there)."""
    return mask & ~_erode4(mask)


def _dilate_cheb1(mask: np.ndarray) -> np.ndarray:
    p = np.pad(mask, 1, constant_values=False)
    out = np.zeros_like(mask)
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            out |= p[dy : dy + mask.shape[0], dx : dx + mask.shape[1]]
    return out


def frame_boundary_f(pred: np.ndarray, gt: np.ndarray, tol: int = 1) -> float:
    pb = boundary(pred)
    gb = boundary(gt)
    n_p, n_g = pb.sum(), gb.sum()
    if n_p == 0 and n_g == 0:
        return 1.0
    if n_p == 0 or n_g == 0:
        return 0.0
    gb_zone = gb
    pb_zone = pb
    for _ in range(tol):
        gb_zone = _dilate_cheb1(gb_zone)
        pb_zone = _dilate_cheb1(pb_zone)
    precision = (pb & gb_zone).sum() / n_p
    recall = (gb & pb_zone).sum() / n_g
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def eval_jf(pred, gt):
    """(J, F, J&F) for one tracklet: means of per-frame IoU and boundary F."""
    pred, gt = _check_pair(pred, gt)
    j = float(np.mean([frame_iou(pred[t], gt[t]) for t in range(pred.shape[0])]))
    f = float(np.mean([frame_boundary_f(pred[t], gt[t]) for t in range(pred.shape[0])]))
    return j, f, (j + f) / 2.0


def sample_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Clip-level IoU: pixel totals across all frames of one sample."""
    pred, gt = _check_pair(pred, gt)
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def eval_dataset(preds, gts) -> MetricReport:
    """Aggregate metrics over aligned prediction/ground-truth sequences."""
    preds = list(preds)
    gts = list(gts)
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    if not preds:
        raise ValueError("empty evaluation set")
    js, fs, jfs, ious = [], [], [], []
    inter_total = 0
    union_total = 0
    for p, g in zip(preds, gts):
        j, f, jf = eval_jf(p, g)
        js.append(j)
        fs.append(f)
        jfs.append(jf)
        pb, gb = _check_pair(p, g)
        inter_total += int(np.logical_and(pb, gb).sum())
        union_total += int(np.logical_or(pb, gb).sum())
        ious.append(sample_iou(pb, gb))
    oiou = 1.0 if union_total == 0 else inter_total / union_total
    miou = float(np.mean(ious))
    ap = float(np.mean([np.mean([iou >= th for iou in ious]) for th in MAP_THRESHOLDS]))
    return MetricReport(
        j=float(np.mean(js)),
        f=float(np.mean(fs)),
        jf=float(np.mean(jfs)),
        oiou=float(oiou),
        miou=miou,
        map=ap,
    )
