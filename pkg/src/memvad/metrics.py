"""Spatio-temporal evaluation: frame-level ROC AUC, RBDC and TBDC.

The region/track criteria sweep every distinct detection score as a
threshold, from the highest down. At a threshold, detections with a score
at or above it survive; a ground-truth region counts as detected when a
surviving detection in the same frame covers it (intersection over the
region's own area, by default) at or above the overlap threshold. A track
counts as detected when at least ``track_fraction`` of its regions are
detected. The x axis of both criteria is false positives per frame
(surviving detections covering no region, divided by the total number of
test frames); the curve is integrated over x in [0, 1] by the trapezoidal
rule, extending the final point horizontally when the sweep ends early.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, UndefinedMetricError
from .geometry import coverage, iou
from .groundtruth import GroundTruth
from .scoring import ScoreTable

OVERLAP_MODES = ("coverage", "iou")

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass
class Detection:
    """One scored object box."""

    video_id: str
    frame_index: int
    bbox: tuple[float, float, float, float]
    score: float


@dataclass
class CurveResult:
    """A swept detection curve: points are ordered by descending threshold."""

    thresholds: np.ndarray
    x: np.ndarray
    y: np.ndarray
    auc: float


def detections_from_score_table(table: ScoreTable) -> list[Detection]:
    return [
        Detection(
            video_id=table.video_id,
            frame_index=int(table.frame_index[i]),
            bbox=tuple(float(v) for v in table.bbox[i]),
            score=float(table.score[i]),
        )
        for i in range(len(table))
    ]


# ---------------------------------------------------------------------------
# frame-level ROC
# ---------------------------------------------------------------------------


def roc_curve(scores: np.ndarray, labels: np.ndarray) -> CurveResult:
    """ROC by sweeping all distinct score thresholds; AUC by trapezoid.

    Tie groups collapse into single curve points, which makes the AUC
    equal to the normalized Mann-Whitney U statistic with half credit
    for ties.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ConfigError("scores and labels must be aligned 1-d vectors")
    pos = int((labels == 1).sum())
    neg = int((labels == 0).sum())
    if pos + neg != len(labels):
        raise ConfigError("labels must be 0/1")
    if pos == 0 or neg == 0:
        raise UndefinedMetricError(
            f"ROC needs both classes; got {pos} positive / {neg} negative frames"
        )
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    cum_tp = np.cumsum(sorted_labels == 1)
    cum_fp = np.cumsum(sorted_labels == 0)
    # last index of each tie group = a distinct threshold
    boundary = np.nonzero(np.diff(sorted_scores, append=-np.inf))[0]
    thresholds = sorted_scores[boundary]
    tpr = cum_tp[boundary] / pos
    fpr = cum_fp[boundary] / neg
    x = np.concatenate([[0.0], fpr])
    y = np.concatenate([[0.0], tpr])
    auc = float(_trapezoid(y, x))
    return CurveResult(
        thresholds=np.concatenate([[np.inf], thresholds]), x=x, y=y, auc=auc
    )


def frame_auc(
    scores_by_video: Mapping[str, np.ndarray],
    labels_by_video: Mapping[str, np.ndarray],
    average: str = "micro",
) -> float:
    """Frame-level ROC AUC over all test videos.

    ``micro`` pools frames across videos before building a single curve;
    ``macro`` averages per-video AUCs (each video then needs both classes).
    """
    if set(scores_by_video) != set(labels_by_video):
        raise ConfigError("scores and labels cover different video sets")
    if not scores_by_video:
        raise UndefinedMetricError("no videos to evaluate")
    for vid in scores_by_video:
        if len(scores_by_video[vid]) != len(labels_by_video[vid]):
            raise ConfigError(f"{vid}: score/label length mismatch")
    if average == "micro":
        keys = sorted(scores_by_video)
        scores = np.concatenate([np.asarray(scores_by_video[k]) for k in keys])
        labels = np.concatenate([np.asarray(labels_by_video[k]) for k in keys])
        return roc_curve(scores, labels).auc
    if average == "macro":
        aucs = [
            roc_curve(np.asarray(scores_by_video[k]), np.asarray(labels_by_video[k])).auc
            for k in sorted(scores_by_video)
        ]
        return float(np.mean(aucs))
    raise ConfigError(f"average must be 'micro' or 'macro', got {average!r}")


# ---------------------------------------------------------------------------
# region / track criteria
# ---------------------------------------------------------------------------


def _overlap_fn(mode: str):
    if mode not in OVERLAP_MODES:
        raise ConfigError(f"overlap mode must be one of {OVERLAP_MODES}, got {mode!r}")
    return coverage if mode == "coverage" else iou


def _match_detections(
    detections: Sequence[Detection],
    gt_by_video: Mapping[str, GroundTruth],
    iou_threshold: float,
    mode: str,
):
    """Best hitting score per region, FP detection scores, total frame count.

    A detection hits a region when they share video and frame and the
    overlap is at or above the threshold; detections hitting no region at
    all are false positives at every threshold they survive.
    """
    overlap = _overlap_fn(mode)
    regions = []
    region_index: dict[tuple[str, int], list[int]] = {}
    total_frames = 0
    for vid in sorted(gt_by_video):
        gt = gt_by_video[vid]
        total_frames += gt.frame_count
        for reg in gt.regions:
            region_index.setdefault((vid, reg.frame_index), []).append(len(regions))
            regions.append((vid, reg))
    best = np.full(len(regions), -np.inf)
    fp_scores = []
    for det in detections:
        hit = False
        for ridx in region_index.get((det.video_id, det.frame_index), ()):
            _, reg = regions[ridx]
            if overlap(det.bbox, reg.bbox) >= iou_threshold:
                hit = True
                if det.score > best[ridx]:
                    best[ridx] = det.score
        if not hit:
            fp_scores.append(det.score)
    return regions, best, np.asarray(fp_scores, dtype=np.float64), total_frames


def _count_at_least(sorted_asc: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """For each threshold, how many values in sorted_asc are >= it."""
    return len(sorted_asc) - np.searchsorted(sorted_asc, thresholds, side="left")


def _fp_axis_auc(x: np.ndarray, y: np.ndarray, limit: float = 1.0) -> float:
    """Trapezoidal area under a swept curve over x in [0, limit].

    The curve starts at (0, 0); if it ends before ``limit`` the final y
    extends horizontally, and a segment crossing ``limit`` is cut by
    linear interpolation.
    """
    px, py = 0.0, 0.0
    area = 0.0
    for cx, cy in zip(x, y):
        if cx <= limit:
            area += (cx - px) * (py + cy) / 2.0
            px, py = float(cx), float(cy)
        else:
            y_at = py + (cy - py) * (limit - px) / (cx - px)
            area += (limit - px) * (py + y_at) / 2.0
            px, py = limit, y_at
            break
    if px < limit:
        area += (limit - px) * py
    return area / limit


def rbdc(
    detections: Sequence[Detection],
    gt_by_video: Mapping[str, GroundTruth],
    iou_threshold: float = 0.1,
    overlap_mode: str = "coverage",
) -> CurveResult:
    """Region-based detection criterion.

    y: fraction of ground-truth regions detected; x: false positives per
    frame; both swept over every distinct detection score, descending.
    """
    regions, best, fp_scores, total_frames = _match_detections(
        detections, gt_by_video, iou_threshold, overlap_mode
    )
    if not regions:
        raise UndefinedMetricError("RBDC is undefined without ground-truth regions")
    if not detections:
        return CurveResult(
            thresholds=np.zeros(0),
            x=np.zeros(0),
            y=np.zeros(0),
            auc=0.0,
        )
    thresholds = np.unique([d.score for d in detections])[::-1]
    best_sorted = np.sort(best)
    fp_sorted = np.sort(fp_scores)
    y = _count_at_least(best_sorted, thresholds) / len(regions)
    x = _count_at_least(fp_sorted, thresholds) / total_frames
    return CurveResult(
        thresholds=thresholds, x=x, y=y, auc=_fp_axis_auc(x, y, 1.0)
    )


def _tbdc_required(track_size: int, track_fraction: float) -> int:
    # Smallest hit count whose fraction of the track reaches track_fraction;
    # the tiny slack keeps exact boundaries (e.g. 1/10 vs 0.1) detected.
    return max(1, math.ceil(track_fraction * track_size - 1e-9))


def tbdc(
    detections: Sequence[Detection],
    gt_by_video: Mapping[str, GroundTruth],
    iou_threshold: float = 0.1,
    track_fraction: float = 0.1,
    overlap_mode: str = "coverage",
) -> CurveResult:
    """Track-based detection criterion.

    A track is detected at a threshold once at least ``track_fraction`` of
    its regions are detected (region detection as in RBDC); x is the same
    false-positives-per-frame axis.
    """
    if not 0.0 < track_fraction <= 1.0:
        raise ConfigError("track_fraction must be in (0, 1]")
    regions, best, fp_scores, total_frames = _match_detections(
        detections, gt_by_video, iou_threshold, overlap_mode
    )
    track_regions: dict[tuple[str, int], list[int]] = {}
    for ridx, (vid, reg) in enumerate(regions):
        track_regions.setdefault((vid, reg.track_id), []).append(ridx)
    if not track_regions:
        raise UndefinedMetricError("TBDC is undefined without ground-truth tracks")
    if not detections:
        return CurveResult(
            thresholds=np.zeros(0), x=np.zeros(0), y=np.zeros(0), auc=0.0
        )
    # threshold at which each track becomes detected: the q-th best
    # region-hit score, q = required hit count
    track_scores = []
    for key in sorted(track_regions):
        ridx = track_regions[key]
        hits_desc = np.sort(best[ridx])[::-1]
        q = _tbdc_required(len(ridx), track_fraction)
        track_scores.append(hits_desc[q - 1])
    track_sorted = np.sort(np.asarray(track_scores))
    thresholds = np.unique([d.score for d in detections])[::-1]
    fp_sorted = np.sort(fp_scores)
    y = _count_at_least(track_sorted, thresholds) / len(track_scores)
    x = _count_at_least(fp_sorted, thresholds) / total_frames
    return CurveResult(
        thresholds=thresholds, x=x, y=y, auc=_fp_axis_auc(x, y, 1.0)
    )
