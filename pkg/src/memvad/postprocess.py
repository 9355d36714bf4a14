"""Score post-processing: spatio-temporal smoothing and frame aggregation.

Object scores are smoothed by averaging over temporally associated
objects: for each object, every object in a frame within the temporal
radius (other frames only) whose box overlaps it with IoU above the
association threshold joins the mean. Frame-level scores are the per-frame
maximum over object scores, smoothed with a normalized Gaussian kernel
using mirrored boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geometry import iou
from .scoring import ScoreTable, normalize_video


@dataclass
class SmoothingConfig:
    temporal_radius: int = 2
    association_min_iou: float = 0.2
    gaussian_sigma: float = 3.0
    scale_adjust: bool = False

    def validate(self) -> None:
        if self.temporal_radius < 0:
            raise ConfigError("temporal_radius must be >= 0")
        if not 0.0 < self.association_min_iou <= 1.0:
            raise ConfigError("association_min_iou must be in (0, 1]")
        if not self.gaussian_sigma > 0:
            raise ConfigError("gaussian_sigma must be > 0")


def smooth_object_scores(table: ScoreTable, config: SmoothingConfig) -> ScoreTable:
    """Replace each score by the mean over its spatio-temporal window.

    The window is the object itself plus all objects in frames within
    +/- temporal_radius (excluding its own frame) whose bbox overlaps its
    bbox with IoU >= association_min_iou. Objects with no associated
    neighbors keep their score.
    """
    config.validate()
    n = len(table)
    if n == 0 or config.temporal_radius == 0:
        return table.with_scores(table.score.copy())
    by_frame: dict[int, list[int]] = {}
    for i in range(n):
        by_frame.setdefault(int(table.frame_index[i]), []).append(i)
    new_scores = np.empty(n, dtype=np.float64)
    for i in range(n):
        frame = int(table.frame_index[i])
        box = table.bbox[i]
        total = float(table.score[i])
        count = 1
        for other in range(
            frame - config.temporal_radius, frame + config.temporal_radius + 1
        ):
            if other == frame:
                continue
            for j in by_frame.get(other, ()):
                if iou(box, table.bbox[j]) >= config.association_min_iou:
                    total += float(table.score[j])
                    count += 1
        new_scores[i] = total / count
    return table.with_scores(new_scores)


def scale_adjust(table: ScoreTable) -> ScoreTable:
    """Multiply scores by the bbox width, then re-normalize to [0, 1]."""
    if len(table) == 0:
        return table.with_scores(table.score.copy())
    widths = table.bbox[:, 2]
    if np.any(widths <= 0):
        raise ConfigError("scale adjustment requires positive bbox widths")
    return table.with_scores(normalize_video(table.score * widths))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Gaussian kernel truncated at radius ceil(3*sigma), normalized to sum 1."""
    radius = math.ceil(3.0 * sigma)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def gaussian_smooth(values: np.ndarray, sigma: float) -> np.ndarray:
    """1-d Gaussian filtering with mirrored (symmetric) boundary handling."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return values.copy()
    kernel = gaussian_kernel(sigma)
    radius = (len(kernel) - 1) // 2
    padded = np.pad(values, radius, mode="symmetric")
    return np.convolve(padded, kernel, mode="valid")


def aggregate_frame_scores(table: ScoreTable, frame_count: int) -> np.ndarray:
    """Per-frame raw score: max over that frame's objects, 0 when empty."""
    scores = np.zeros(frame_count, dtype=np.float64)
    for i in range(len(table)):
        frame = int(table.frame_index[i])
        if 0 <= frame < frame_count and table.score[i] > scores[frame]:
            scores[frame] = table.score[i]
    return scores


def frame_scores(
    table: ScoreTable, frame_count: int, config: SmoothingConfig
) -> np.ndarray:
    """Max-aggregated frame scores filtered with the Gaussian kernel."""
    config.validate()
    return gaussian_smooth(aggregate_frame_scores(table, frame_count), config.gaussian_sigma)


def write_frame_scores(scores: np.ndarray, path: str | Path) -> None:
    Path(path).write_text(
        "".join(f"{v:.6f}\n" for v in np.asarray(scores)), encoding="utf-8"
    )


def read_frame_scores(path: str | Path) -> np.ndarray:
    values = [
        float(line.strip())
        for line in Path(path).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    return np.asarray(values, dtype=np.float64)
