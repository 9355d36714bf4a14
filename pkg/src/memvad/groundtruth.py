"""Per-video ground truth: frame labels and anomalous regions with tracks.

On disk a video's ground truth is two UTF-8 text files:

* ``<video_id>.labels.txt``  — one ``0``/``1`` per line, one line per frame.
* ``<video_id>.regions.txt`` — one ``frame_index,track_id,x,y,w,h`` per line.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FeatureValidationError


@dataclass
class Region:
    """One anomalous region: a box in a frame, tagged with its track."""

    frame_index: int
    track_id: int
    bbox: tuple[float, float, float, float]


@dataclass
class GroundTruth:
    """Frame-level labels plus region annotations for one video."""

    frame_labels: np.ndarray
    regions: list[Region] = field(default_factory=list)

    @property
    def frame_count(self) -> int:
        return len(self.frame_labels)

    def tracks(self) -> dict[int, list[Region]]:
        """Regions grouped by track id, each list sorted by frame."""
        by_track: dict[int, list[Region]] = {}
        for region in self.regions:
            by_track.setdefault(region.track_id, []).append(region)
        for regions in by_track.values():
            regions.sort(key=lambda r: r.frame_index)
        return by_track

    def validate(self) -> None:
        labels = np.asarray(self.frame_labels)
        if labels.ndim != 1:
            raise FeatureValidationError("frame_labels must be a 1-d vector")
        if not np.isin(labels, (0, 1)).all():
            raise FeatureValidationError("frame_labels must be 0/1")
        for region in self.regions:
            if not 0 <= region.frame_index < len(labels):
                raise FeatureValidationError(
                    f"region frame {region.frame_index} outside the video"
                )
            if labels[region.frame_index] != 1:
                raise FeatureValidationError(
                    f"region at frame {region.frame_index} but frame label is 0"
                )
            _, _, w, h = region.bbox
            if not (w > 0 and h > 0):
                raise FeatureValidationError("region bbox w and h must be > 0")


def write_ground_truth(gt: GroundTruth, labels_path: str | Path, regions_path: str | Path) -> None:
    gt.validate()
    labels = np.asarray(gt.frame_labels, dtype=np.int64)
    Path(labels_path).write_text(
        "".join(f"{int(v)}\n" for v in labels), encoding="utf-8"
    )
    lines = [
        f"{r.frame_index},{r.track_id},"
        f"{r.bbox[0]:.2f},{r.bbox[1]:.2f},{r.bbox[2]:.2f},{r.bbox[3]:.2f}\n"
        for r in gt.regions
    ]
    Path(regions_path).write_text("".join(lines), encoding="utf-8")


def read_ground_truth(labels_path: str | Path, regions_path: str | Path) -> GroundTruth:
    labels = [
        int(line.strip())
        for line in Path(labels_path).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    regions = []
    regions_text = Path(regions_path).read_text(encoding="utf-8")
    for line in regions_text.splitlines():
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise FeatureValidationError(
                f"{regions_path}: expected 6 comma-separated fields, got {line!r}"
            )
        frame_index, track_id = int(parts[0]), int(parts[1])
        x, y, w, h = (float(v) for v in parts[2:])
        regions.append(Region(frame_index, track_id, (x, y, w, h)))
    gt = GroundTruth(frame_labels=np.asarray(labels, dtype=np.uint8), regions=regions)
    gt.validate()
    return gt
