"""Axis-aligned bounding-box arithmetic.

Boxes are (x, y, w, h) tuples or arrays in pixel coordinates, with (x, y)
the top-left corner and w, h strictly positive.
"""

from __future__ import annotations

Box = tuple[float, float, float, float]


def intersection_area(a, b) -> float:
    """Area of the intersection of two boxes (0.0 when disjoint)."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return float(iw) * float(ih)


def iou(a, b) -> float:
    """Symmetric intersection-over-union of two boxes."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    union = float(aw) * float(ah) + float(bw) * float(bh) - inter
    return inter / union


def coverage(det, ref) -> float:
    """Intersection area divided by the area of ``ref``.

    The asymmetric overlap used for region matching: how much of the
    reference box is covered by the detection.
    """
    inter = intersection_area(det, ref)
    if inter == 0.0:
        return 0.0
    _, _, rw, rh = ref
    return inter / (float(rw) * float(rh))
