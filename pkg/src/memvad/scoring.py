"""Per-object anomaly scores.

Each object gets three raw components from a trained model:

* ``rec_l2``  — ||x_app - xhat_app|| + ||x_mo - xhat_mo||
* ``rec_cos`` — (1 - cos(x_app, xhat_app)) + (1 - cos(x_mo, xhat_mo))
* ``mem``     — 1 - cos(h, m_k) with k the attention-argmax memory item

Every component is min-max normalized across the entire video (the
degenerate all-equal case maps to 0), and the final score is the mean of
the normalized components, so it always lies in [0, 1].

Score files are UTF-8 text with one object per line::

    video_id,frame_index,object_id,x,y,w,h,score
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .features import FeatureRecord, VideoFeatureSet
from .network import ModelParams, _forward_batch, forward

COMPONENTS = ("rec_l2", "rec_cos", "mem")

_SCORE_BATCH = 2048


@dataclass
class RawComponents:
    """Unnormalized score components of one object."""

    rec_l2: float
    rec_cos: float
    mem_cos: float


@dataclass
class ScoreTable:
    """Scores of all objects of one video, in record order."""

    video_id: str
    frame_index: np.ndarray
    object_id: np.ndarray
    bbox: np.ndarray  # (n, 4)
    raw_rec_l2: np.ndarray
    raw_rec_cos: np.ndarray
    raw_mem_cos: np.ndarray
    norm_rec_l2: np.ndarray
    norm_rec_cos: np.ndarray
    norm_mem_cos: np.ndarray
    score: np.ndarray

    def __len__(self) -> int:
        return len(self.score)

    def with_scores(self, score: np.ndarray) -> "ScoreTable":
        return replace(self, score=np.asarray(score, dtype=np.float64))


def _cos_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine; rows with a zero-norm side contribute cos = 1."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    valid = (na > 0) & (nb > 0)
    out = np.ones_like(na)
    np.divide(
        np.einsum("ij,ij->i", a, b), na * nb, out=out, where=valid
    )
    return np.clip(out, -1.0, 1.0)


def raw_components(params: ModelParams, rec: FeatureRecord) -> RawComponents:
    """Raw score components of a single object (computed in float64)."""
    trace = forward(params, rec)
    x_app = np.asarray(rec.x_app, dtype=np.float64)[None, :]
    x_mo = np.concatenate([rec.x_mag, rec.x_ang]).astype(np.float64)[None, :]
    xhat_app = trace.xhat_app.astype(np.float64)[None, :]
    xhat_mo = np.concatenate([trace.xhat_mag, trace.xhat_ang]).astype(np.float64)[
        None, :
    ]
    rec_l2 = float(
        np.linalg.norm(x_app - xhat_app) + np.linalg.norm(x_mo - xhat_mo)
    )
    rec_cos = float(
        (1.0 - _cos_rows(x_app, xhat_app)[0]) + (1.0 - _cos_rows(x_mo, xhat_mo)[0])
    )
    h = trace.h.astype(np.float64)[None, :]
    m_k = params.memory[trace.k].astype(np.float64)[None, :]
    mem_cos = float(1.0 - _cos_rows(h, m_k)[0])
    return RawComponents(rec_l2=rec_l2, rec_cos=rec_cos, mem_cos=mem_cos)


def normalize_video(values: np.ndarray) -> np.ndarray:
    """Min-max normalization across one video's objects.

    The minimum maps to 0 and the maximum to 1; if all values coincide
    (including the single-object case) everything maps to 0.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ConfigError("no values to normalize")
    lo = values.min()
    hi = values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def score_video(
    params: ModelParams,
    video: VideoFeatureSet,
    components: Sequence[str] = COMPONENTS,
) -> ScoreTable:
    """Two-pass scoring of one video.

    Pass 1 collects raw components for every object; pass 2 normalizes
    each component across the video and averages the selected ones.
    ``components`` is normally all three; dropping one (e.g. ``rec_cos``)
    gives an ablated score.
    """
    chosen = tuple(components)
    if not chosen or any(c not in COMPONENTS for c in chosen):
        raise ConfigError(
            f"components must be a non-empty subset of {COMPONENTS}, got {chosen}"
        )
    n = len(video.records)
    if n == 0:
        empty = np.zeros(0, dtype=np.float64)
        return ScoreTable(
            video_id=video.video_id,
            frame_index=np.zeros(0, dtype=np.int64),
            object_id=np.zeros(0, dtype=np.int64),
            bbox=np.zeros((0, 4), dtype=np.float64),
            raw_rec_l2=empty,
            raw_rec_cos=empty.copy(),
            raw_mem_cos=empty.copy(),
            norm_rec_l2=empty.copy(),
            norm_rec_cos=empty.copy(),
            norm_mem_cos=empty.copy(),
            score=empty.copy(),
        )

    dtype = params.dtype
    raw_l2 = np.empty(n, dtype=np.float64)
    raw_cos = np.empty(n, dtype=np.float64)
    raw_mem = np.empty(n, dtype=np.float64)
    for start in range(0, n, _SCORE_BATCH):
        recs = video.records[start : start + _SCORE_BATCH]
        x_app = np.stack([r.x_app for r in recs]).astype(dtype, copy=False)
        x_mag = np.stack([r.x_mag for r in recs]).astype(dtype, copy=False)
        x_ang = np.stack([r.x_ang for r in recs]).astype(dtype, copy=False)
        trace = _forward_batch(params, x_app, x_mag, x_ang)
        xa = x_app.astype(np.float64)
        xhat_a = trace.xhat_app.astype(np.float64)
        x_mo = np.hstack([x_mag, x_ang]).astype(np.float64)
        xhat_mo = np.hstack([trace.xhat_mag, trace.xhat_ang]).astype(np.float64)
        sl = slice(start, start + len(recs))
        raw_l2[sl] = np.linalg.norm(xa - xhat_a, axis=1) + np.linalg.norm(
            x_mo - xhat_mo, axis=1
        )
        raw_cos[sl] = (1.0 - _cos_rows(xa, xhat_a)) + (1.0 - _cos_rows(x_mo, xhat_mo))
        h = trace.h.astype(np.float64)
        m_k = params.memory[trace.nearest].astype(np.float64)
        raw_mem[sl] = 1.0 - _cos_rows(h, m_k)

    norm = {
        "rec_l2": normalize_video(raw_l2),
        "rec_cos": normalize_video(raw_cos),
        "mem": normalize_video(raw_mem),
    }
    score = np.mean([norm[c] for c in chosen], axis=0)
    return ScoreTable(
        video_id=video.video_id,
        frame_index=np.array([r.frame_index for r in video.records], dtype=np.int64),
        object_id=np.array([r.object_id for r in video.records], dtype=np.int64),
        bbox=np.array([r.bbox for r in video.records], dtype=np.float64),
        raw_rec_l2=raw_l2,
        raw_rec_cos=raw_cos,
        raw_mem_cos=raw_mem,
        norm_rec_l2=norm["rec_l2"],
        norm_rec_cos=norm["rec_cos"],
        norm_mem_cos=norm["mem"],
        score=score,
    )


def write_score_table(table: ScoreTable, path: str | Path) -> None:
    lines = []
    for i in range(len(table)):
        x, y, w, h = table.bbox[i]
        lines.append(
            f"{table.video_id},{table.frame_index[i]},{table.object_id[i]},"
            f"{x:.2f},{y:.2f},{w:.2f},{h:.2f},{table.score[i]:.6f}\n"
        )
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_score_table(path: str | Path) -> ScoreTable:
    """Read a score file back; raw/normalized components come back as NaN."""
    frames, objects, boxes, scores = [], [], [], []
    video_id = Path(path).name.split(".")[0]
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 8:
            raise ConfigError(f"{path}: malformed score line {line!r}")
        video_id = parts[0]
        frames.append(int(parts[1]))
        objects.append(int(parts[2]))
        boxes.append([float(v) for v in parts[3:7]])
        scores.append(float(parts[7]))
    n = len(scores)
    nan = np.full(n, np.nan)
    return ScoreTable(
        video_id=video_id,
        frame_index=np.asarray(frames, dtype=np.int64),
        object_id=np.asarray(objects, dtype=np.int64),
        bbox=np.asarray(boxes, dtype=np.float64).reshape(n, 4),
        raw_rec_l2=nan,
        raw_rec_cos=nan.copy(),
        raw_mem_cos=nan.copy(),
        norm_rec_l2=nan.copy(),
        norm_rec_cos=nan.copy(),
        norm_mem_cos=nan.copy(),
        score=np.asarray(scores, dtype=np.float64),
    )
