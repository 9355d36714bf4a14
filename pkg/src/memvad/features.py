"""Object-level feature records and the OMF1 binary feature file.

One OMF1 file holds every detected object of a single video: bounding box,
an appearance vector, and flattened motion magnitude/angle maps. All
multi-byte values are little-endian; feature payloads are float32.

Layout::

    header (36 bytes):
        magic          4 bytes  b"OMF1"
        version        u32      1
        d_app          u32      appearance vector length
        d_mo           u32      motion map length (per map)
        frame_count    u32
        frame_width    u32
        frame_height   u32
        record_count   u64
    records (record_count times):
        frame_index    u32
        object_id      u32
        bbox           4 x f32  (x, y, w, h)
        x_app          d_app x f32
        x_mag          d_mo  x f32
        x_ang          d_mo  x f32   each entry in [0, 1]

The video id is not stored in the file; by convention a video's features
live in ``<video_id>.omf1`` and the reader recovers the id from the file
stem. A dataset is a plain-text manifest with one feature-file path per
line, relative to the manifest's directory.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptFileError, FeatureFormatError, FeatureValidationError

MAGIC = b"OMF1"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4s6IQ")
HEADER_SIZE = _HEADER.size  # 36 bytes


def record_dtype(d_app: int, d_mo: int) -> np.dtype:
    """Structured dtype of one on-disk record."""
    return np.dtype(
        [
            ("frame_index", "<u4"),
            ("object_id", "<u4"),
            ("bbox", "<f4", (4,)),
            ("x_app", "<f4", (d_app,)),
            ("x_mag", "<f4", (d_mo,)),
            ("x_ang", "<f4", (d_mo,)),
        ]
    )


def record_size(d_app: int, d_mo: int) -> int:
    """Bytes per record: 8 id bytes + 16 bbox bytes + 4*(d_app + 2*d_mo)."""
    return record_dtype(d_app, d_mo).itemsize


@dataclass
class FeatureRecord:
    """Appearance and motion features of one detected object."""

    frame_index: int
    object_id: int
    bbox: tuple[float, float, float, float]
    x_app: np.ndarray
    x_mag: np.ndarray
    x_ang: np.ndarray

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureRecord):
            return NotImplemented
        return (
            self.frame_index == other.frame_index
            and self.object_id == other.object_id
            and self.bbox == other.bbox
            and np.array_equal(self.x_app, other.x_app)
            and np.array_equal(self.x_mag, other.x_mag)
            and np.array_equal(self.x_ang, other.x_ang)
        )


@dataclass
class VideoFeatureSet:
    """All feature records of one video, sorted by (frame_index, object_id)."""

    video_id: str
    frame_count: int
    frame_width: int
    frame_height: int
    d_app: int
    d_mo: int
    records: list[FeatureRecord] = field(default_factory=list)

    def validate(self) -> None:
        """Raise :class:`FeatureValidationError` on any invariant violation."""
        if self.frame_count < 1:
            raise FeatureValidationError(
                f"{self.video_id}: frame_count must be >= 1, got {self.frame_count}"
            )
        if self.frame_width < 1 or self.frame_height < 1:
            raise FeatureValidationError(
                f"{self.video_id}: frame size must be positive"
            )
        if self.d_app < 1 or self.d_mo < 1:
            raise FeatureValidationError(
                f"{self.video_id}: feature dimensions must be positive"
            )
        prev_key = None
        for i, rec in enumerate(self.records):
            where = f"{self.video_id} record {i}"
            if rec.frame_index < 0 or rec.frame_index >= self.frame_count:
                raise FeatureValidationError(
                    f"{where}: frame_index {rec.frame_index} outside "
                    f"[0, {self.frame_count})"
                )
            if rec.object_id < 0:
                raise FeatureValidationError(f"{where}: negative object_id")
            key = (rec.frame_index, rec.object_id)
            if prev_key is not None and key <= prev_key:
                raise FeatureValidationError(
                    f"{where}: records not strictly sorted by "
                    f"(frame_index, object_id)"
                )
            prev_key = key
            x, y, w, h = rec.bbox
            if not (w > 0 and h > 0):
                raise FeatureValidationError(f"{where}: bbox w and h must be > 0")
            if not np.isfinite([x, y, w, h]).all():
                raise FeatureValidationError(f"{where}: non-finite bbox")
            if rec.x_app.shape != (self.d_app,):
                raise FeatureValidationError(
                    f"{where}: x_app has shape {rec.x_app.shape}, "
                    f"expected ({self.d_app},)"
                )
            if rec.x_mag.shape != (self.d_mo,) or rec.x_ang.shape != (self.d_mo,):
                raise FeatureValidationError(
                    f"{where}: motion maps must have shape ({self.d_mo},)"
                )
            if not (
                np.isfinite(rec.x_app).all()
                and np.isfinite(rec.x_mag).all()
                and np.isfinite(rec.x_ang).all()
            ):
                raise FeatureValidationError(f"{where}: non-finite feature values")
            if rec.x_ang.min(initial=0.0) < 0.0 or rec.x_ang.max(initial=0.0) > 1.0:
                raise FeatureValidationError(
                    f"{where}: angle map entries outside [0, 1]"
                )

    def __eq__(self, other) -> bool:
        if not isinstance(other, VideoFeatureSet):
            return NotImplemented
        return (
            self.video_id == other.video_id
            and self.frame_count == other.frame_count
            and self.frame_width == other.frame_width
            and self.frame_height == other.frame_height
            and self.d_app == other.d_app
            and self.d_mo == other.d_mo
            and self.records == other.records
        )


def write_features(fset: VideoFeatureSet, path: str | Path) -> None:
    """Write ``fset`` to ``path`` in the OMF1 layout.

    The set is validated first; nothing is written if an invariant fails.
    ``path`` should be ``<video_id>.omf1`` so the reader can recover the
    video id.
    """
    fset.validate()
    path = Path(path)
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        fset.d_app,
        fset.d_mo,
        fset.frame_count,
        fset.frame_width,
        fset.frame_height,
        len(fset.records),
    )
    table = np.empty(len(fset.records), dtype=record_dtype(fset.d_app, fset.d_mo))
    for i, rec in enumerate(fset.records):
        row = table[i]
        row["frame_index"] = rec.frame_index
        row["object_id"] = rec.object_id
        row["bbox"] = np.asarray(rec.bbox, dtype=np.float32)
        row["x_app"] = rec.x_app
        row["x_mag"] = rec.x_mag
        row["x_ang"] = rec.x_ang
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(table.tobytes())


def read_features(path: str | Path) -> VideoFeatureSet:
    """Read an OMF1 file and return a validated, sorted VideoFeatureSet.

    Raises FeatureFormatError for foreign files, CorruptFileError when the
    payload size disagrees with the header, and FeatureValidationError for
    invariant violations (non-finite values, bad angle range, ...).
    """
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < HEADER_SIZE:
        raise FeatureFormatError(f"{path}: shorter than the OMF1 header")
    magic, version, d_app, d_mo, frame_count, fw, fh, n_records = _HEADER.unpack(
        blob[:HEADER_SIZE]
    )
    if magic != MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FeatureFormatError(f"{path}: unsupported version {version}")
    if d_app < 1 or d_mo < 1:
        raise CorruptFileError(f"{path}: non-positive feature dimensions in header")
    payload = blob[HEADER_SIZE:]
    rsize = record_size(d_app, d_mo)
    if len(payload) != n_records * rsize:
        raise CorruptFileError(
            f"{path}: expected {n_records} records "
            f"({n_records * rsize} bytes), found {len(payload)} bytes"
        )
    table = np.frombuffer(payload, dtype=record_dtype(d_app, d_mo))
    records = [
        FeatureRecord(
            frame_index=int(row["frame_index"]),
            object_id=int(row["object_id"]),
            bbox=tuple(float(v) for v in row["bbox"]),
            x_app=np.array(row["x_app"], dtype=np.float32),
            x_mag=np.array(row["x_mag"], dtype=np.float32),
            x_ang=np.array(row["x_ang"], dtype=np.float32),
        )
        for row in table
    ]
    records.sort(key=lambda r: (r.frame_index, r.object_id))
    fset = VideoFeatureSet(
        video_id=path.stem,
        frame_count=frame_count,
        frame_width=fw,
        frame_height=fh,
        d_app=d_app,
        d_mo=d_mo,
        records=records,
    )
    fset.validate()
    return fset


def write_manifest(paths: list[str | Path], manifest_path: str | Path) -> None:
    """Write one feature-file path per line, relative to the manifest dir."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    lines = []
    for p in paths:
        p = Path(p)
        try:
            rel = p.relative_to(base)
        except ValueError:
            rel = p
        lines.append(str(rel))
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(manifest_path: str | Path) -> list[Path]:
    """Return the feature-file paths listed in a manifest, resolved."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    out = []
    for line in manifest_path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        p = Path(line)
        out.append(p if p.is_absolute() else base / p)
    return out
