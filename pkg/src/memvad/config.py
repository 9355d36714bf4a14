"""Run configuration: a flat key=value file plus command-line overrides.

The config file format is plain text, one ``key = value`` per line;
``#`` starts a comment. Values are coerced from the type of each field's
default, so the file stays trivially diffable. Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .losses import LossWeights
from .postprocess import SmoothingConfig
from .synthetic import SynthConfig
from .training import TrainConfig


@dataclass
class RunConfig:
    # paths (commands validate the ones they need)
    train_manifest: str = ""
    test_manifest: str = ""
    gt_dir: str = ""
    scores_dir: str = ""
    checkpoint: str = ""
    out_dir: str = ""
    seed: int = 7

    # synthetic generator
    clusters: int = 3
    d_app: int = 512
    d_mo: int = 256
    train_videos: int = 40
    test_videos: int = 20
    frames_per_video: int = 90
    tracks_per_video: int = 20
    anomaly_rate: float = 0.1
    direction_anomaly_fraction: float = 0.5
    appearance_noise: float = 0.25
    motion_noise_min: float = 0.08
    motion_noise_max: float = 0.12
    motion_scale: float = 0.1
    heldout_motion_offset: float = 1.3
    angle_noise: float = 0.05
    min_track_length: int = 30
    max_track_length: int = 70
    frame_width: int = 640
    frame_height: int = 360

    # training
    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 256
    d_h: int = 128
    n_items: int = 40
    lambda_cos: float = 0.1
    lambda_comp: float = 1.6
    lambda_tr: float = 0.2
    lambda_ole: float = 0.3
    delta: float = 1.0
    margin: float = 1.0

    # scoring / post-processing
    score_components: str = "rec_l2,rec_cos,mem"
    smoothing: bool = True
    temporal_radius: int = 2
    association_min_iou: float = 0.2
    gaussian_sigma: float = 3.0
    scale_adjust: bool = False

    # metrics
    region_overlap: float = 0.1
    track_fraction: float = 0.1
    overlap_mode: str = "coverage"
    auc_average: str = "micro"
    figures: bool = True

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            n_clusters=self.clusters,
            d_app=self.d_app,
            d_mo=self.d_mo,
            train_videos=self.train_videos,
            test_videos=self.test_videos,
            frames_per_video=self.frames_per_video,
            tracks_per_video=self.tracks_per_video,
            anomaly_rate=self.anomaly_rate,
            direction_anomaly_fraction=self.direction_anomaly_fraction,
            appearance_noise=self.appearance_noise,
            motion_noise_min=self.motion_noise_min,
            motion_noise_max=self.motion_noise_max,
            motion_scale=self.motion_scale,
            heldout_motion_offset=self.heldout_motion_offset,
            angle_noise=self.angle_noise,
            min_track_length=self.min_track_length,
            max_track_length=self.max_track_length,
            frame_width=self.frame_width,
            frame_height=self.frame_height,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            seed=self.seed,
            d_h=self.d_h,
            n_items=self.n_items,
            weights=LossWeights(
                lambda_cos=self.lambda_cos,
                lambda_comp=self.lambda_comp,
                lambda_tr=self.lambda_tr,
                lambda_ole=self.lambda_ole,
                delta=self.delta,
                margin=self.margin,
            ),
        )

    def smoothing_config(self) -> SmoothingConfig:
        return SmoothingConfig(
            temporal_radius=self.temporal_radius,
            association_min_iou=self.association_min_iou,
            gaussian_sigma=self.gaussian_sigma,
            scale_adjust=self.scale_adjust,
        )

    def components(self) -> tuple[str, ...]:
        return tuple(
            c.strip() for c in self.score_components.split(",") if c.strip()
        )


_FIELD_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {raw!r}") from exc


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_run_config(
    config_path: str | Path | None, overrides: dict[str, object] | None = None
) -> RunConfig:
    """Defaults, then config-file values, then explicit overrides."""
    cfg = RunConfig()
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        values = parse_config_text(path.read_text(encoding="utf-8"), str(path))
        for key, value in values.items():
            setattr(cfg, key, value)
    for key, value in (overrides or {}).items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, str):
            value = _coerce(key, value)
        setattr(cfg, key, value)
    return cfg
