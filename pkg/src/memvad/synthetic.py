"""Synthetic feature datasets for desk-scale verification.

Normal behaviour is a small set of "action" clusters, each a unit-norm
appearance direction plus a mean motion magnitude/angle pattern. Objects
persist over frames as tracks with smoothly moving boxes; every record of
a track samples its cluster with fresh noise.

Test videos inject two anomaly kinds at track granularity:

* held-out cluster — appearance and motion drawn from an extra cluster
  never seen in training;
* direction anomaly — a normal sample whose appearance vector is negated,
  motion left normal. The L2 reconstruction error of these is buried in
  the (deliberately heteroscedastic) motion noise, so detecting them
  hinges on the cosine score component.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError
from .features import FeatureRecord, VideoFeatureSet
from .groundtruth import GroundTruth, Region


@dataclass
class SynthConfig:
    """Knobs of the synthetic generator. Defaults suit the end-to-end run."""

    n_clusters: int = 3
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

    def validate(self) -> None:
        if self.n_clusters < 1:
            raise ConfigError(f"n_clusters must be >= 1, got {self.n_clusters}")
        if not 0.0 <= self.anomaly_rate <= 1.0:
            raise ConfigError(
                f"anomaly_rate must be in [0, 1], got {self.anomaly_rate}"
            )
        if not 0.0 <= self.direction_anomaly_fraction <= 1.0:
            raise ConfigError("direction_anomaly_fraction must be in [0, 1]")
        if self.d_app < 1 or self.d_mo < 1:
            raise ConfigError("feature dimensions must be positive")
        if self.train_videos < 0 or self.test_videos < 0:
            raise ConfigError("video counts must be >= 0")
        if self.frames_per_video < 1:
            raise ConfigError("frames_per_video must be >= 1")
        if self.tracks_per_video < 0:
            raise ConfigError("tracks_per_video must be >= 0")
        if not 1 <= self.min_track_length <= self.max_track_length:
            raise ConfigError("need 1 <= min_track_length <= max_track_length")
        if not 0.0 < self.motion_noise_min <= self.motion_noise_max:
            raise ConfigError("need 0 < motion_noise_min <= motion_noise_max")
        if self.heldout_motion_offset < 0:
            raise ConfigError("heldout_motion_offset must be >= 0")
        if self.appearance_noise < 0 or self.angle_noise < 0:
            raise ConfigError("noise levels must be >= 0")
        if self.frame_width < 10 or self.frame_height < 10:
            raise ConfigError("frame size too small")


class SyntheticData(NamedTuple):
    train: list[VideoFeatureSet]
    test: list[VideoFeatureSet]
    gt: dict[str, GroundTruth]


class _Prototypes(NamedTuple):
    app_dirs: np.ndarray  # (n_clusters + 1, d_app), unit rows; last is held out
    mag_means: np.ndarray  # (n_clusters + 1, d_mo)
    ang_means: np.ndarray  # (n_clusters + 1, d_mo)


def _draw_prototypes(cfg: SynthConfig, rng: np.random.Generator) -> _Prototypes:
    dirs = rng.standard_normal((cfg.n_clusters + 1, cfg.d_app))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    mags = cfg.motion_scale * rng.uniform(0.5, 1.5, (cfg.n_clusters + 1, cfg.d_mo))
    # The held-out action is systematically more energetic, so its motion
    # pattern is guaranteed to sit outside the normal clusters instead of
    # depending on a lucky draw.
    mags[cfg.n_clusters] += cfg.motion_scale * cfg.heldout_motion_offset
    angs = rng.uniform(0.15, 0.85, (cfg.n_clusters + 1, cfg.d_mo))
    return _Prototypes(dirs, mags, angs)


def _anomalous_tracks(
    cfg: SynthConfig, rng: np.random.Generator
) -> tuple[set[int], set[int]]:
    """Pick anomalous track ids for one test video.

    The anomalous count per video is rate*tracks with stochastic rounding,
    so the overall fraction of anomalous objects matches the configured
    rate while every video receives its expected share (no all-normal
    videos at the default settings). The direction/held-out split follows
    direction_anomaly_fraction.
    """
    expected = cfg.anomaly_rate * cfg.tracks_per_video
    count = int(expected) + (1 if rng.uniform() < expected - int(expected) else 0)
    count = min(count, cfg.tracks_per_video)
    chosen = rng.choice(cfg.tracks_per_video, size=count, replace=False)
    n_direction = int(count * cfg.direction_anomaly_fraction + 0.5)
    return set(int(t) for t in chosen[:n_direction]), set(
        int(t) for t in chosen[n_direction:]
    )


def _make_video(
    cfg: SynthConfig,
    rng: np.random.Generator,
    protos: _Prototypes,
    video_id: str,
    with_anomalies: bool,
) -> tuple[VideoFeatureSet, GroundTruth]:
    held_out = cfg.n_clusters  # index of the anomalous prototype
    frame_labels = np.zeros(cfg.frames_per_video, dtype=np.uint8)
    regions: list[Region] = []
    rows: list[FeatureRecord] = []

    if with_anomalies:
        direction_tracks, heldout_tracks = _anomalous_tracks(cfg, rng)
    else:
        direction_tracks, heldout_tracks = set(), set()

    for track_id in range(cfg.tracks_per_video):
        cluster = int(rng.integers(cfg.n_clusters))
        length = int(
            rng.integers(cfg.min_track_length, cfg.max_track_length + 1)
        )
        length = min(length, cfg.frames_per_video)
        start = int(rng.integers(0, cfg.frames_per_video - length + 1))
        w = cfg.frame_width * rng.uniform(0.05, 0.12)
        h = cfg.frame_height * rng.uniform(0.08, 0.20)
        x0 = rng.uniform(0.0, cfg.frame_width - w)
        y0 = rng.uniform(0.0, cfg.frame_height - h)
        vx, vy = rng.uniform(-3.0, 3.0, 2)

        direction_anomaly = track_id in direction_tracks
        anomalous = direction_anomaly or track_id in heldout_tracks
        source_cluster = held_out if track_id in heldout_tracks else cluster
        if anomalous:
            frame_labels[start : start + length] = 1

        for frame in range(start, start + length):
            t = frame - start
            x = float(np.clip(x0 + vx * t, 0.0, cfg.frame_width - w))
            y = float(np.clip(y0 + vy * t, 0.0, cfg.frame_height - h))
            # boxes are stored as f32; keep them exactly representable
            bbox = tuple(float(v) for v in np.array([x, y, w, h], dtype=np.float32))

            app = protos.app_dirs[source_cluster] + cfg.appearance_noise * (
                rng.standard_normal(cfg.d_app)
            )
            app /= np.linalg.norm(app)
            if direction_anomaly:
                app = -app
            sigma = rng.uniform(cfg.motion_noise_min, cfg.motion_noise_max)
            mag = np.clip(
                protos.mag_means[source_cluster]
                + sigma * rng.standard_normal(cfg.d_mo),
                0.0,
                None,
            )
            ang = np.clip(
                protos.ang_means[source_cluster]
                + cfg.angle_noise * rng.standard_normal(cfg.d_mo),
                0.0,
                1.0,
            )
            rows.append(
                FeatureRecord(
                    frame_index=frame,
                    object_id=track_id,
                    bbox=bbox,
                    x_app=app.astype(np.float32),
                    x_mag=mag.astype(np.float32),
                    x_ang=ang.astype(np.float32),
                )
            )
            if anomalous:
                regions.append(Region(frame, track_id, bbox))

    rows.sort(key=lambda r: (r.frame_index, r.object_id))
    fset = VideoFeatureSet(
        video_id=video_id,
        frame_count=cfg.frames_per_video,
        frame_width=cfg.frame_width,
        frame_height=cfg.frame_height,
        d_app=cfg.d_app,
        d_mo=cfg.d_mo,
        records=rows,
    )
    gt = GroundTruth(frame_labels=frame_labels, regions=regions)
    return fset, gt


def generate_synthetic(config: SynthConfig, seed: int) -> SyntheticData:
    """Generate (train, test, gt) deterministically from the seed.

    Train videos contain only normal tracks; test videos flip a Bernoulli
    coin per track at ``anomaly_rate``. The ground truth marks exactly the
    injected anomalies, one region per anomalous track per frame.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    protos = _draw_prototypes(config, rng)

    train = []
    for i in range(config.train_videos):
        fset, _ = _make_video(config, rng, protos, f"train_{i:03d}", False)
        train.append(fset)

    test = []
    gt: dict[str, GroundTruth] = {}
    for i in range(config.test_videos):
        video_id = f"test_{i:03d}"
        fset, video_gt = _make_video(config, rng, protos, video_id, True)
        test.append(fset)
        gt[video_id] = video_gt

    return SyntheticData(train=train, test=test, gt=gt)
