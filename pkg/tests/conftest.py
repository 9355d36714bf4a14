import numpy as np
import pytest

from memvad.synthetic import SynthConfig, generate_synthetic
from memvad.training import TrainConfig, train

# Desk-size dataset reused across test modules; big enough to train a
# model that separates anomalies, small enough to keep the suite fast.
SMALL_SYNTH = dict(
    d_app=48,
    d_mo=24,
    train_videos=5,
    test_videos=4,
    frames_per_video=50,
    tracks_per_video=8,
    anomaly_rate=0.25,
    min_track_length=20,
    max_track_length=40,
)


@pytest.fixture(scope="session")
def small_data():
    return generate_synthetic(SynthConfig(**SMALL_SYNTH), seed=11)


@pytest.fixture(scope="session")
def small_model(small_data):
    config = TrainConfig(epochs=6, batch_size=128, seed=11, d_h=16, n_items=12)
    return train(small_data.train, config)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
