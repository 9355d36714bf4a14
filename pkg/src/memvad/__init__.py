"""Memory-guided object-level video anomaly detection.

A numpy implementation of an object-centric autoencoder with a learnable
prototype memory, trained from scratch on appearance/motion features, plus
the spatio-temporal evaluation suite (frame-level ROC AUC, region- and
track-based detection criteria).
"""

__version__ = "0.1.0"

from .errors import (
    CheckpointError,
    ConfigError,
    CorruptFileError,
    DimensionError,
    FeatureFormatError,
    FeatureValidationError,
    MemvadError,
    NumericError,
    UndefinedMetricError,
)
from .features import (
    FeatureRecord,
    VideoFeatureSet,
    read_features,
    read_manifest,
    write_features,
    write_manifest,
)
from .groundtruth import GroundTruth, Region, read_ground_truth, write_ground_truth
from .losses import (
    Batch,
    BatchAssignment,
    LossWeights,
    batch_loss_terms,
    loss_comp,
    loss_ole,
    loss_rec,
    loss_triplet,
    total_loss_and_grads,
)
from .metrics import CurveResult, Detection, frame_auc, rbdc, roc_curve, tbdc
from .network import (
    ForwardTrace,
    ModelParams,
    NetworkSpec,
    encode_fuse,
    forward,
    init_params,
    load_checkpoint,
    memory_read,
    save_checkpoint,
)
from .postprocess import (
    SmoothingConfig,
    frame_scores,
    scale_adjust,
    smooth_object_scores,
)
from .scoring import RawComponents, ScoreTable, normalize_video, raw_components, score_video
from .synthetic import SynthConfig, generate_synthetic
from .training import AdamState, TrainConfig, adam_step, gradient_check, train

__all__ = [name for name in dir() if not name.startswith("_")]
