"""ulws: ultra-lightweight multimodal sleep-stage scoring.

EDF/EDF+ ingestion, a self-contained numpy training/inference engine for
a dual-stream separable-convolution network, closed-form complexity
accounting, and a subject-wise cross-validation harness, all behind one
CLI (`ulws preprocess | count | train | evaluate | predict`).
"""

__version__ = "0.1.0"

from .model import ModelConfig, build_model, model_forward, predict  # noqa: F401
from .preprocess import EpochDataset, StageClass, read_cache, write_cache  # noqa: F401
from .training import TrainConfig, subject_folds, train_fold  # noqa: F401
