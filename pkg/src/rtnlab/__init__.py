"""Multimodal sentiment and emotion models built on tensor fusion and a
recurrent layer over a video's segments, with from-scratch autodiff,
audio and text feature extraction, metrics and a training harness."""

from .dataio import (EMOTIONS, SegmentRecord, SynthConfig, VideoSequence, gen_synthetic, load_dataset,
                     product_oracle_accuracy, split_train_val, write_dataset)
from .errors import (ArgumentError, CheckpointError, ConfigError, DataError, DimensionError, NumericError,
                     ParseError, RtnlabError, UnsupportedArityError)
from .evalmetrics import (MetricsReport, binary_metrics, evaluate_model, majority_baseline, mae,
                          multiclass_metrics)
from .fusion import MODALITIES, early_fuse, fused_dim, tensor_fuse
from .models import (Model, ModelConfig, Prediction, build_model, discretize_sentiment, forward,
                     load_checkpoint, save_checkpoint)
from .ndtensor import Tape, Tensor, backward, check_gradients
from .trainer import TrainConfig, TrainLog, adam_step, gradcheck_suite, loss, run_ablation, train

__version__ = "0.1.0"

__all__ = [
    "EMOTIONS", "MODALITIES", "ArgumentError", "CheckpointError", "ConfigError", "DataError",
    "DimensionError", "MetricsReport", "Model", "ModelConfig", "NumericError", "ParseError",
    "Prediction", "RtnlabError", "SegmentRecord", "SynthConfig", "Tape", "Tensor", "TrainConfig",
    "TrainLog", "UnsupportedArityError", "VideoSequence", "adam_step", "backward", "binary_metrics",
    "build_model", "check_gradients", "discretize_sentiment", "early_fuse", "evaluate_model",
    "forward", "fused_dim", "gen_synthetic", "gradcheck_suite", "load_checkpoint", "load_dataset",
    "loss", "mae", "majority_baseline", "multiclass_metrics", "product_oracle_accuracy",
    "run_ablation", "save_checkpoint", "split_train_val", "tensor_fuse", "train", "write_dataset",
]
