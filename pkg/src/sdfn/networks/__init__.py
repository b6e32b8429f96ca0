"""Mini DenseNet classifier, mini U-Net segmenter, training loops, weight files."""
from .models import (FusionConfig, FusionHead, MiniDenseNet, MiniDenseNetConfig, MiniUNet, MiniUNetConfig, build_model,
                     densenet_forward, unet_forward)
from .persist import (WeightFileError, checksum, decode_weights, encode_weights, load_weights,
                      save_weights)
from .training import (Dataset, TrainConfig, TrainedModel, mean_defined_auc, predict,
                       select_checkpoint, split_validation, train_classifier, train_segmenter)

__all__ = [
    "Dataset", "FusionConfig", "FusionHead", "MiniDenseNet", "MiniDenseNetConfig", "MiniUNet", "MiniUNetConfig", "TrainConfig",
    "TrainedModel", "WeightFileError", "build_model", "checksum", "decode_weights",
    "densenet_forward", "encode_weights", "load_weights", "mean_defined_auc", "predict",
    "save_weights", "select_checkpoint", "split_validation", "train_classifier",
    "train_segmenter", "unet_forward",
]
