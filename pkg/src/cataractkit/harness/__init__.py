from .augment import PRESETS, REGISTRY, AugSpec, Augmenter, build_augmenter
from .config import TrainConfig, config_hash, load_config, read_mapping
from .data import SegmentationFolder, synthetic_pair, write_synthetic_folder
from .metrics import MetricReport, classification_metrics, iou_dice
from .train import evaluate_segmentation, lr_at_epoch, seed_everything, train_loop, write_history

__all__ = [
    "PRESETS", "REGISTRY", "AugSpec", "Augmenter", "build_augmenter", "TrainConfig", "config_hash",
    "load_config", "read_mapping", "SegmentationFolder", "synthetic_pair", "write_synthetic_folder",
    "MetricReport", "classification_metrics", "iou_dice", "evaluate_segmentation", "lr_at_epoch",
    "seed_everything", "train_loop", "write_history",
]
