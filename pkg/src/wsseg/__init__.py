"""Weakly supervised semantic segmentation of aerial point clouds with numpy."""

from .core import (IGNORE, AugmentConfig, ClassCatalog, PointCloud, SpatialIndex,
                   SubsampleMapping, augment, grid_subsample, radius_query, rng_stream,
                   transfer_labels)
from .losses import EnsembleStore, PredictionMatrix, combined_loss, ema_update, rampup_weight
from .metrics import MetricsReport, confusion, entropy_map, metrics
from .model import DivergenceError, ModelParameters, load_checkpoint, save_checkpoint
from .sampler import BatchSpec, PotentialField, init_potentials, next_train_batch, test_batches
from .synth import SCENE_CLASSES, SceneSpec, synth_scene
from .trainer import TrainResult, TrainSchedule, predict_full, train
from .weak_labels import WeakLabelSet, cap_for_ratio, sample_weak_labels

__version__ = "0.1.0"

__all__ = [
    "IGNORE", "AugmentConfig", "BatchSpec", "ClassCatalog", "DivergenceError", "EnsembleStore",
    "MetricsReport", "ModelParameters", "PointCloud", "PotentialField", "PredictionMatrix",
    "SCENE_CLASSES", "SceneSpec", "SpatialIndex", "SubsampleMapping", "TrainResult",
    "TrainSchedule", "WeakLabelSet", "augment", "cap_for_ratio", "combined_loss", "confusion",
    "ema_update", "entropy_map", "grid_subsample", "init_potentials", "load_checkpoint",
    "metrics", "next_train_batch", "predict_full", "radius_query", "rampup_weight",
    "rng_stream", "sample_weak_labels", "save_checkpoint", "synth_scene", "test_batches",
    "train", "transfer_labels",
]
