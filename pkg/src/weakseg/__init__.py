"""Point-supervised segmentation with contextual adversarial training.

Point labels become buffered pseudo masks; a small U-Net segmenter is trained
against two discriminators that judge object cut-and-paste composites built
from nearby negative tiles. Predictions are thresholded, scored, and traced
into polygons.
"""
from .compositor import make_fake_negative, make_fake_positive, superimpose
from .dataio import ChipRecord, DatasetIndex, load_index, save_index
from .grid_context import ContextMap, TileGrid, build_context_map, classify_tiles, find_contexts
from .metrics import Confusion, MetricsReport, aggregate, binarize, confusion, eval_dataset, metrics
from .polygonize import Polygon, mask_to_polygons, simplify, to_geojson
from .pseudolabel import LabelConfig, make_pseudo_label
from .synthgen import SceneConfig, dataset_stats, generate_dataset
from .trainer import TrainConfig, TrainState, apply_context_mode, predict, train, train_step

__version__ = "0.1.0"

__all__ = [
    "ChipRecord", "Confusion", "ContextMap", "DatasetIndex", "LabelConfig", "MetricsReport",
    "Polygon", "SceneConfig", "TileGrid", "TrainConfig", "TrainState",
    "aggregate", "apply_context_mode", "binarize", "build_context_map", "classify_tiles",
    "confusion", "dataset_stats", "eval_dataset", "find_contexts", "generate_dataset",
    "load_index", "make_fake_negative", "make_fake_positive", "make_pseudo_label",
    "mask_to_polygons", "metrics", "predict", "save_index", "simplify", "superimpose",
    "to_geojson", "train", "train_step",
]
