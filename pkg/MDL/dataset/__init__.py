"""Init file."""
from .volume import Volume, load_dataset, load_folds, load_volume, save_dataset, save_volume
from .phantom import (
    PhantomConfig,
    PhantomGeometry,
    generate_from_config,
    generate_phantom_dataset,
    phantom_geometries,
)
from .dataset import (
    AUGMENTATION_OPS,
    AugmentationPolicy,
    FoldAssignment,
    OpRange,
    augment,
    oversample_indices,
    stratified_kfold,
    tta_predict,
)

__all__ = [
    "Volume",
    "load_dataset",
    "load_folds",
    "load_volume",
    "save_dataset",
    "save_volume",
    "PhantomConfig",
    "PhantomGeometry",
    "generate_from_config",
    "generate_phantom_dataset",
    "phantom_geometries",
    "AUGMENTATION_OPS",
    "AugmentationPolicy",
    "FoldAssignment",
    "OpRange",
    "augment",
    "oversample_indices",
    "stratified_kfold",
    "tta_predict",
]
