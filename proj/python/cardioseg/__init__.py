"""Cardiac MR segmentation: synthetic phantoms, NIfTI I/O, metrics and inference."""

from ._core import (
    LV,
    MYO,
    RV,
    Error,
    Predictor,
    clinical_stats,
    dice_score,
    ejection_fraction,
    generate_phantom,
    gradcheck,
    hausdorff_mm,
    lr_at_epoch,
    make_folds,
    read_dataset,
    read_nifti,
    structure_volume_ml,
    write_labels,
    write_nifti,
)

__all__ = [
    "LV",
    "MYO",
    "RV",
    "Error",
    "Predictor",
    "clinical_stats",
    "dice_score",
    "ejection_fraction",
    "generate_phantom",
    "gradcheck",
    "hausdorff_mm",
    "lr_at_epoch",
    "make_folds",
    "read_dataset",
    "read_nifti",
    "structure_volume_ml",
    "write_labels",
    "write_nifti",
]
