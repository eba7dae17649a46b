"""Scribble-supervised segmentation toolkit."""

from scribbleseg._core import (
    BackendError,
    Box,
    DataError,
    Predictor,
    ScribblesegError,
    ValidationError,
    augment_box,
    intersect,
    load_image,
    load_mask,
    load_scribble,
    lr_at,
    make_prompt,
    make_synthetic_dataset,
    mask_scribble_agreement,
    partial_ce,
    prediction_to_box,
    run_cli,
    score_image,
    scribble_to_box,
    weighted_seg_loss,
)

__all__ = [
    "BackendError",
    "Box",
    "DataError",
    "Predictor",
    "ScribblesegError",
    "ValidationError",
    "augment_box",
    "intersect",
    "load_image",
    "load_mask",
    "load_scribble",
    "lr_at",
    "make_prompt",
    "make_synthetic_dataset",
    "mask_scribble_agreement",
    "partial_ce",
    "prediction_to_box",
    "run_cli",
    "score_image",
    "scribble_to_box",
    "weighted_seg_loss",
]
