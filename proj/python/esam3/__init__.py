"""Desk-scale progressive hierarchical distillation for promptable concept segmentation."""

from ._core import (
    Error,
    attention_cost,
    bench_readout,
    boundary_f,
    desk_preset,
    dice_loss,
    eval_jf,
    eval_miou,
    eval_miou_checkpoint,
    feature_mse,
    focal_loss,
    gen_clip,
    gen_scene,
    hungarian,
    lr_at,
    mask_cost,
    mask_iou,
    model_zoo,
    full_preset,
    scene_config,
    score_bce,
    train,
)

__all__ = [
    "Error",
    "attention_cost",
    "bench_readout",
    "boundary_f",
    "desk_preset",
    "dice_loss",
    "eval_jf",
    "eval_miou",
    "eval_miou_checkpoint",
    "feature_mse",
    "focal_loss",
    "gen_clip",
    "gen_scene",
    "hungarian",
    "lr_at",
    "mask_cost",
    "mask_iou",
    "model_zoo",
    "full_preset",
    "scene_config",
    "score_bce",
    "train",
]
