"""Pillar-based 3-D detection with a dense one-shot-aggregation backbone.

Thin wrapper over the C++ core. Boxes are (N, 7) float64 arrays of
cx, cy, cz, w, l, h, yaw; point clouds are (N, 4) float32 arrays of
x, y, z, reflectance.
"""

from ._core import (
    ConfigError,
    DensePillarsError,
    Detector,
    FormatError,
    InvariantError,
    IoError,
    analyze,
    analyze_csv,
    count_backbone_params,
    describe_config,
    evaluate,
    gradcheck,
    growth_rates,
    iou_3d,
    nms_bev,
    read_kitti_bin,
    read_labels_csv,
    rotated_iou_bev,
    synth_scene,
    train,
    write_kitti_bin,
)

__all__ = [
    "ConfigError",
    "DensePillarsError",
    "Detector",
    "FormatError",
    "InvariantError",
    "IoError",
    "analyze",
    "analyze_csv",
    "count_backbone_params",
    "describe_config",
    "evaluate",
    "gradcheck",
    "growth_rates",
    "iou_3d",
    "nms_bev",
    "read_kitti_bin",
    "read_labels_csv",
    "rotated_iou_bev",
    "synth_scene",
    "train",
    "write_kitti_bin",
]
