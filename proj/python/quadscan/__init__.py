"""Quad-modal scan fusion: scan orders, selective scan, synthetic data, metrics."""

from ._core import (
    ConfigError,
    GeometryError,
    ShapeError,
    fusion_flops,
    generate,
    iou,
    run,
    scan_core,
    scan_order,
    score,
)

__all__ = [
    "ConfigError",
    "GeometryError",
    "ShapeError",
    "fusion_flops",
    "generate",
    "iou",
    "run",
    "scan_core",
    "scan_order",
    "score",
]
