"""Heterogeneous strided context sharding for block-sparse attention."""

from .config import (
    ConfigError,
    LayerSchedule,
    PatternConfig,
    StrideSegment,
    dense_config,
    multi_stride_config,
    sliding_window_config,
    strided_config,
)
from .pattern import HeadBlockMask, build_all_masks, build_head_mask, build_layer_masks
from .sparse_format import CsrMask, from_csr, nnz_per_head, to_csr

__all__ = [
    "ConfigError",
    "CsrMask",
    "HeadBlockMask",
    "LayerSchedule",
    "PatternConfig",
    "StrideSegment",
    "build_all_masks",
    "build_head_mask",
    "build_layer_masks",
    "dense_config",
    "from_csr",
    "multi_stride_config",
    "nnz_per_head",
    "sliding_window_config",
    "strided_config",
    "to_csr",
]
