"""Per-head block masks for heterogeneous strided sharding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ConfigError, LayerSchedule, PatternConfig


@dataclass(frozen=True, eq=False)
class HeadBlockMask:
    """Causal B x B block mask for one head; ``bits[i, j]`` is query block i -> key block j."""

    head_index: int
    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        if bits.ndim != 2 or bits.shape[0] != bits.shape[1]:
            raise ValueError(f"mask must be square, got shape {bits.shape}")

    @property
    def num_blocks(self) -> int:
        return self.bits.shape[0]

    def row(self, i: int) -> list[int]:
        return np.flatnonzero(self.bits[i]).tolist()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HeadBlockMask):
            return NotImplemented
        return self.head_index == other.head_index and np.array_equal(self.bits, other.bits)

    def same_pattern(self, other: "HeadBlockMask") -> bool:
        """Bitwise equality ignoring the head index."""
        return np.array_equal(self.bits, other.bits)


def dense_causal_bits(num_blocks: int) -> np.ndarray:
    return np.tril(np.ones((num_blocks, num_blocks), dtype=bool))


def build_head_mask(config: PatternConfig, head: int) -> HeadBlockMask:
    """Materialize the block mask of ``head`` under ``config``.

    Query block ``i`` admits key block ``j <= i`` when ``i - j`` is inside the
    local window and a multiple of ``local_stride``, or when ``i - j`` falls in
    a stride segment whose stripe (``j - offset`` a non-negative multiple of the
    segment stride) contains ``j``. The diagonal is always admitted.

    Under grouped attention every head of a KV group shares the group's
    offsets, so masks are homogeneous within a group.
    """
    if not 0 <= head < config.num_heads:
        raise ConfigError(f"head {head} out of range [0, {config.num_heads})", "head")
    config.validate()
    unit = config.group_of(head)
    nb = config.num_blocks
    i = np.arange(nb)[:, None]
    j = np.arange(nb)[None, :]
    dist = i - j

    bits = (dist >= 0) & (dist < config.local_blocks) & (dist % config.local_stride == 0)
    for seg in config.stride_segments:
        offset = config.segment_offset(seg, unit)
        in_range = (dist >= seg.start_block_distance) & (dist < config.segment_end(seg))
        on_stripe = (j >= offset) & ((j - offset) % seg.stride == 0)
        bits |= in_range & on_stripe
    bits[np.arange(nb), np.arange(nb)] = True
    return HeadBlockMask(head, bits)


def build_all_masks(config: PatternConfig) -> list[HeadBlockMask]:
    return [build_head_mask(config, h) for h in range(config.num_heads)]


def build_kv_masks(config: PatternConfig) -> list[HeadBlockMask]:
    """One mask per KV group (the pattern of its first query head), indexed by group."""
    return [
        HeadBlockMask(g, build_head_mask(config, g * config.group_size).bits)
        for g in range(config.num_kv_heads)
    ]


def dense_masks(config: PatternConfig) -> list[HeadBlockMask]:
    bits = dense_causal_bits(config.num_blocks)
    return [HeadBlockMask(h, bits) for h in range(config.num_heads)]


def build_layer_masks(schedule: LayerSchedule) -> list[list[HeadBlockMask]]:
    """Masks for every layer; dense layers get the full causal triangle on each head."""
    sparse = build_all_masks(schedule.sparse_pattern)
    dense = dense_masks(schedule.sparse_pattern)
    return [dense if layer in schedule.dense_layer_ids else sparse for layer in range(schedule.num_layers)]
