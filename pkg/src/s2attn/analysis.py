"""FLOPs and KV-cache arithmetic for strided sharding, plus a decode-time cache simulator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .config import LayerSchedule, PatternConfig
from .pattern import HeadBlockMask, build_all_masks, build_kv_masks, dense_causal_bits
from .sparse_format import nnz_per_head, to_csr


@dataclass(frozen=True)
class FlopsReport:
    dense_flops: float
    sparse_flops: float
    reduction_factor: float
    equivalent_context: float
    analytic_reduction: Optional[float] = None


@dataclass(frozen=True)
class CacheSchedule:
    """Per-unit decode cache trace (a unit is a KV head).

    ``evict_after[u, j]`` is the last query block that attends key block j.
    ``retained_blocks`` and ``dead_blocks`` are indexed by query block;
    ``occupancy`` by decode step, in tokens.
    """

    block_size: int
    total_tokens: int
    evict_after: np.ndarray
    retained_blocks: np.ndarray
    dead_blocks: np.ndarray
    occupancy: np.ndarray

    @property
    def peak_tokens(self) -> np.ndarray:
        return self.occupancy.max(axis=1)

    @property
    def mean_tokens(self) -> np.ndarray:
        return self.occupancy.mean(axis=1)

    @property
    def final_tokens(self) -> np.ndarray:
        """Occupancy at the last decode step (steady state)."""
        return self.occupancy[:, -1]

    def retained_set(self, unit: int, query_block: int) -> list[int]:
        ea = self.evict_after[unit]
        return [j for j in range(query_block + 1) if ea[j] >= query_block]


def equivalent_context_length(N: float, L: float, v: float) -> float:
    """Tokens each head attends: the dense local window plus every v-th remote token."""
    if v < 1:
        raise ValueError(f"stride must be >= 1, got {v}")
    if not 1 <= L <= N:
        raise ValueError(f"local window {L} must lie in [1, {N}]")
    return L + (N - L) / v


def flops_reduction(N: float, L: float, v: float) -> float:
    return N / equivalent_context_length(N, L, v)


def speedup_upper_bound(num_heads: int, N: float, L: float) -> float:
    """Reduction at the largest stride the union constraint allows (one stripe per head)."""
    if num_heads < 1 or N <= 0 or L <= 0:
        raise ValueError("inputs must be positive")
    return flops_reduction(N, L, num_heads)


def block_pair_flops(nnz: int, head_dim: int, block_size: int) -> float:
    """QK^T plus PV work for ``nnz`` admitted block pairs."""
    return 4.0 * head_dim * block_size * block_size * nnz


def exact_flops(config: PatternConfig, head_dim: int) -> FlopsReport:
    """Count admitted block pairs across heads and compare with causal dense attention.

    Both sides are counted at block granularity over the causal triangle, so
    the ratio tracks the analytic ``N / (L + (N - L) / v)`` as B grows.
    """
    nb, S = config.num_blocks, config.block_size
    sparse_nnz = sum(nnz_per_head(to_csr(m)) for m in build_all_masks(config))
    dense_nnz = config.num_heads * nb * (nb + 1) // 2
    dense = block_pair_flops(dense_nnz, head_dim, S)
    sparse = block_pair_flops(sparse_nnz, head_dim, S)
    reduction = dense / sparse
    analytic = None
    if len(config.stride_segments) == 1 and config.local_stride == 1:
        L = min(config.local_blocks * S, config.seq_len)
        analytic = flops_reduction(config.seq_len, L, config.stride_segments[0].stride)
    return FlopsReport(dense, sparse, reduction, config.seq_len / reduction, analytic)


def cache_fraction_estimate(N: float, L: float, v: float) -> float:
    """Decode-time cache relative to dense: roughly 1/v once N >> L."""
    return equivalent_context_length(N, L, v) / N


def simulate_masks(masks: Sequence[HeadBlockMask], block_size: int, total_tokens: int) -> CacheSchedule:
    """Replay decoding token by token against fixed block masks.

    A key block stays cached at step t while some query block at or after
    the current one still attends it. Blocks cached but unused by the current
    row count as dead storage.
    """
    if total_tokens < 1:
        raise ValueError("total_tokens must be >= 1")
    nb_needed = -(-total_tokens // block_size)
    evict_after, retained, dead, occupancy = [], [], [], []
    steps = np.arange(total_tokens)
    cur = steps // block_size
    for mask in masks:
        if mask.num_blocks < nb_needed:
            raise ValueError(f"mask covers {mask.num_blocks} blocks, decoding needs {nb_needed}")
        bits = mask.bits
        nb = mask.num_blocks
        last = nb - 1 - np.argmax(bits[::-1], axis=0)
        b = np.arange(nb_needed)[:, None]
        j = np.arange(nb)[None, :]
        live = (j <= b) & (last[None, :] >= b)
        kept = live.sum(axis=1)
        evict_after.append(last)
        retained.append(kept)
        dead.append(kept - (live & bits[:nb_needed]).sum(axis=1))
        # earlier blocks are full; the current block holds tokens up to t
        occupancy.append((kept[cur] - 1) * block_size + (steps - cur * block_size + 1))
    return CacheSchedule(
        block_size=block_size,
        total_tokens=total_tokens,
        evict_after=np.array(evict_after),
        retained_blocks=np.array(retained),
        dead_blocks=np.array(dead),
        occupancy=np.array(occupancy),
    )


def simulate_decode_cache(config: PatternConfig, total_tokens: Optional[int] = None) -> CacheSchedule:
    """Cache trace per KV head; query heads sharing a KV head share one pattern."""
    total_tokens = config.seq_len if total_tokens is None else total_tokens
    if total_tokens > config.seq_len:
        raise ValueError(f"total_tokens={total_tokens} exceeds seq_len={config.seq_len}")
    return simulate_masks(build_kv_masks(config), config.block_size, total_tokens)


def layer_retained_fractions(schedule: LayerSchedule) -> list[float]:
    """Fraction of the dense cache kept at the final decode step, per layer."""
    config = schedule.sparse_pattern
    sparse = float(simulate_decode_cache(config).final_tokens.mean()) / config.seq_len
    return [1.0 if layer in schedule.dense_layer_ids else sparse for layer in range(schedule.num_layers)]


def kv_reduction(schedule: LayerSchedule) -> float:
    """Percent of dense-attention KV cache saved, averaged over layers and KV heads."""
    fractions = layer_retained_fractions(schedule)
    return 100.0 * (1.0 - sum(fractions) / len(fractions))


def dense_cache_schedule(config: PatternConfig, total_tokens: Optional[int] = None) -> CacheSchedule:
    total_tokens = config.seq_len if total_tokens is None else total_tokens
    bits = dense_causal_bits(config.num_blocks)
    masks = [HeadBlockMask(u, bits) for u in range(config.num_kv_heads)]
    return simulate_masks(masks, config.block_size, total_tokens)
