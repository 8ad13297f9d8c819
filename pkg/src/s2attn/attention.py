"""Sharded softmax attention: a dense masked oracle, a per-shard streaming scan, and the D-split scan.

All three accumulate in float64 regardless of input dtype and return
``(out, lse)`` with ``out`` of shape [H, N, d] and ``lse`` of shape [H, N].
Key/value tensors are per query head; for grouped attention repeat them
across each group before calling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .pattern import HeadBlockMask
from .sparse_format import CsrMask

ACC_DTYPE = np.float64


@dataclass
class AttentionTensors:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    scale: Optional[float] = None
    out: Optional[np.ndarray] = None
    lse: Optional[np.ndarray] = None

    def __post_init__(self):
        self.q, self.k, self.v = (np.asarray(a) for a in (self.q, self.k, self.v))
        if self.q.ndim != 3:
            raise ValueError(f"q must be [heads, seq, head_dim], got shape {self.q.shape}")
        if self.k.shape != self.q.shape or self.v.shape != self.q.shape:
            raise ValueError(f"shape mismatch: q {self.q.shape}, k {self.k.shape}, v {self.v.shape}")
        for name in ("q", "k", "v"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"{name} contains non-finite entries")
        if self.scale is None:
            self.scale = 1.0 / math.sqrt(self.head_dim)

    @property
    def num_heads(self) -> int:
        return self.q.shape[0]

    @property
    def seq_len(self) -> int:
        return self.q.shape[1]

    @property
    def head_dim(self) -> int:
        return self.q.shape[2]

    def num_blocks(self, block_size: int) -> int:
        return math.ceil(self.seq_len / block_size)


def token_mask(mask: HeadBlockMask, block_size: int, seq_len: int) -> np.ndarray:
    """Expand a block mask to [N, N] tokens with causality inside the diagonal block."""
    block_of = np.arange(seq_len) // block_size
    return mask.bits[np.ix_(block_of, block_of)] & np.tri(seq_len, dtype=bool)


def _check_masks(t: AttentionTensors, masks: Sequence, block_size: int) -> None:
    if block_size < 1:
        raise ValueError(f"block_size must be >= 1, got {block_size}")
    if len(masks) != t.num_heads:
        raise ValueError(f"got {len(masks)} masks for {t.num_heads} heads")
    nb = t.num_blocks(block_size)
    for m in masks:
        if m.num_blocks != nb:
            raise ValueError(f"head {m.head_index}: mask has {m.num_blocks} blocks, tensors need {nb}")


def naive_attention(t: AttentionTensors, masks: Sequence[HeadBlockMask], block_size: int):
    """Position-by-position reference: one explicit softmax per query token."""
    _check_masks(t, masks, block_size)
    H, N, d = t.q.shape
    out = np.zeros((H, N, d), dtype=ACC_DTYPE)
    lse = np.zeros((H, N), dtype=ACC_DTYPE)
    for h in range(H):
        bits = masks[h].bits
        for i in range(N):
            keys = np.arange(i + 1)
            keys = keys[bits[i // block_size, keys // block_size]]
            scores = t.scale * (t.k[h, keys].astype(ACC_DTYPE) @ t.q[h, i].astype(ACC_DTYPE))
            top = scores.max()
            weights = np.exp(scores - top)
            total = math.fsum(weights)
            out[h, i] = (weights / total) @ t.v[h, keys].astype(ACC_DTYPE)
            lse[h, i] = top + math.log(total)
    return out, lse


def dense_masked_attention(t: AttentionTensors, masks: Sequence[HeadBlockMask], block_size: int):
    _check_masks(t, masks, block_size)
    q, k, v = (a.astype(ACC_DTYPE) for a in (t.q, t.k, t.v))
    allowed = np.stack([token_mask(m, block_size, t.seq_len) for m in masks])
    scores = np.einsum("hid,hjd->hij", q, k) * t.scale
    scores = np.where(allowed, scores, -np.inf)
    top = scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores - top)
    total = weights.sum(axis=-1, keepdims=True)
    out = np.einsum("hij,hjd->hid", weights / total, v)
    lse = (top + np.log(total))[..., 0]
    return out, lse


def _check_csr(t: AttentionTensors, csr: Sequence[CsrMask], block_size: int) -> None:
    _check_masks(t, csr, block_size)
    for c in csr:
        c.validate()


def _diag_bias(block_size: int) -> np.ndarray:
    """Additive mask hiding future tokens inside the diagonal block."""
    return np.where(np.tri(block_size, dtype=bool), 0.0, -np.inf)


def _online_update(m, l, accs, scores, v_parts):
    """Fold one key block into the running max ``m``, normalizer ``l`` and accumulators."""
    m_new = np.maximum(m, scores.max(axis=1))
    # rows with nothing seen yet keep a finite reference so exp() stays defined
    m_ref = np.where(np.isneginf(m_new), 0.0, m_new)
    alpha = np.exp(m - m_ref)
    p = np.exp(scores - m_ref[:, None])
    l = l * alpha + p.sum(axis=1)
    accs = [acc * alpha[:, None] + p @ vp for acc, vp in zip(accs, v_parts)]
    return m_new, l, accs


def streaming_sharded_attention(t: AttentionTensors, csr: Sequence[CsrMask], block_size: int):
    """Query block at a time, scanning that block's key shards with an online softmax."""
    _check_csr(t, csr, block_size)
    H, N, d = t.q.shape
    out = np.empty((H, N, d), dtype=ACC_DTYPE)
    lse = np.empty((H, N), dtype=ACC_DTYPE)
    bias = _diag_bias(block_size)
    for h in range(H):
        q, k, v = (a[h].astype(ACC_DTYPE) for a in (t.q, t.k, t.v))
        for row, shard in csr[h].shards():
            qs = slice(row * block_size, min((row + 1) * block_size, N))
            q_blk = q[qs]
            rows = q_blk.shape[0]
            m = np.full(rows, -np.inf)
            l = np.zeros(rows)
            accs = [np.zeros((rows, d))]
            for col in shard:
                ks = slice(col * block_size, min((col + 1) * block_size, N))
                scores = (q_blk @ k[ks].T) * t.scale
                if col == row:
                    scores = scores + bias[:rows, :scores.shape[1]]
                m, l, accs = _online_update(m, l, accs, scores, [v[ks]])
            out[h, qs] = accs[0] / l[:, None]
            lse[h, qs] = m + np.log(l)
    return out, lse


def dsplit_attention(t: AttentionTensors, csr: Sequence[CsrMask], block_size: int, num_splits: int):
    """Streaming scan with the head dimension cut into ``num_splits`` slices.

    Scores are the running sum of per-slice partial products; each value
    slice keeps its own accumulator under a shared max and normalizer, and
    the slices are concatenated at the end. The scale is applied once to
    the completed score.
    """
    if num_splits < 1 or t.head_dim % num_splits:
        raise ValueError(f"num_splits={num_splits} does not divide head_dim={t.head_dim}")
    _check_csr(t, csr, block_size)
    H, N, d = t.q.shape
    width = d // num_splits
    parts = [slice(s * width, (s + 1) * width) for s in range(num_splits)]
    out = np.empty((H, N, d), dtype=ACC_DTYPE)
    lse = np.empty((H, N), dtype=ACC_DTYPE)
    bias = _diag_bias(block_size)
    for h in range(H):
        q, k, v = (a[h].astype(ACC_DTYPE) for a in (t.q, t.k, t.v))
        for row, shard in csr[h].shards():
            qs = slice(row * block_size, min((row + 1) * block_size, N))
            q_parts = [q[qs, p] for p in parts]
            rows = q_parts[0].shape[0]
            m = np.full(rows, -np.inf)
            l = np.zeros(rows)
            accs = [np.zeros((rows, width)) for _ in parts]
            for col in shard:
                ks = slice(col * block_size, min((col + 1) * block_size, N))
                scores = q_parts[0] @ k[ks, parts[0]].T
                for qp, p in zip(q_parts[1:], parts[1:]):
                    scores = scores + qp @ k[ks, p].T
                scores = scores * t.scale
                if col == row:
                    scores = scores + bias[:rows, :scores.shape[1]]
                m, l, accs = _online_update(m, l, accs, scores, [v[ks, p] for p in parts])
            out[h, qs] = np.concatenate([acc / l[:, None] for acc in accs], axis=1)
            lse[h, qs] = m + np.log(l)
    return out, lse


def max_relative_error(actual: np.ndarray, expected: np.ndarray) -> float:
    """Largest absolute deviation divided by the largest magnitude of ``expected``."""
    actual = np.asarray(actual, dtype=ACC_DTYPE)
    expected = np.asarray(expected, dtype=ACC_DTYPE)
    if actual.shape != expected.shape:
        raise ValueError(f"shape mismatch {actual.shape} vs {expected.shape}")
    scale = np.abs(expected).max(initial=0.0)
    diff = np.abs(actual - expected).max(initial=0.0)
    if scale == 0.0:
        return float(diff)
    return float(diff / scale)


def softmax_weights(t: AttentionTensors, masks: Sequence[HeadBlockMask], block_size: int,
                    lse: np.ndarray) -> np.ndarray:
    """Explicit [H, N, N] weights reconstructed from ``lse``; masked entries are 0."""
    q, k = t.q.astype(ACC_DTYPE), t.k.astype(ACC_DTYPE)
    allowed = np.stack([token_mask(m, block_size, t.seq_len) for m in masks])
    scores = np.einsum("hid,hjd->hij", q, k) * t.scale
    return np.where(allowed, np.exp(scores - lse[..., None]), 0.0)
