"""Randomized oracle-equivalence matrix: naive, dense-masked, streaming and D-split attention."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass

import numpy as np

from .attention import (
    AttentionTensors,
    dense_masked_attention,
    dsplit_attention,
    max_relative_error,
    naive_attention,
    streaming_sharded_attention,
)
from .config import PatternConfig, strided_config
from .pattern import build_all_masks
from .sparse_format import CsrMask, to_csr

CHAIN_TOL = 1e-5
DSPLIT1_TOL = 1e-6

BLOCK_SIZES = (8, 16, 64)
HEAD_DIMS = (16, 64)
MAX_HEADS = 4
MAX_SEQ = 256


@dataclass(frozen=True)
class Instance:
    config: PatternConfig
    head_dim: int
    tensors: AttentionTensors

    @property
    def key(self) -> str:
        doc = {"pattern": self.config.to_dict(), "head_dim": self.head_dim}
        return hashlib.sha1(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:12]


@dataclass(frozen=True)
class CheckRow:
    config_hash: str
    check: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def random_instance(rng: np.random.Generator, seq_len: int | None = None,
                    block_size: int | None = None) -> Instance:
    heads = int(rng.integers(1, MAX_HEADS + 1))
    block_size = block_size or int(rng.choice(BLOCK_SIZES))
    seq_len = seq_len or int(rng.integers(1, MAX_SEQ + 1))
    stride = int(rng.choice([1, 3, 4, heads]))
    local = int(rng.integers(1, 4))
    config = strided_config(seq_len, block_size, heads, local, stride)
    d = int(rng.choice(HEAD_DIMS))
    q, k, v = (rng.standard_normal((heads, seq_len, d)) for _ in range(3))
    return Instance(config, d, AttentionTensors(q, k, v))


def instances(seed: int, count: int) -> list[Instance]:
    """``count`` instances; the first is single-block and the second spans several blocks."""
    rng = np.random.default_rng(seed)
    out = [random_instance(rng, seq_len=int(rng.integers(1, 9)), block_size=8)]
    if count > 1:
        out.append(random_instance(rng, seq_len=int(rng.integers(65, MAX_SEQ + 1)), block_size=16))
    out.extend(random_instance(rng) for _ in range(count - len(out)))
    return out[:count]


def corrupt(csr: list[CsrMask]) -> list[CsrMask]:
    """Negative control: toggle key block 0 in query block 1 of the first multi-block head."""
    out = list(csr)
    for h, c in enumerate(csr):
        if c.num_blocks < 2:
            continue
        rows = [c.shard(r).tolist() for r in range(c.num_blocks)]
        rows[1] = rows[1][1:] if rows[1][0] == 0 else [0, *rows[1]]
        ptr = np.cumsum([0] + [len(r) for r in rows])
        out[h] = CsrMask(c.head_index, ptr, [x for r in rows for x in r])
        return out
    return out


def run_instance(inst: Instance, corrupt_mask: bool = False) -> list[CheckRow]:
    masks = build_all_masks(inst.config)
    csr = [to_csr(m) for m in masks]
    if corrupt_mask:
        csr = corrupt(csr)
    S = inst.config.block_size
    t = inst.tensors
    naive, naive_lse = naive_attention(t, masks, S)
    dense, dense_lse = dense_masked_attention(t, masks, S)
    stream, stream_lse = streaming_sharded_attention(t, csr, S)
    split1, _ = dsplit_attention(t, csr, S, 1)
    split2, _ = dsplit_attention(t, csr, S, 2)
    key = inst.key
    return [
        CheckRow(key, "naive~dense", max_relative_error(dense, naive), CHAIN_TOL),
        CheckRow(key, "dense~streaming", max_relative_error(stream, dense), CHAIN_TOL),
        CheckRow(key, "streaming~dsplit2", max_relative_error(split2, stream), CHAIN_TOL),
        CheckRow(key, "naive~dsplit2", max_relative_error(split2, naive), CHAIN_TOL),
        CheckRow(key, "streaming~dsplit1", max_relative_error(split1, stream), DSPLIT1_TOL),
        CheckRow(key, "lse naive~streaming", max_relative_error(stream_lse, naive_lse), CHAIN_TOL),
    ]


def run_selftest(seed: int = 0, count: int = 100, corrupt_mask: bool = False) -> list[CheckRow]:
    rows = []
    for inst in instances(seed, count):
        rows.extend(run_instance(inst, corrupt_mask))
    return rows


def rows_to_csv(rows: list[CheckRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["config_hash", "check", "max_rel_error", "tolerance", "passed"])
    for r in rows:
        writer.writerow([r.config_hash, r.check, f"{r.max_rel_error:.3e}", f"{r.tolerance:g}",
                         "pass" if r.passed else "fail"])
    return buf.getvalue()
