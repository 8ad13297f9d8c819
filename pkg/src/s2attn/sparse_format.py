"""Compressed-row form of block masks: per query block, the ascending key blocks it attends."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .pattern import HeadBlockMask


@dataclass(frozen=True, eq=False)
class CsrMask:
    head_index: int
    row_ptr: np.ndarray
    col_idx: np.ndarray

    def __post_init__(self):
        row_ptr = np.array(self.row_ptr, dtype=np.int64)
        col_idx = np.array(self.col_idx, dtype=np.int64)
        row_ptr.setflags(write=False)
        col_idx.setflags(write=False)
        object.__setattr__(self, "row_ptr", row_ptr)
        object.__setattr__(self, "col_idx", col_idx)

    @property
    def num_blocks(self) -> int:
        return len(self.row_ptr) - 1

    def shard(self, row: int) -> np.ndarray:
        """Key blocks attended by query block ``row``."""
        return self.col_idx[self.row_ptr[row]:self.row_ptr[row + 1]]

    def shards(self) -> Iterator[tuple[int, np.ndarray]]:
        for row in range(self.num_blocks):
            yield row, self.shard(row)

    def validate(self) -> None:
        rp, ci = self.row_ptr, self.col_idx
        if rp.ndim != 1 or len(rp) < 1 or rp[0] != 0:
            raise ValueError("row_ptr must be 1-D and start at 0")
        if np.any(np.diff(rp) < 0):
            raise ValueError("row_ptr must be non-decreasing")
        if rp[-1] != len(ci):
            raise ValueError(f"row_ptr ends at {rp[-1]} but col_idx has {len(ci)} entries")
        for row, cols in self.shards():
            if len(cols) and (cols[0] < 0 or np.any(np.diff(cols) <= 0)):
                raise ValueError(f"row {row}: column indices must be non-negative and strictly increasing")
            if len(cols) and cols[-1] > row:
                raise ValueError(f"row {row}: column {cols[-1]} breaks causality")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CsrMask):
            return NotImplemented
        return (
            self.head_index == other.head_index
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
        )

    def to_dict(self) -> dict:
        return {
            "head_index": self.head_index,
            "row_ptr": self.row_ptr.tolist(),
            "col_idx": self.col_idx.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CsrMask":
        csr = cls(doc["head_index"], doc["row_ptr"], doc["col_idx"])
        csr.validate()
        return csr


def to_csr(mask: HeadBlockMask) -> CsrMask:
    # nonzero walks row-major, so columns come out ascending within each row
    rows, cols = np.nonzero(mask.bits)
    counts = np.bincount(rows, minlength=mask.num_blocks)
    row_ptr = np.concatenate(([0], np.cumsum(counts)))
    return CsrMask(mask.head_index, row_ptr, cols)


def from_csr(csr: CsrMask, num_blocks: int) -> HeadBlockMask:
    if csr.num_blocks != num_blocks:
        raise ValueError(f"CSR has {csr.num_blocks} rows, expected {num_blocks}")
    csr.validate()
    if len(csr.col_idx) and csr.col_idx.max() >= num_blocks:
        raise ValueError(f"column index {csr.col_idx.max()} >= num_blocks={num_blocks}")
    bits = np.zeros((num_blocks, num_blocks), dtype=bool)
    rows = np.repeat(np.arange(num_blocks), np.diff(csr.row_ptr))
    bits[rows, csr.col_idx] = True
    return HeadBlockMask(csr.head_index, bits)


def nnz_per_head(csr: CsrMask) -> int:
    return len(csr.col_idx)
