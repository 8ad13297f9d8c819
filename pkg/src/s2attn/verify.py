"""Brute-force checks of the sharding properties on materialized masks."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .config import PatternConfig
from .pattern import HeadBlockMask, build_all_masks

UNION = "union"
HETEROGENEITY = "heterogeneity"
KV_EFFICIENCY = "kv_cache_efficiency"


@dataclass(frozen=True)
class Violation:
    """A witness. ``head`` is None for rules spanning all heads (union)."""

    rule: str
    head: Optional[int] = None
    query_block: Optional[int] = None
    key_block: Optional[int] = None


@dataclass
class VerificationReport:
    union_complete: bool
    heterogeneous: bool
    kv_cache_efficient: bool
    violations: list[Violation] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.union_complete and self.heterogeneous and self.kv_cache_efficient

    def to_dict(self) -> dict:
        return {
            "union_complete": self.union_complete,
            "heterogeneous": self.heterogeneous,
            "kv_cache_efficient": self.kv_cache_efficient,
            "violations": [asdict(v) for v in self.violations],
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "VerificationReport":
        return cls(
            union_complete=doc["union_complete"],
            heterogeneous=doc["heterogeneous"],
            kv_cache_efficient=doc["kv_cache_efficient"],
            violations=[Violation(**v) for v in doc.get("violations", [])],
            notes=list(doc.get("notes", [])),
        )


def _stack(masks: list[HeadBlockMask]) -> np.ndarray:
    if not masks:
        raise ValueError("need at least one mask")
    shapes = {m.bits.shape for m in masks}
    if len(shapes) != 1:
        raise ValueError(f"masks have mismatched dimensions: {sorted(shapes)}")
    return np.stack([m.bits for m in masks])


def check_union_coverage(masks: list[HeadBlockMask]) -> tuple[bool, list[Violation]]:
    """Every causal (query block, key block) pair must be admitted by some head."""
    stacked = _stack(masks)
    covered = stacked.any(axis=0)
    causal = np.tril(np.ones_like(covered))
    holes = np.argwhere(causal & ~covered)
    witnesses = [Violation(UNION, None, int(i), int(j)) for i, j in holes]
    return not witnesses, witnesses


def check_heterogeneity(masks: list[HeadBlockMask]) -> bool:
    if len(masks) < 2:
        raise ValueError(f"heterogeneity needs at least 2 heads, got {len(masks)}")
    stacked = _stack(masks)
    return bool((stacked != stacked[0]).any())


def check_kv_cache_efficiency(mask: HeadBlockMask) -> tuple[bool, list[Violation]]:
    """Each key block must be attended by a contiguous run of queries starting on the diagonal.

    Once a query block skips key block ``j``, no later query block may attend
    it again; each resumption after a gap is reported with the resuming row.
    """
    bits = mask.bits
    if np.triu(bits, k=1).any():
        i, j = np.argwhere(np.triu(bits, k=1))[0]
        raise ValueError(f"mask for head {mask.head_index} is not causal: bit set at ({i}, {j})")
    # a rising edge strictly below the diagonal is a resumption after a gap
    # (or, with the diagonal missing, a run that does not start on it)
    rises = np.zeros_like(bits)
    rises[1:] = bits[1:] & ~bits[:-1]
    rises = np.tril(rises, k=-1)
    witnesses = [Violation(KV_EFFICIENCY, mask.head_index, int(i), int(j))
                 for j, i in sorted((j, i) for i, j in np.argwhere(rises))]
    return not witnesses, witnesses


def replay_witness(masks: list[HeadBlockMask], witness: Violation) -> bool:
    """Re-check a witness against the masks; True when the violation is real."""
    i, j = witness.query_block, witness.key_block
    if witness.rule == UNION:
        return j <= i and not any(m.bits[i, j] for m in masks)
    if witness.rule == KV_EFFICIENCY:
        bits = next(m for m in masks if m.head_index == witness.head).bits
        return bool(bits[i, j]) and not bits[j:i, j].all()
    if witness.rule == HETEROGENEITY:
        return all(m.same_pattern(masks[0]) for m in masks)
    raise ValueError(f"unknown rule {witness.rule!r}")


def check_multi_stride_constraints(config: PatternConfig) -> tuple[bool, list[str]]:
    """Nesting conditions that keep consecutive stripe segments cache-efficient.

    For each consecutive pair the later stride must be a multiple of the
    earlier one, and each unit's later offset must sit on its earlier stripe.
    Offsets are compared after reduction modulo their stride. Returns the
    verdict and human-readable notes explaining any failure.
    """
    segments = config.stride_segments
    if len(segments) < 2:
        return True, [f"{len(segments)} stride segment(s): nesting constraint is vacuous"]
    notes = []
    for n, (first, second) in enumerate(zip(segments, segments[1:])):
        if second.stride % first.stride:
            notes.append(f"segments {n},{n + 1}: stride {second.stride} is not a multiple of {first.stride}")
            continue
        for unit in range(config.num_kv_heads):
            o1 = config.segment_offset(first, unit)
            o2 = config.segment_offset(second, unit)
            if o2 < o1 or (o2 - o1) % first.stride:
                notes.append(
                    f"segments {n},{n + 1}: unit {unit} offset difference {o2 - o1} "
                    f"not a non-negative multiple of {first.stride}"
                )
    return not notes, notes


def verify_masks(masks: list[HeadBlockMask]) -> VerificationReport:
    union_ok, violations = check_union_coverage(masks)
    notes = []
    try:
        heterogeneous = check_heterogeneity(masks)
    except ValueError as err:
        heterogeneous = False
        notes.append(str(err))
    if not heterogeneous:
        violations.append(Violation(HETEROGENEITY, masks[-1].head_index))
    efficient = True
    for mask in masks:
        ok, found = check_kv_cache_efficiency(mask)
        efficient &= ok
        violations.extend(found)
    return VerificationReport(union_ok, heterogeneous, efficient, violations, notes)


def verify_config(config: PatternConfig) -> VerificationReport:
    report = verify_masks(build_all_masks(config))
    if len(config.stride_segments) >= 2:
        ok, notes = check_multi_stride_constraints(config)
        report.notes.extend(notes)
    return report
