"""Declarative sharding policies and their JSON-compatible document form."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional

OFFSET_SCHEMES = ("head", "zero")


class ConfigError(ValueError):
    """Invalid pattern or schedule configuration.

    ``field`` names the offending entry (dotted path) when known.
    """

    def __init__(self, message: str, field: Optional[str] = None):
        self.message = message
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


@dataclass(frozen=True)
class StrideSegment:
    """Remote stripe rule for block distances in ``[start, end)``.

    A key block ``j`` is admitted for query block ``i`` when ``i - j`` lies in
    the range and ``j`` sits on the stripe ``j = o + n * stride``. ``end=None``
    means the segment runs to the number of blocks.

    ``offsets`` is indexed by pattern unit (query head for MHA, KV group for
    grouped attention). When omitted the config's ``offset_scheme`` is used.
    """

    start_block_distance: int
    end_block_distance: Optional[int]
    stride: int
    offsets: Optional[tuple[int, ...]] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "start_block_distance": self.start_block_distance,
            "end_block_distance": self.end_block_distance,
            "stride": self.stride,
            "offsets": list(self.offsets) if self.offsets is not None else None,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any], where: str = "segment") -> "StrideSegment":
        _reject_unknown(doc, {"start_block_distance", "end_block_distance", "stride", "offsets"}, where)
        offsets = doc.get("offsets")
        return cls(
            start_block_distance=_int(doc, "start_block_distance", where),
            end_block_distance=_int(doc, "end_block_distance", where, optional=True),
            stride=_int(doc, "stride", where),
            offsets=tuple(_as_int(o, f"{where}.offsets") for o in offsets) if offsets is not None else None,
        )


@dataclass(frozen=True)
class PatternConfig:
    """One head-set's sharding policy.

    The local window covers the most recent ``local_blocks`` block distances
    (thinned by ``local_stride``); ``stride_segments`` add vertical stripes
    for the remote context. Validation runs on construction.
    """

    seq_len: int
    block_size: int
    num_heads: int
    local_blocks: int
    stride_segments: tuple[StrideSegment, ...] = ()
    num_kv_heads: Optional[int] = None
    local_stride: int = 1
    offset_scheme: str = "head"

    def __post_init__(self):
        if self.num_kv_heads is None:
            object.__setattr__(self, "num_kv_heads", self.num_heads)
        object.__setattr__(self, "stride_segments", tuple(self.stride_segments))
        self.validate()

    @property
    def num_blocks(self) -> int:
        return math.ceil(self.seq_len / self.block_size)

    @property
    def group_size(self) -> int:
        """Query heads sharing one KV head."""
        return self.num_heads // self.num_kv_heads

    def group_of(self, head: int) -> int:
        return head // self.group_size

    def segment_end(self, segment: StrideSegment) -> int:
        end = segment.end_block_distance
        return self.num_blocks if end is None else end

    def segment_offset(self, segment: StrideSegment, unit: int) -> int:
        """Offset of ``unit`` (KV group index) on ``segment``, reduced mod stride."""
        if segment.offsets is not None:
            raw = segment.offsets[unit]
        elif self.offset_scheme == "head":
            raw = unit
        else:
            raw = 0
        return raw % segment.stride

    def validate(self) -> None:
        for name in ("seq_len", "block_size", "num_heads", "num_kv_heads", "local_blocks", "local_stride"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"expected an integer, got {value!r}", name)
            if value < 1:
                raise ConfigError(f"must be >= 1, got {value}", name)
        if self.num_heads % self.num_kv_heads:
            raise ConfigError(
                f"{self.num_kv_heads} does not divide num_heads={self.num_heads}", "num_kv_heads"
            )
        if self.offset_scheme not in OFFSET_SCHEMES:
            raise ConfigError(f"unknown scheme {self.offset_scheme!r}; choose from {OFFSET_SCHEMES}", "offset_scheme")
        prev_end = self.local_blocks
        for n, seg in enumerate(self.stride_segments):
            where = f"stride_segments[{n}]"
            if seg.stride < 1:
                raise ConfigError(f"stride must be >= 1, got {seg.stride}", where)
            end = self.segment_end(seg)
            if seg.start_block_distance < prev_end:
                raise ConfigError(
                    f"start {seg.start_block_distance} overlaps the local window or previous segment "
                    f"(must be >= {prev_end})",
                    where,
                )
            if end > self.num_blocks:
                raise ConfigError(f"end {end} exceeds num_blocks={self.num_blocks}", where)
            if end < seg.start_block_distance:
                raise ConfigError(f"end {end} precedes start {seg.start_block_distance}", where)
            if seg.offsets is not None:
                if len(seg.offsets) != self.num_kv_heads:
                    raise ConfigError(
                        f"needs one offset per KV group ({self.num_kv_heads}), got {len(seg.offsets)}", where
                    )
                if any(o < 0 for o in seg.offsets):
                    raise ConfigError("offsets must be non-negative", where)
            prev_end = end

    def tiles_remote_range(self) -> bool:
        """True when the segments cover distances ``[local_blocks, B)`` with no gap."""
        edge = self.local_blocks
        for seg in self.stride_segments:
            if seg.start_block_distance != edge:
                return False
            edge = self.segment_end(seg)
        return edge >= self.num_blocks or self.local_blocks >= self.num_blocks

    def to_dict(self) -> dict[str, Any]:
        return {
            "seq_len": self.seq_len,
            "block_size": self.block_size,
            "num_heads": self.num_heads,
            "num_kv_heads": self.num_kv_heads,
            "local_blocks": self.local_blocks,
            "local_stride": self.local_stride,
            "stride_segments": [s.to_dict() for s in self.stride_segments],
            "offset_scheme": self.offset_scheme,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any], where: str = "pattern") -> "PatternConfig":
        if not isinstance(doc, dict):
            raise ConfigError("expected an object", where)
        _reject_unknown(
            doc,
            {"seq_len", "block_size", "num_heads", "num_kv_heads", "local_blocks",
             "local_stride", "stride_segments", "offset_scheme"},
            where,
        )
        segments = doc.get("stride_segments", [])
        if not isinstance(segments, list):
            raise ConfigError("expected a list", f"{where}.stride_segments")
        try:
            return cls(
                seq_len=_int(doc, "seq_len", where),
                block_size=_int(doc, "block_size", where),
                num_heads=_int(doc, "num_heads", where),
                num_kv_heads=_int(doc, "num_kv_heads", where, optional=True),
                local_blocks=_int(doc, "local_blocks", where),
                local_stride=doc.get("local_stride", 1) if doc.get("local_stride") is not None else 1,
                stride_segments=tuple(
                    StrideSegment.from_dict(s, f"{where}.stride_segments[{n}]") for n, s in enumerate(segments)
                ),
                offset_scheme=doc.get("offset_scheme", "head"),
            )
        except ConfigError as err:
            if err.field and not err.field.startswith(where):
                raise ConfigError(err.message, f"{where}.{err.field}") from None
            raise

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PatternConfig":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class LayerSchedule:
    """Per-layer assignment: listed layers run dense, the rest use ``sparse_pattern``."""

    num_layers: int
    sparse_pattern: PatternConfig
    dense_layer_ids: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "dense_layer_ids", frozenset(self.dense_layer_ids))
        if self.num_layers < 1:
            raise ConfigError(f"must be >= 1, got {self.num_layers}", "num_layers")
        bad = sorted(i for i in self.dense_layer_ids if not 0 <= i < self.num_layers)
        if bad:
            raise ConfigError(f"layer ids {bad} outside [0, {self.num_layers})", "dense_layer_ids")

    def to_dict(self) -> dict[str, Any]:
        return {
            "num_layers": self.num_layers,
            "dense_layer_ids": sorted(self.dense_layer_ids),
            "sparse_pattern": self.sparse_pattern.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any], pattern: Optional[PatternConfig] = None,
                  where: str = "schedule") -> "LayerSchedule":
        if not isinstance(doc, dict):
            raise ConfigError("expected an object", where)
        _reject_unknown(doc, {"num_layers", "dense_layer_ids", "sparse_pattern"}, where)
        if "sparse_pattern" in doc:
            pattern = PatternConfig.from_dict(doc["sparse_pattern"], f"{where}.sparse_pattern")
        if pattern is None:
            raise ConfigError("missing sparse_pattern", where)
        ids = doc.get("dense_layer_ids", [])
        if not isinstance(ids, list):
            raise ConfigError("expected a list", f"{where}.dense_layer_ids")
        try:
            return cls(
                num_layers=_int(doc, "num_layers", where),
                sparse_pattern=pattern,
                dense_layer_ids=frozenset(_as_int(i, f"{where}.dense_layer_ids") for i in ids),
            )
        except ConfigError as err:
            if err.field and not err.field.startswith(where):
                raise ConfigError(err.message, f"{where}.{err.field}") from None
            raise


def strided_config(
    seq_len: int,
    block_size: int,
    num_heads: int,
    local_blocks: int,
    stride: int,
    *,
    local_stride: int = 1,
    num_kv_heads: Optional[int] = None,
    offsets: Optional[tuple[int, ...]] = None,
    offset_scheme: str = "head",
) -> PatternConfig:
    """Local window plus one vertical stripe family over the whole remote range."""
    nblocks = math.ceil(seq_len / block_size)
    segments = ()
    if local_blocks < nblocks:
        segments = (StrideSegment(local_blocks, None, stride, offsets),)
    return PatternConfig(
        seq_len=seq_len,
        block_size=block_size,
        num_heads=num_heads,
        num_kv_heads=num_kv_heads,
        local_blocks=local_blocks,
        local_stride=local_stride,
        stride_segments=segments,
        offset_scheme=offset_scheme,
    )


def multi_stride_config(
    seq_len: int,
    block_size: int,
    num_heads: int,
    local_blocks: int,
    boundaries: list[int],
    strides: list[int],
    offsets: Optional[list[Optional[tuple[int, ...]]]] = None,
    **kwargs: Any,
) -> PatternConfig:
    """Segments tiling ``[local_blocks, B)`` contiguously.

    ``boundaries`` are the inner switch points (one fewer than ``strides``).
    """
    if len(boundaries) != len(strides) - 1:
        raise ConfigError("need len(strides) - 1 boundaries", "stride_segments")
    edges = [local_blocks, *boundaries, None]
    offsets = offsets or [None] * len(strides)
    segments = tuple(
        StrideSegment(edges[n], edges[n + 1], strides[n], offsets[n]) for n in range(len(strides))
    )
    return PatternConfig(seq_len=seq_len, block_size=block_size, num_heads=num_heads,
                         local_blocks=local_blocks, stride_segments=segments, **kwargs)


def sliding_window_config(seq_len: int, block_size: int, num_heads: int, window_blocks: int) -> PatternConfig:
    """Local window only: no remote stripes."""
    return PatternConfig(seq_len=seq_len, block_size=block_size, num_heads=num_heads, local_blocks=window_blocks)


def dense_config(seq_len: int, block_size: int, num_heads: int = 1) -> PatternConfig:
    """Full causal attention expressed as a window spanning every block."""
    return PatternConfig(seq_len=seq_len, block_size=block_size, num_heads=num_heads,
                         local_blocks=math.ceil(seq_len / block_size))


def _reject_unknown(doc: dict[str, Any], allowed: set[str], where: str) -> None:
    extra = sorted(set(doc) - allowed)
    if extra:
        raise ConfigError(f"unknown field(s) {extra}", where)


def _as_int(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", where)
    return value


def _int(doc: dict[str, Any], key: str, where: str, optional: bool = False) -> Optional[int]:
    if key not in doc or doc[key] is None:
        if optional:
            return None
        raise ConfigError("missing required field", f"{where}.{key}")
    return _as_int(doc[key], f"{where}.{key}")
