"""Text and PGM renderings of block masks, and their parsers."""

from __future__ import annotations

import numpy as np

from .pattern import HeadBlockMask

ATTENDED, SKIPPED = "#", "."


def render_text(mask: HeadBlockMask) -> str:
    lines = ["".join(ATTENDED if b else SKIPPED for b in row) for row in mask.bits]
    return "\n".join(lines) + "\n"


def parse_text(text: str, head_index: int = 0) -> HeadBlockMask:
    rows = [line.strip() for line in text.splitlines() if line.strip()]
    if any(len(r) != len(rows) for r in rows):
        raise ValueError("text mask must be square")
    bad = {c for r in rows for c in r} - {ATTENDED, SKIPPED}
    if bad:
        raise ValueError(f"unexpected characters {sorted(bad)}")
    return HeadBlockMask(head_index, np.array([[c == ATTENDED for c in r] for r in rows], dtype=bool))


def render_pgm(mask: HeadBlockMask) -> bytes:
    """Binary P5 graymap, one byte per block: 0 (black) attended, 255 skipped."""
    nb = mask.num_blocks
    pixels = np.where(mask.bits, 0, 255).astype(np.uint8)
    return f"P5\n{nb} {nb}\n255\n".encode("ascii") + pixels.tobytes()


def parse_pgm(data: bytes, head_index: int = 0) -> HeadBlockMask:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    magic, width, height, maxval = tokens
    if magic != "P5":
        raise ValueError(f"not a binary PGM (magic {magic!r})")
    width, height = int(width), int(height)
    pixels = np.frombuffer(data[pos + 1:pos + 1 + width * height], dtype=np.uint8)
    return HeadBlockMask(head_index, pixels.reshape(height, width) == 0)
