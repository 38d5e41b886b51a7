"""Crafted strided/fixed attention masks and masked multi-head attention.

Masks are bidirectional: the model is an encoder, so nothing is restricted to
``j <= i``.  The index sets are

* strided, pattern one: the local window ``|i - j| < stride``
* strided, pattern two: every ``stride``-th position, ``(i - j) % stride == 0``
* fixed, pattern one: the block containing ``i``
* fixed, pattern two: the last ``summary_width`` columns of every block
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionConfig, ProjectionWeights, project_qkv, scaled_scores
from .errors import ConfigError, DegenerateRowError, ShapeError
from .numeric import concat, masked_row_softmax, matmul

PATTERNS = ("pattern-one", "pattern-two")


@dataclass(frozen=True)
class AttentionMask:
    bits: np.ndarray
    head_pattern: str = "pattern-one"

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool)
        if bits.ndim != 2 or bits.shape[0] != bits.shape[1]:
            raise ShapeError(f"mask must be square, got {bits.shape}")
        if not bits.any(axis=1).all():
            raise DegenerateRowError("mask has an empty row")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def L(self) -> int:
        return self.bits.shape[0]

    def row(self, i: int) -> list[int]:
        return np.flatnonzero(self.bits[i]).tolist()


def _check_pattern(head_pattern):
    if head_pattern not in PATTERNS:
        raise ConfigError(f"unknown head pattern {head_pattern!r}")


def strided_mask(L: int, stride: int, head_pattern: str = "pattern-one") -> AttentionMask:
    _check_pattern(head_pattern)
    if not 1 <= stride <= L:
        raise ConfigError(f"stride must lie in [1, {L}], got {stride}")
    i = np.arange(L)[:, None]
    j = np.arange(L)[None, :]
    if head_pattern == "pattern-one":
        bits = np.abs(i - j) < stride
    else:
        bits = (i - j) % stride == 0
    return AttentionMask(bits, head_pattern)


def fixed_mask(L: int, block: int, summary_width: int = 1, head_pattern: str = "pattern-one") -> AttentionMask:
    _check_pattern(head_pattern)
    if not 1 <= block <= L:
        raise ConfigError(f"block must lie in [1, {L}], got {block}")
    if not 1 <= summary_width <= block:
        raise ConfigError(f"summary_width must lie in [1, {block}], got {summary_width}")
    i = np.arange(L)[:, None]
    j = np.arange(L)[None, :]
    if head_pattern == "pattern-one":
        bits = (i // block) == (j // block)
    else:
        bits = np.broadcast_to((j % block) >= block - summary_width, (L, L))
    return AttentionMask(bits, head_pattern)


def head_patterns(H: int) -> list[str]:
    """First half of the heads (rounded up) get pattern one, the rest pattern two."""
    n_one = (H + 1) // 2
    return ["pattern-one"] * n_one + ["pattern-two"] * (H - n_one)


def default_masks(cfg: AttentionConfig, L: int | None = None) -> list[AttentionMask]:
    L = cfg.L if L is None else L
    stride = min(cfg.resolved_stride, L)
    block = min(cfg.resolved_block, L)
    out = []
    for pattern in head_patterns(cfg.H):
        if cfg.variant == "sparse-strided":
            out.append(strided_mask(L, stride, pattern))
        elif cfg.variant == "sparse-fixed":
            out.append(fixed_mask(L, block, min(cfg.summary_width, block), pattern))
        else:
            raise ConfigError(f"no default masks for variant {cfg.variant!r}")
    return out


def sparse_attention_forward(x, w: ProjectionWeights, cfg: AttentionConfig, masks: list[AttentionMask]):
    if len(masks) != w.H:
        raise ShapeError(f"need one mask per head: {len(masks)} masks for {w.H} heads")
    outs, weights = [], []
    for (q, k, v), mask in zip(project_qkv(x, w), masks):
        a = masked_row_softmax(scaled_scores(q, k), mask.bits)
        weights.append(a)
        outs.append(matmul(a, v))
    return concat(outs), weights


def to_bitmap(mask: AttentionMask) -> str:
    """Rows of 0/1 characters, one line per query."""
    return "".join("".join("1" if b else "0" for b in row) + "\n" for row in mask.bits)


def from_bitmap(text: str, head_pattern: str = "pattern-one") -> AttentionMask:
    rows = [line.strip() for line in text.splitlines() if line.strip()]
    if any(set(r) - {"0", "1"} for r in rows):
        raise ValueError("bitmap may contain only 0 and 1")
    return AttentionMask(np.array([[c == "1" for c in r] for r in rows]), head_pattern)
