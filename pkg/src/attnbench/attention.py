"""Full multi-head self-attention and its shared-QK variant."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .numeric import concat, matmul, row_softmax, scale, transpose, value_of

VARIANTS = (
    "baseline-qk",
    "baseline-q",
    "sparse-strided",
    "sparse-fixed",
    "sign-alsh",
    "xbox",
    "xbox-qnf",
    "simple-lsh",
    "simple-alsh",
    "syn-dense",
    "syn-dense-mh",
    "syn-random",
    "ours",
)
BASELINES = ("baseline-qk", "baseline-q")
SPARSE_VARIANTS = ("sparse-strided", "sparse-fixed")
LSH_VARIANTS = ("sign-alsh", "xbox", "xbox-qnf", "simple-lsh", "simple-alsh")
SYNTH_VARIANTS = ("syn-dense", "syn-dense-mh", "syn-random", "ours")


def stream_rng(seed: int, name: str) -> np.random.Generator:
    """Independent generator for the named stream derived from one root seed."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


@dataclass(frozen=True)
class AttentionConfig:
    L: int = 128
    D: int = 64
    H: int = 12
    variant: str = "baseline-qk"
    C: int = 32
    N: int = 16
    U: float = 0.75
    m: int = 2
    stride: int | None = None
    block: int | None = None
    summary_width: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.L < 1:
            raise ConfigError("L must be >= 1")
        if self.H < 1 or self.D < self.H:
            raise ConfigError(f"need 1 <= H <= D, got H={self.H}, D={self.D}")
        if not 1 <= self.C <= self.L:
            raise ConfigError(f"C must lie in [1, L], got C={self.C}, L={self.L}")
        if self.N < 1:
            raise ConfigError("N must be >= 1")
        if not 0 < self.U <= 1:
            raise ConfigError("U must lie in (0, 1]")
        if self.m < 1:
            raise ConfigError("m must be >= 1")

    @property
    def head_dims(self) -> tuple[int, ...]:
        # D/H per head; when H does not divide D the remainder goes to the first heads.
        base, extra = divmod(self.D, self.H)
        return tuple(base + (1 if h < extra else 0) for h in range(self.H))

    @property
    def head_dim(self) -> int:
        return self.D // self.H

    @property
    def sqrt_L(self) -> int:
        return math.isqrt(self.L - 1) + 1 if self.L > 1 else 1

    @property
    def resolved_stride(self) -> int:
        return self.stride if self.stride is not None else self.sqrt_L

    @property
    def resolved_block(self) -> int:
        return self.block if self.block is not None else self.sqrt_L


@dataclass
class ProjectionWeights:
    """Per-head ``D x head_dim`` projections.  With ``shared_qk`` the key list
    holds the very same objects as the query list."""

    wq: list
    wk: list
    wv: list
    shared_qk: bool = False

    def __post_init__(self):
        if self.shared_qk:
            self.wk = self.wq
        if not len(self.wq) == len(self.wk) == len(self.wv):
            raise ShapeError("projection lists must have one entry per head")

    @property
    def H(self) -> int:
        return len(self.wq)


def init_projections(cfg: AttentionConfig, rng: np.random.Generator, shared_qk: bool) -> ProjectionWeights:
    std = 1.0 / math.sqrt(cfg.D)
    wq = [rng.normal(0.0, std, (cfg.D, d)) for d in cfg.head_dims]
    wk = wq if shared_qk else [rng.normal(0.0, std, (cfg.D, d)) for d in cfg.head_dims]
    wv = [rng.normal(0.0, std, (cfg.D, d)) for d in cfg.head_dims]
    return ProjectionWeights(wq, wk, wv, shared_qk)


def project_qkv(x, w: ProjectionWeights) -> list[tuple]:
    """Per-head (Q, K, V).  Under ``shared_qk`` K is the same object as Q."""
    xv = value_of(x)
    d_in = value_of(w.wq[0]).shape[0]
    if xv.shape[-1] != d_in:
        raise ShapeError(f"input width {xv.shape[-1]} != projection input {d_in}")
    out = []
    for wq, wk, wv in zip(w.wq, w.wk, w.wv):
        q = matmul(x, wq)
        k = q if w.shared_qk else matmul(x, wk)
        out.append((q, k, matmul(x, wv)))
    return out


def scaled_scores(q, k):
    """``q_i . k_j / sqrt(head_dim)`` for all pairs."""
    qv, kv = value_of(q), value_of(k)
    if qv.shape != kv.shape:
        raise ShapeError(f"Q {qv.shape} and K {kv.shape} differ")
    return scale(matmul(q, transpose(k)), 1.0 / math.sqrt(qv.shape[-1]))


def full_attention_forward(x, w: ProjectionWeights, cfg: AttentionConfig):
    """Returns ``(output, weights)``; ``weights`` is a list of per-head ``L x L`` matrices."""
    if cfg.variant not in BASELINES:
        raise ConfigError(f"full attention expects a baseline variant, got {cfg.variant!r}")
    outs, weights = [], []
    for q, k, v in project_qkv(x, w):
        a = row_softmax(scaled_scores(q, k))
        weights.append(a)
        outs.append(matmul(a, v))
    return concat(outs), weights
