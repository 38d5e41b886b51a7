"""Dense and Random SYNTHESIZER attention plus the fixed-pattern initialization.

Attention weights are stored as logits; a row softmax is always applied in the
forward pass.  Logits are ``L_max x L_max`` and shorter inputs use the
top-left ``L x L`` block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionConfig
from .errors import ConfigError, LengthError, ShapeError
from .numeric import concat, crop, linear_forward, matmul, relu, row_softmax, value_of

DIAGONAL_SHARPNESS = 5.0
MONOTONE_SPAN = 3.0
SPARSE_NOISE = 0.02
FIXED_SHIFTS = (0, -1, -2, 1, 2)
PATTERN_KINDS = ("diagonal", "increasing", "decreasing", "sparse-random")


@dataclass
class DenseSynthWeights:
    """One entry per head, each a dict with ``w1`` (D x N), ``b1`` (N),
    ``w2`` (N x L_max) and ``b2`` (L_max)."""

    heads: list

    @property
    def L_max(self) -> int:
        return value_of(self.heads[0]["w2"]).shape[1]


@dataclass
class RandomSynthLogits:
    """Per-head ``L_max x L_max`` logits shared by every input."""

    logits: list
    frozen: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def H(self) -> int:
        return len(self.logits)

    @property
    def L_max(self) -> int:
        return value_of(self.logits[0]).shape[-1]

    def freeze(self) -> "RandomSynthLogits":
        """Detach from training; post-softmax weights are then computed once per length."""
        return RandomSynthLogits([np.array(value_of(g)) for g in self.logits], frozen=True)

    def as_array(self) -> np.ndarray:
        return np.stack([value_of(g) for g in self.logits])


@dataclass(frozen=True)
class PatternSpec:
    kind: str
    shift: int = 0
    sharpness: float = DIAGONAL_SHARPNESS
    noise_scale: float = SPARSE_NOISE

    def __post_init__(self):
        if self.kind not in PATTERN_KINDS:
            raise ConfigError(f"unknown pattern kind {self.kind!r}")
        if self.shift not in (-2, -1, 0, 1, 2):
            raise ConfigError(f"diagonal shift must lie in [-2, 2], got {self.shift}")
        if self.sharpness <= 0:
            raise ConfigError("sharpness must be positive")


def init_dense(cfg: AttentionConfig, rng: np.random.Generator, heads: int, L_max: int | None = None) -> DenseSynthWeights:
    L_max = cfg.L if L_max is None else L_max
    out = []
    for _ in range(heads):
        out.append({
            "w1": rng.normal(0.0, 1.0 / math.sqrt(cfg.D), (cfg.D, cfg.N)),
            "b1": np.zeros(cfg.N),
            "w2": rng.normal(0.0, 1.0 / math.sqrt(cfg.N), (cfg.N, L_max)),
            "b2": np.zeros(L_max),
        })
    return DenseSynthWeights(out)


def init_random(H: int, L_max: int, rng: np.random.Generator, std: float = 1.0) -> RandomSynthLogits:
    return RandomSynthLogits([rng.normal(0.0, std, (L_max, L_max)) for _ in range(H)])


def init_values(cfg: AttentionConfig, rng: np.random.Generator, single_head: bool = False) -> list:
    """Value projections: one ``D x D`` matrix for single-head Dense, else one per head."""
    dims = (cfg.D,) if single_head else cfg.head_dims
    return [rng.normal(0.0, 1.0 / math.sqrt(cfg.D), (cfg.D, d)) for d in dims]


def dense_synth_weights(x, head: dict):
    """Per-row logits ``W2 relu(W1 x + b1) + b2``, cut to the input length."""
    L = value_of(x).shape[-2]
    L_max = value_of(head["w2"]).shape[1]
    if L > L_max:
        raise LengthError(f"input length {L} exceeds L_max {L_max}")
    hidden = relu(linear_forward(x, head["w1"], head["b1"]))
    logits = linear_forward(hidden, head["w2"], head["b2"])
    if L == L_max:
        return logits
    return crop(logits, value_of(logits).shape[-2], L)


def random_synth_weights(logits: RandomSynthLogits, L: int) -> list:
    if L > logits.L_max:
        raise LengthError(f"input length {L} exceeds L_max {logits.L_max}")
    if L == logits.L_max:
        return list(logits.logits)
    return [crop(g, L, L) for g in logits.logits]


def _attention_from_source(x, source):
    L = value_of(x).shape[-2]
    if isinstance(source, DenseSynthWeights):
        return [row_softmax(dense_synth_weights(x, head)) for head in source.heads]
    if isinstance(source, RandomSynthLogits):
        if source.frozen:
            if L not in source._cache:
                source._cache[L] = [row_softmax(g) for g in random_synth_weights(source, L)]
            return source._cache[L]
        return [row_softmax(g) for g in random_synth_weights(source, L)]
    raise ConfigError(f"unsupported weight source {type(source).__name__}")


def synthesizer_forward(x, value_weights: list, cfg: AttentionConfig, weight_source):
    """``row_softmax(logits_h) @ (x W_V_h)`` per head, heads concatenated.

    ``weight_source`` is a :class:`DenseSynthWeights` (single- or multi-head)
    or a :class:`RandomSynthLogits` (random or fixed-init).
    """
    weights = _attention_from_source(x, weight_source)
    if len(weights) != len(value_weights):
        raise ShapeError(f"{len(weights)} attention heads but {len(value_weights)} value projections")
    outs = [matmul(a, matmul(x, wv)) for a, wv in zip(weights, value_weights)]
    return concat(outs), weights


def make_pattern(spec: PatternSpec, L: int, seed=None) -> np.ndarray:
    """Logits for one of the four canonical head patterns."""
    if spec.kind == "diagonal":
        if L < 3:
            raise ConfigError("shifted diagonals need L >= 3")
        out = np.zeros((L, L))
        cols = np.clip(np.arange(L) + spec.shift, 0, L - 1)
        out[np.arange(L), cols] = spec.sharpness
        return out
    if spec.kind in ("increasing", "decreasing"):
        ramp = np.linspace(0.0, spec.sharpness, L)
        if spec.kind == "decreasing":
            ramp = ramp[::-1]
        return np.tile(ramp, (L, 1))
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, spec.noise_scale, (L, L))


def fixed_head_specs(H: int = 12, generalize: bool = False, sharpness: float = DIAGONAL_SHARPNESS,
                     span: float = MONOTONE_SPAN, noise_scale: float = SPARSE_NOISE) -> list[PatternSpec]:
    """Head layout 5 diagonal / 1 increasing / 1 decreasing / 5 sparse.

    With ``generalize`` the same proportions are applied to other head counts.
    """
    if H == 12:
        n_diag, n_inc, n_dec = 5, 1, 1
    elif generalize:
        n_diag = max(1, round(H * 5 / 12))
        n_inc = min(round(H / 12), H - n_diag)
        n_dec = min(round(H / 12), H - n_diag - n_inc)
    else:
        raise ConfigError(f"the fixed initialization is defined for 12 heads, got H={H}")
    specs = [PatternSpec("diagonal", FIXED_SHIFTS[i % len(FIXED_SHIFTS)], sharpness) for i in range(n_diag)]
    specs += [PatternSpec("increasing", sharpness=span)] * n_inc
    specs += [PatternSpec("decreasing", sharpness=span)] * n_dec
    specs += [PatternSpec("sparse-random", noise_scale=noise_scale)] * (H - len(specs))
    return specs


def build_fixed_init(H: int = 12, L: int = 128, seed: int = 0, generalize: bool = False, **pattern_kw) -> RandomSynthLogits:
    specs = fixed_head_specs(H, generalize, **pattern_kw)
    seeds = np.random.SeedSequence(seed).spawn(H)
    return RandomSynthLogits([make_pattern(s, L, sd) for s, sd in zip(specs, seeds)])


def pattern_csv(matrix) -> str:
    """One CSV line per row of an ``L x L`` weight or logit matrix."""
    m = np.asarray(value_of(matrix), dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got shape {m.shape}")
    return "".join(",".join(repr(float(v)) for v in row) + "\n" for row in m)
