"""Toy masked-reconstruction pretraining and attention-pattern analysis."""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .attention import AttentionConfig, stream_rng
from .errors import ConfigError, DivergenceError
from .models import AttentionLayer
from .numeric import Var, add, backward, l1_loss, linear_forward, relu, value_of

PATTERN_LABELS = ("Diagonal", "Increasing", "Decreasing", "Sparse")
DIAGONAL_BAND = 2.0
MONOTONE_CORR = 0.8


@dataclass
class SequenceBatch:
    features: np.ndarray  # B x L x D
    mask: np.ndarray | None = None  # B x L, True where a frame was masked

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 3:
            raise ValueError(f"features must be B x L x D, got {self.features.shape}")
        if not np.isfinite(self.features).all():
            raise ValueError("features must be finite")
        if self.mask is None:
            self.mask = np.zeros(self.features.shape[:2], dtype=bool)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 200
    batch_size: int = 8
    lr: float = 0.1
    momentum: float = 0.9
    mask_ratio: float = 0.15
    mask_width: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 < self.mask_ratio < 1:
            raise ConfigError("mask_ratio must lie in (0, 1)")
        if self.mask_width < 1:
            raise ConfigError("mask_width must be >= 1")


def synthetic_batch(rng: np.random.Generator, B: int, L: int, D: int, n_sines: int = 3,
                    noise: float = 0.05, mix: np.ndarray | None = None) -> SequenceBatch:
    """Random sinusoids mixed into ``D`` channels, plus white noise.

    Frequencies and phases are drawn per sequence.  ``mix`` (``n_sines x D``)
    is the channel mixing; pass the same matrix for every batch of a dataset.
    """
    t = np.arange(L)
    freqs = rng.uniform(1 / 48, 1 / 12, (B, n_sines, 1))
    phase = rng.uniform(0, 2 * np.pi, (B, n_sines, 1))
    waves = np.sin(2 * np.pi * freqs * t + phase)  # B x K x L
    if mix is None:
        mix = rng.normal(0.0, 1.0 / math.sqrt(n_sines), (n_sines, D))
    x = np.einsum("bkl,kd->bld", waves, mix) + noise * rng.standard_normal((B, L, D))
    return SequenceBatch(x)


def mam_mask(batch: SequenceBatch, cfg: TrainConfig, seed: int) -> SequenceBatch:
    """Zero out contiguous chunks of ``cfg.mask_width`` frames in each sequence.

    Each sequence gets ``round(ratio * L / width)`` non-overlapping chunks (at
    least one), so the masked fraction is within one chunk of the ratio.
    When ``ratio * L < 1`` nothing is masked and a warning is issued.
    """
    B, L, _ = batch.features.shape
    width = cfg.mask_width
    if width > L:
        raise ConfigError(f"mask width {width} exceeds sequence length {L}")
    feats = batch.features.copy()
    mask = np.zeros((B, L), dtype=bool)
    if cfg.mask_ratio * L < 1:
        warnings.warn("mask ratio selects less than one frame; nothing masked", RuntimeWarning)
        return SequenceBatch(feats, mask)
    slots = L // width
    n_chunks = min(slots, max(1, round(cfg.mask_ratio * L / width)))
    rng = np.random.default_rng(seed)
    for b in range(B):
        offset = rng.integers(0, L - slots * width + 1)
        for s in rng.choice(slots, size=n_chunks, replace=False):
            start = offset + s * width
            mask[b, start:start + width] = True
    feats[mask] = 0.0
    return SequenceBatch(feats, mask)


def reconstruction_loss(predicted, target, mask):
    """Mean absolute error over masked frames only."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("reconstruction loss is undefined without masked frames")
    return l1_loss(predicted, target, mask)


class Encoder:
    """Stack of attention + feed-forward residual blocks with linear input
    and output maps.  No layer norm; residual branches start small."""

    def __init__(self, cfg: AttentionConfig, layers: int = 6, seed: int = 0, ffn_mult: int = 2,
                 generalize_heads: bool = False):
        self.cfg = cfg
        self.n_layers = layers
        rng = stream_rng(seed, f"encoder/{cfg.variant}")
        D = cfg.D
        self.params: dict[str, Var] = {}

        def add_param(name, arr):
            self.params[name] = Var(np.asarray(arr, dtype=np.float64), name=name)

        add_param("w_in", rng.normal(0, 1 / math.sqrt(D), (D, D)))
        add_param("b_in", np.zeros(D))
        self.attn: list[AttentionLayer] = []
        branch = 1.0 / math.sqrt(2 * layers)
        for i in range(layers):
            layer = AttentionLayer(cfg, stream_rng(seed, f"encoder/{cfg.variant}/attn{i}"),
                                   generalize_heads=generalize_heads, fixed_seed=seed * 1000 + i)
            for name, p in layer.params.items():
                p.name = f"l{i}.{name}"
                self.params[p.name] = p
            self.attn.append(layer)
            add_param(f"l{i}.w_o", rng.normal(0, branch / math.sqrt(D), (D, D)))
            add_param(f"l{i}.b_o", np.zeros(D))
            add_param(f"l{i}.f1", rng.normal(0, 1 / math.sqrt(D), (D, ffn_mult * D)))
            add_param(f"l{i}.fb1", np.zeros(ffn_mult * D))
            add_param(f"l{i}.f2", rng.normal(0, branch / math.sqrt(ffn_mult * D), (ffn_mult * D, D)))
            add_param(f"l{i}.fb2", np.zeros(D))
        add_param("w_out", rng.normal(0, 1 / math.sqrt(D), (D, D)))
        add_param("b_out", np.zeros(D))

    def parameters(self) -> list[Var]:
        return list(self.params.values())

    def forward(self, x, grad: bool = False):
        """Returns ``(prediction, attention weights per layer)``."""
        p = (lambda n: self.params[n]) if grad else (lambda n: self.params[n].value)
        h = linear_forward(x, p("w_in"), p("b_in"))
        all_weights = []
        for i, layer in enumerate(self.attn):
            a, weights = layer.forward(h, grad=grad)
            all_weights.append(weights)
            h = add(h, linear_forward(a, p(f"l{i}.w_o"), p(f"l{i}.b_o")))
            f = relu(linear_forward(h, p(f"l{i}.f1"), p(f"l{i}.fb1")))
            h = add(h, linear_forward(f, p(f"l{i}.f2"), p(f"l{i}.fb2")))
        return linear_forward(h, p("w_out"), p("b_out")), all_weights

    def attention_maps(self, x) -> np.ndarray:
        """``layers x H x L x L`` weights for one sequence ``x`` (L x D)."""
        _, weights = self.forward(x)
        return np.stack([np.stack([value_of(a) for a in layer]) for layer in weights])

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: p.value.copy() for n, p in self.params.items()}


@dataclass
class TrainResult:
    losses: list[float]
    eval_initial: float
    eval_final: float
    model: Encoder
    initial_weights: dict[str, np.ndarray] = field(repr=False)


def default_data(attn_cfg: AttentionConfig, seed: int = 0, n_sines: int = 3,
                 noise: float = 0.05) -> Callable[[np.random.Generator, int], SequenceBatch]:
    """Synthetic dataset whose channel mixing is fixed by ``seed``."""
    mix = stream_rng(seed, "data/mix").normal(0.0, 1.0 / math.sqrt(n_sines), (n_sines, attn_cfg.D))
    return lambda rng, B: synthetic_batch(rng, B, attn_cfg.L, attn_cfg.D, n_sines, noise, mix)


def train(variant: str, cfg: TrainConfig, attn_cfg: AttentionConfig | None = None, data=None,
          layers: int = 6, generalize_heads: bool = False) -> TrainResult:
    """Gradient descent with momentum on the masked-frame L1 loss.

    ``data(rng, batch_size)`` returns a :class:`SequenceBatch`.  Losses are
    recorded before each update.  ``eval_initial``/``eval_final`` are the loss
    on one fixed held-out batch before and after training.
    """
    attn_cfg = attn_cfg or AttentionConfig()
    attn_cfg = dataclasses.replace(attn_cfg, variant=variant)
    data = data or default_data(attn_cfg, cfg.seed)
    model = Encoder(attn_cfg, layers=layers, seed=cfg.seed, generalize_heads=generalize_heads)
    initial = model.snapshot()
    params = model.parameters()
    velocity = [np.zeros_like(p.value) for p in params]

    data_rng = stream_rng(cfg.seed, "train/data")
    mask_rng = stream_rng(cfg.seed, "train/mask")
    eval_clean = data(stream_rng(cfg.seed, "train/eval"), cfg.batch_size)
    eval_masked = mam_mask(eval_clean, cfg, int(stream_rng(cfg.seed, "train/eval-mask").integers(2**31)))

    def eval_loss():
        pred, _ = model.forward(eval_masked.features)
        return float(reconstruction_loss(pred, eval_clean.features, eval_masked.mask))

    eval_initial = eval_loss()
    losses = []
    for step in range(cfg.steps):
        clean = data(data_rng, cfg.batch_size)
        masked = mam_mask(clean, cfg, int(mask_rng.integers(2**31)))
        pred, _ = model.forward(masked.features, grad=True)
        loss = reconstruction_loss(pred, clean.features, masked.mask)
        value = float(value_of(loss))
        if not np.isfinite(value):
            raise DivergenceError(step, value)
        losses.append(value)
        for p, g, v in zip(params, backward(loss, params), velocity):
            v *= cfg.momentum
            v += g.value
            p.value = p.value - cfg.lr * v
    return TrainResult(losses, eval_initial, eval_loss() if cfg.steps else eval_initial, model, initial)


def flatten_attention(weights) -> np.ndarray:
    """Row-major flattening, one vector per head.  ``(..., L, L)`` becomes
    ``(n_heads, L*L)``; already-flat 2-D input is returned unchanged."""
    arr = np.asarray([value_of(w) for w in weights] if isinstance(weights, list) else weights)
    if arr.ndim <= 2:
        return np.atleast_2d(arr)
    return arr.reshape(-1, arr.shape[-2] * arr.shape[-1])


@dataclass
class PCAResult:
    projected: np.ndarray  # n x k
    variances: np.ndarray  # k, non-increasing
    components: np.ndarray  # k x d, orthonormal rows
    mean: np.ndarray


def pca_project(vectors, out_dim: int) -> PCAResult:
    """Project mean-centered rows onto their top ``out_dim`` principal axes.

    Component signs are fixed so the largest-magnitude entry is positive.
    """
    X = np.asarray(vectors, dtype=np.float64)
    n, d = X.shape
    if not 1 <= out_dim <= min(n, d):
        raise ConfigError(f"out_dim must lie in [1, {min(n, d)}], got {out_dim}")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    comps = vt[:out_dim]
    pivots = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(out_dim), pivots])
    signs[signs == 0] = 1.0
    comps = comps * signs[:, None]
    variances = s[:out_dim] ** 2 / max(n - 1, 1)
    return PCAResult(Xc @ comps.T, variances, comps, mean)


@dataclass(frozen=True)
class PatternLabel:
    label: str
    scores: dict
    diagonal_offset: float
    column_corr: float


def classify_pattern(weights, valid_rows: int | None = None) -> PatternLabel:
    """Sort a row-stochastic ``L x L`` matrix into one of four pattern kinds.

    Diagonal when the row argmax stays within two columns of the diagonal on
    average; otherwise Increasing/Decreasing when the column means correlate
    with the column index beyond +-0.8; otherwise Sparse.  Scores are margins
    to each threshold, and a passing Diagonal test outranks the others.
    """
    A = np.asarray(value_of(weights), dtype=np.float64)
    n = A.shape[0] if valid_rows is None else valid_rows
    A = A[:n, :n]
    offset = float(np.mean(np.abs(np.argmax(A, axis=1) - np.arange(n))))
    col_means = A.mean(axis=0)
    if n < 2 or np.ptp(col_means) == 0:
        corr = 0.0
    else:
        corr = float(np.corrcoef(np.arange(n), col_means)[0, 1])
    diag_margin = (DIAGONAL_BAND - offset) / DIAGONAL_BAND
    # Sparse first so an exact tie at a threshold resolves to it
    scores = {
        "Sparse": 0.0,
        "Diagonal": diag_margin + (2.0 if offset <= DIAGONAL_BAND else 0.0),
        "Increasing": (corr - MONOTONE_CORR) / (1 - MONOTONE_CORR),
        "Decreasing": (-corr - MONOTONE_CORR) / (1 - MONOTONE_CORR),
    }
    if offset <= DIAGONAL_BAND:
        label = "Diagonal"
    elif corr > MONOTONE_CORR:
        label = "Increasing"
    elif corr < -MONOTONE_CORR:
        label = "Decreasing"
    else:
        label = "Sparse"
    return PatternLabel(label, scores, offset, corr)


def summarize_labels(labels: list[str]) -> str:
    counts = {k: labels.count(k) for k in PATTERN_LABELS}
    return ", ".join(f"{counts[k]} {k}" for k in PATTERN_LABELS)
