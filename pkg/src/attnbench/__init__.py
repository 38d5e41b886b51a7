"""Efficient attention variants for self-supervised audio transformers."""

__version__ = "0.1.0"

from .attention import VARIANTS, AttentionConfig, ProjectionWeights, full_attention_forward
from .cost import run_benchmark, theoretical_cost
from .lsh import TransformSpec, brute_force_mips, lsh_attention_forward, select_candidates
from .models import AttentionLayer, build_attention
from .sparse import AttentionMask, fixed_mask, sparse_attention_forward, strided_mask
from .synthesizer import build_fixed_init, make_pattern, synthesizer_forward

__all__ = [
    "VARIANTS",
    "AttentionConfig",
    "AttentionLayer",
    "AttentionMask",
    "ProjectionWeights",
    "TransformSpec",
    "brute_force_mips",
    "build_attention",
    "build_fixed_init",
    "fixed_mask",
    "full_attention_forward",
    "lsh_attention_forward",
    "make_pattern",
    "run_benchmark",
    "select_candidates",
    "sparse_attention_forward",
    "strided_mask",
    "synthesizer_forward",
    "theoretical_cost",
]
