"""One attention layer per variant tag, with named trainable parameters."""

from __future__ import annotations

import numpy as np

from .attention import (
    BASELINES,
    LSH_VARIANTS,
    SPARSE_VARIANTS,
    AttentionConfig,
    ProjectionWeights,
    full_attention_forward,
    init_projections,
    stream_rng,
)
from .errors import ConfigError
from .lsh import TransformSpec, draw_direction, lsh_attention_forward, transformed_dim
from .numeric import Var, value_of
from .sparse import default_masks, sparse_attention_forward
from .synthesizer import (
    DenseSynthWeights,
    RandomSynthLogits,
    build_fixed_init,
    init_dense,
    init_random,
    init_values,
    synthesizer_forward,
)


class AttentionLayer:
    """Holds parameters as :class:`Var` nodes.  ``forward(x, grad=False)`` runs
    on plain arrays; ``grad=True`` records the gradient graph."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, L_max: int | None = None,
                 generalize_heads: bool = False, fixed_seed: int = 0):
        self.cfg = cfg
        self.variant = cfg.variant
        self.L_max = cfg.L if L_max is None else L_max
        self.params: dict[str, Var] = {}
        self.frozen = False
        self._masks: dict[int, list] = {}
        self._frozen_source = None
        v = cfg.variant

        if v in BASELINES or v in SPARSE_VARIANTS or v in LSH_VARIANTS:
            # shared-QK for every sparse and LSH variant
            proj = init_projections(cfg, rng, shared_qk=(v != "baseline-qk"))
            self.shared_qk = proj.shared_qk
            for h in range(cfg.H):
                self._add(f"wq{h}", proj.wq[h])
                if not proj.shared_qk:
                    self._add(f"wk{h}", proj.wk[h])
                self._add(f"wv{h}", proj.wv[h])
            if v in LSH_VARIANTS:
                self.spec = TransformSpec(v, U=cfg.U, m=cfg.m)
                self.directions = [draw_direction(transformed_dim(v, d, cfg.m), rng) for d in cfg.head_dims]
        elif v in ("syn-dense", "syn-dense-mh"):
            single = v == "syn-dense"
            dense = init_dense(cfg, rng, 1 if single else cfg.H, self.L_max)
            for h, head in enumerate(dense.heads):
                for key, arr in head.items():
                    self._add(f"{key}_{h}", arr)
            for h, wv in enumerate(init_values(cfg, rng, single_head=single)):
                self._add(f"wv{h}", wv)
            self.n_heads = len(dense.heads)
        elif v in ("syn-random", "ours"):
            if v == "ours":
                logits = build_fixed_init(cfg.H, self.L_max, seed=fixed_seed, generalize=generalize_heads)
            else:
                logits = init_random(cfg.H, self.L_max, rng)
            for h, g in enumerate(logits.logits):
                self._add(f"logits{h}", g)
            for h, wv in enumerate(init_values(cfg, rng)):
                self._add(f"wv{h}", wv)
        else:
            raise ConfigError(f"unknown variant {v!r}")

    def _add(self, name, arr):
        self.params[name] = Var(np.array(arr, dtype=np.float64), name=name)

    def parameters(self) -> list[Var]:
        return list(self.params.values())

    def _p(self, name, grad):
        p = self.params[name]
        return p if grad else p.value

    def projections(self, grad: bool = False) -> ProjectionWeights:
        H = self.cfg.H
        wq = [self._p(f"wq{h}", grad) for h in range(H)]
        wk = wq if self.shared_qk else [self._p(f"wk{h}", grad) for h in range(H)]
        wv = [self._p(f"wv{h}", grad) for h in range(H)]
        return ProjectionWeights(wq, wk, wv, self.shared_qk)

    def weight_source(self, grad: bool = False):
        v = self.variant
        if v in ("syn-dense", "syn-dense-mh"):
            keys = ("w1", "b1", "w2", "b2")
            return DenseSynthWeights([{k: self._p(f"{k}_{h}", grad) for k in keys} for h in range(self.n_heads)])
        if v in ("syn-random", "ours"):
            if self.frozen and not grad:
                return self._frozen_source
            return RandomSynthLogits([self._p(f"logits{h}", grad) for h in range(self.cfg.H)])
        raise ConfigError(f"{v!r} has no synthesized weights")

    def value_weights(self, grad: bool = False) -> list:
        n = self.n_heads if self.variant in ("syn-dense", "syn-dense-mh") else self.cfg.H
        return [self._p(f"wv{h}", grad) for h in range(n)]

    def masks(self, L: int):
        if L not in self._masks:
            self._masks[L] = default_masks(self.cfg, L)
        return self._masks[L]

    def freeze(self) -> "AttentionLayer":
        """Mark weights as final.  Input-independent attention is then
        computed once and reused, so inference skips weight generation."""
        if self.variant in ("syn-random", "ours"):
            self._frozen_source = self.weight_source(grad=False).freeze()
        self.frozen = True
        return self

    def forward(self, x, grad: bool = False):
        v = self.variant
        cfg = self.cfg
        if v in BASELINES:
            return full_attention_forward(x, self.projections(grad), cfg)
        if v in SPARSE_VARIANTS:
            return sparse_attention_forward(x, self.projections(grad), cfg, self.masks(value_of(x).shape[-2]))
        if v in LSH_VARIANTS:
            return lsh_attention_forward(x, self.projections(grad), cfg, self.spec, self.directions)
        return synthesizer_forward(x, self.value_weights(grad), cfg, self.weight_source(grad))

    def attention_logits(self) -> np.ndarray | None:
        """Stacked ``H x L_max x L_max`` logits for the input-independent variants."""
        if self.variant not in ("syn-random", "ours"):
            return None
        return np.stack([self.params[f"logits{h}"].value for h in range(self.cfg.H)])


def build_attention(cfg: AttentionConfig, seed: int = 0, **kw) -> AttentionLayer:
    return AttentionLayer(cfg, stream_rng(seed, f"attention/{cfg.variant}"), **kw)
