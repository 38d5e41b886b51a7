"""Sign-random-projection LSH/ALSH candidate selection for attention.

Five schemes are supported.  Each one normalizes queries and keys, augments
them (``S`` for queries, ``R`` for keys; the symmetric scheme uses ``S`` for
both), hashes the query with one Gaussian direction ``a`` and keeps, for every
query, the ``C`` keys with the largest signed projection ``+-a.R(k)``.
Attention scores are then computed with the original ``q.k`` on the kept keys
only.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .attention import AttentionConfig, ProjectionWeights, project_qkv, scaled_scores
from .errors import ConfigError, DomainError, ShapeError
from .numeric import concat, masked_row_softmax, matmul, value_of

SCHEMES = ("sign-alsh", "xbox", "xbox-qnf", "simple-lsh", "simple-alsh")
ASYMMETRIC = ("sign-alsh", "xbox", "xbox-qnf", "simple-alsh")

_TOL = 1e-12


@dataclass(frozen=True)
class TransformSpec:
    scheme: str
    U: float = 0.75
    m: int = 2
    M: float | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown LSH scheme {self.scheme!r}")
        if self.scheme == "sign-alsh" and not (0 < self.U <= 1 and self.m >= 1):
            raise ConfigError("sign-alsh needs 0 < U <= 1 and m >= 1")


def transformed_dim(scheme: str, D: int, m: int = 2) -> int:
    if scheme == "sign-alsh":
        return D + m
    if scheme == "simple-alsh":
        return D + 2
    return D + 1


def _norms(x):
    return np.linalg.norm(x, axis=-1, keepdims=True)


def _sqrt_slack(bound_sq, x, what):
    """sqrt(bound^2 - |x|^2), rejecting inputs that lie outside the ball."""
    slack = bound_sq - np.sum(x * x, axis=-1, keepdims=True)
    if np.any(slack < -_TOL * max(bound_sq, 1.0)):
        raise DomainError(f"{what}: vector norm exceeds the bound {np.sqrt(bound_sq):g}")
    return np.sqrt(np.clip(slack, 0.0, None))


def normalize_inputs(queries, keys, spec: TransformSpec):
    """Apply the scheme's normalization and record ``M`` in the returned spec."""
    queries = np.asarray(queries, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    if keys.shape[0] == 0:
        raise ShapeError("need at least one key")
    M = float(_norms(keys).max())
    if M == 0.0:
        raise DomainError("all keys are zero, so M = 0")
    if spec.scheme == "sign-alsh":
        qn = _norms(queries)
        queries = np.divide(queries, qn, out=np.zeros_like(queries), where=qn > 0)
        keys = keys * (spec.U / M)
    elif spec.scheme in ("simple-lsh", "simple-alsh"):
        # both sides go through S, so the bound must hold for queries as well
        M = max(M, float(_norms(queries).max(initial=0.0)))
        queries = queries / M
        keys = keys / M
    return queries, keys, dataclasses.replace(spec, M=M)


def transform_query(q, spec: TransformSpec, zero_query: str = "error"):
    """Query-side augmentation ``S``.  ``q`` is one vector or a stack of rows.

    For QNF a zero query has no defined scale; ``zero_query="identity"`` uses
    a scale of one for such rows instead of raising.
    """
    q = np.asarray(q, dtype=np.float64)
    zeros = np.zeros(q.shape[:-1] + (1,))
    s = spec.scheme
    if s == "sign-alsh":
        return np.concatenate([q] + [zeros] * spec.m, axis=-1)
    if s == "xbox":
        return np.concatenate([q, zeros], axis=-1)
    if s == "xbox-qnf":
        if spec.M is None:
            raise ConfigError("QNF needs M; run normalize_inputs first")
        n = _norms(q)
        if np.any(n == 0) and zero_query != "identity":
            raise DomainError("zero-norm query has no QNF scale")
        lam = np.divide(spec.M, n, out=np.ones_like(n), where=n > 0)
        return np.concatenate([lam * q, zeros], axis=-1)
    tail = _sqrt_slack(1.0, q, "simple transform")
    if s == "simple-lsh":
        return np.concatenate([q, tail], axis=-1)
    return np.concatenate([q, zeros, tail], axis=-1)


def transform_key(k, spec: TransformSpec):
    """Key-side augmentation ``R`` (``S`` for the symmetric simple-lsh)."""
    k = np.asarray(k, dtype=np.float64)
    s = spec.scheme
    if s == "sign-alsh":
        sq = np.sum(k * k, axis=-1, keepdims=True)
        if np.any(sq > 1.0 + _TOL):
            raise DomainError("sign-alsh keys must lie in the unit ball after scaling")
        extra = [0.5 - sq ** (2 ** (i - 1)) for i in range(1, spec.m + 1)]
        return np.concatenate([k] + extra, axis=-1)
    if s in ("xbox", "xbox-qnf"):
        if spec.M is None:
            raise ConfigError("XBOX needs M; run normalize_inputs first")
        return np.concatenate([k, _sqrt_slack(spec.M ** 2, k, "xbox key")], axis=-1)
    tail = _sqrt_slack(1.0, k, "simple transform")
    if s == "simple-lsh":
        return np.concatenate([k, tail], axis=-1)
    return np.concatenate([k, tail, np.zeros_like(tail)], axis=-1)


def draw_direction(dim: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(dim)


def sign_hash(a, x):
    """+1 where ``a . x >= 0`` else -1; works row-wise on a stack of vectors."""
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != a.shape[-1]:
        raise ShapeError(f"direction has {a.shape[-1]} dims, vector has {x.shape[-1]}")
    return np.where(x @ a >= 0, 1, -1)


@dataclass(frozen=True)
class CandidateSet:
    """Row ``i`` holds the sorted key indices query ``i`` attends to."""

    indices: np.ndarray

    def __len__(self):
        return self.indices.shape[0]

    def __getitem__(self, i):
        return self.indices[i].tolist()

    def to_mask(self, L: int) -> np.ndarray:
        mask = np.zeros((len(self), L), dtype=bool)
        np.put_along_axis(mask, self.indices, True, axis=1)
        return mask

    def dumps(self) -> str:
        return "".join(",".join(str(j) for j in row) + "\n" for row in self.indices)

    @classmethod
    def loads(cls, text: str) -> "CandidateSet":
        rows = [[int(t) for t in line.split(",")] for line in text.splitlines() if line.strip()]
        return cls(np.array(rows, dtype=np.int64))


def select_candidates(queries, keys, spec: TransformSpec, a, C: int) -> CandidateSet:
    if C < 1:
        raise ConfigError("C must be >= 1")
    queries = np.asarray(queries, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    L = keys.shape[0]
    c = min(C, L)
    qn, kn, spec = normalize_inputs(queries, keys, spec)
    sq = transform_query(qn, spec, zero_query="identity")
    rk = transform_key(kn, spec)
    hq = sign_hash(a, sq)
    pk = rk @ np.asarray(a, dtype=np.float64)
    # every query is scored against every key, as in the all-pairs hashing cost
    scores = hq[:, None] * pk[None, :]
    top = np.argsort(-scores, axis=1, kind="stable")[:, :c]
    return CandidateSet(np.sort(top, axis=1))


def brute_force_mips(queries, keys, top: int) -> np.ndarray:
    """Exact top-``top`` keys by inner product, best first, ties to the lower index."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    keys = np.asarray(keys, dtype=np.float64)
    if not 1 <= top <= keys.shape[0]:
        raise ValueError(f"top must lie in [1, {keys.shape[0]}]")
    return np.argsort(-(queries @ keys.T), axis=1, kind="stable")[:, :top]


def candidate_mask(q, k, spec: TransformSpec, a, C: int) -> np.ndarray:
    """Boolean ``(..., L, L)`` candidate mask for (possibly batched) Q and K."""
    qv, kv = value_of(q), value_of(k)
    mask = np.zeros(qv.shape[:-1] + (kv.shape[-2],), dtype=bool)
    for idx in np.ndindex(qv.shape[:-2]):
        cs = select_candidates(qv[idx], kv[idx], spec, a, C)
        mask[idx] = cs.to_mask(kv.shape[-2])
    return mask


def lsh_attention_forward(x, w: ProjectionWeights, cfg: AttentionConfig, spec: TransformSpec, directions):
    """Attention restricted to each query's candidate keys.

    ``directions`` holds one hash direction per head.  Selection reads plain
    values, so no gradient flows through it.
    """
    if len(directions) != w.H:
        raise ShapeError(f"need one hash direction per head, got {len(directions)}")
    outs, weights = [], []
    for (q, k, v), a in zip(project_qkv(x, w), directions):
        mask = candidate_mask(q, k, spec, a, cfg.C)
        attn = masked_row_softmax(scaled_scores(q, k), mask)
        weights.append(attn)
        outs.append(matmul(attn, v))
    return concat(outs), weights
