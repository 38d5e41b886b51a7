"""Operation-count model for every attention variant and a wall-clock harness."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import math
import statistics
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .attention import VARIANTS, AttentionConfig, stream_rng
from .errors import ConfigError
from .models import build_attention

PHASES = ("training", "inference")
BENCH_FIELDS = ("variant", "L", "D", "H", "C", "N", "batches", "seconds", "seed")

# Human-readable formulas, printed by the cost table.
FORMULAS = {
    "baseline-qk": ("4LD+2HL^2", "2LD+HL^2"),
    "baseline-q": ("2LD+2HL^2", "LD+HL^2"),
    "sparse-strided": ("2LD+2HL√L+HL√L", "LD+HL√L+HL√L/2"),
    "sparse-fixed": ("2LD+HL√L+HL√L", "LD+HL√L/2+HL√L/2"),
    "syn-dense": ("2LN+2L^2", "LN+L^2"),
    "syn-dense-mh": ("2HLN+2HL^2", "HLN+HL^2"),
    "syn-random": ("HL^2", "-"),
    "ours": ("HL^2", "-"),
}
for _v in ("sign-alsh", "xbox", "xbox-qnf", "simple-lsh", "simple-alsh"):
    FORMULAS[_v] = ("2LD+(HL+2HL^2)/2+2HLC", "LD+(HL+2HL^2)/2+HLC")


@dataclass(frozen=True)
class CostEstimate:
    variant: str
    phase: str
    ops: int


def _ops(variant, phase, L, D, H, C, N):
    r = math.isqrt(L - 1) + 1  # ceil(sqrt(L))
    half = Fraction(1, 2)
    train = phase == "training"
    if variant == "baseline-qk":
        return 4 * L * D + 2 * H * L * L if train else 2 * L * D + H * L * L
    if variant == "baseline-q":
        return 2 * L * D + 2 * H * L * L if train else L * D + H * L * L
    if variant == "sparse-strided":
        return 2 * L * D + 2 * H * L * r + H * L * r if train else L * D + H * L * r + H * L * r * half
    if variant == "sparse-fixed":
        return 2 * L * D + H * L * r + H * L * r if train else L * D + H * L * r * half + H * L * r * half
    if variant in ("sign-alsh", "xbox", "xbox-qnf", "simple-lsh", "simple-alsh"):
        # hashing runs in 16-bit floats, hence the halved second term
        hashing = (H * L + 2 * H * L * L) * half
        return 2 * L * D + hashing + 2 * H * L * C if train else L * D + hashing + H * L * C
    if variant == "syn-dense":
        return 2 * L * N + 2 * L * L if train else L * N + L * L
    if variant == "syn-dense-mh":
        return 2 * H * L * N + 2 * H * L * L if train else H * L * N + H * L * L
    if variant in ("syn-random", "ours"):
        return H * L * L if train else 0
    raise ConfigError(f"unknown variant {variant!r}")


def theoretical_cost(variant: str, phase: str, L: int, D: int, H: int, C: int = 1, N: int = 1) -> CostEstimate:
    """Evaluate the variant's operation-count formula.

    Half terms are evaluated exactly and the total is rounded up to an integer.
    Variants whose inference weights are precomputed report zero at inference.
    """
    if phase not in PHASES:
        raise ConfigError(f"phase must be one of {PHASES}, got {phase!r}")
    if min(L, D, H, C, N) < 1:
        raise ConfigError("all size parameters must be positive")
    ops = _ops(variant, phase, L, D, H, C, N)
    return CostEstimate(variant, phase, math.ceil(ops))


def cost_table(L: int, D: int, H: int, C: int, N: int, variants=VARIANTS) -> list[dict]:
    rows = []
    for v in variants:
        train = theoretical_cost(v, "training", L, D, H, C, N).ops
        infer = theoretical_cost(v, "inference", L, D, H, C, N).ops
        rows.append({"variant": v, "training_formula": FORMULAS[v][0], "inference_formula": FORMULAS[v][1],
                     "training": train, "inference": infer})
    return rows


def format_cost_table(rows: list[dict]) -> str:
    head = f"{'variant':<15}{'training formula':<24}{'training':>14}  {'inference formula':<22}{'inference':>14}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['variant']:<15}{r['training_formula']:<24}{r['training']:>14,}  "
                     f"{r['inference_formula']:<22}{r['inference']:>14,}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class BenchRecord:
    variant: str
    L: int
    D: int
    H: int
    C: int
    N: int
    batches: int
    seconds: float
    seed: int
    # digest of the last output; not part of the CSV
    output_digest: str = dataclasses.field(default="", compare=False)


def run_benchmark(variant: str, cfg: AttentionConfig, batches: int, seed: int = 0,
                  repetitions: int = 1, warmup: int = 1, batch_size: int = 1, **layer_kw) -> BenchRecord:
    """Median wall time of ``batches`` inference forward passes.

    Timed regions run with BLAS pinned to one thread.  Warm-up passes are
    excluded from the timing.  ``layer_kw`` goes to :func:`build_attention`.
    """
    if batches < 1:
        raise ValueError("benchmark needs at least one batch")
    if repetitions < 1:
        raise ValueError("need at least one repetition")
    cfg = dataclasses.replace(cfg, variant=variant)
    layer = build_attention(cfg, seed, **layer_kw).freeze()
    x = stream_rng(seed, "bench/inputs").standard_normal((batch_size, cfg.L, cfg.D))
    if batch_size == 1:
        x = x[0]
    times = []
    with threadpool_limits(limits=1):
        for _ in range(warmup):
            layer.forward(x)
        for _ in range(repetitions):
            t0 = time.perf_counter()
            for _ in range(batches):
                out, _ = layer.forward(x)
            times.append(time.perf_counter() - t0)
    digest = hashlib.sha256(np.ascontiguousarray(out).tobytes()).hexdigest()
    return BenchRecord(variant, cfg.L, cfg.D, cfg.H, cfg.C, cfg.N, batches,
                       statistics.median(times), seed, digest)


def bench_csv_text(records: list[BenchRecord]) -> str:
    if not records:
        raise ValueError("no benchmark records to write")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(BENCH_FIELDS)
    for r in records:
        writer.writerow([r.variant, r.L, r.D, r.H, r.C, r.N, r.batches, repr(r.seconds), r.seed])
    return buf.getvalue()


def write_bench_csv(records: list[BenchRecord], path) -> Path:
    text = bench_csv_text(records)
    path = Path(path)
    path.write_text(text)
    return path


def read_bench_csv(path) -> list[BenchRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ints = ("L", "D", "H", "C", "N", "batches", "seed")
    return [BenchRecord(**{**r, **{k: int(r[k]) for k in ints}, "seconds": float(r["seconds"])}) for r in rows]
