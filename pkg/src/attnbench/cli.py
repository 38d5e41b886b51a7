"""Command-line entry point: ``attnbench {cost,bench,train,analyze}``.

Configuration comes from an optional flat ``key=value`` file (``#`` starts a
comment) and from flags; flags win.  Every run writes ``manifest.txt`` next
to its outputs.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .attention import VARIANTS, AttentionConfig, stream_rng
from .cost import cost_table, format_cost_table, run_benchmark, write_bench_csv
from .errors import AttnBenchError, ConfigError
from .numeric import row_softmax
from .pretrain import (
    PCAResult,
    TrainConfig,
    classify_pattern,
    default_data,
    flatten_attention,
    pca_project,
    summarize_labels,
    train,
)
from .synthesizer import build_fixed_init

SUBCOMMANDS = ("cost", "bench", "train", "analyze")
PCA_DIM = 900
DEFAULT_C = 32


@dataclass(frozen=True)
class RunConfig:
    subcommand: str = "cost"
    variants: tuple | None = None
    L: int = 128
    D: int = 64
    H: int = 12
    C: int | None = None
    N: int = 16
    U: float = 0.75
    m: int = 2
    stride: int | None = None
    block: int | None = None
    summary_width: int = 1
    layers: int = 6
    steps: int = 200
    batch_size: int = 8
    lr: float = 0.1
    momentum: float = 0.9
    mask_ratio: float = 0.15
    mask_width: int = 3
    batches: int = 10
    repetitions: int = 5
    warmup: int = 1
    generalize_heads: bool = False
    weights: str = "fixed-init"
    out: str = "runs"
    seed: int = 0

    def resolved_variants(self) -> tuple:
        if self.variants is not None:
            return self.variants
        return ("ours",) if self.subcommand == "train" else VARIANTS

    @property
    def resolved_C(self) -> int:
        # unset C means 32 candidates, capped at the sequence length
        return min(DEFAULT_C, self.L) if self.C is None else self.C

    def attention_config(self, variant: str) -> AttentionConfig:
        return AttentionConfig(L=self.L, D=self.D, H=self.H, variant=variant, C=self.resolved_C, N=self.N, U=self.U,
                               m=self.m, stride=self.stride, block=self.block, summary_width=self.summary_width)

    def train_config(self) -> TrainConfig:
        return TrainConfig(steps=self.steps, batch_size=self.batch_size, lr=self.lr, momentum=self.momentum,
                           mask_ratio=self.mask_ratio, mask_width=self.mask_width, seed=self.seed)


_FIELDS = {f.name: f for f in fields(RunConfig)}
_ALIASES = {"variant": "variants", "out_dir": "out"}
_OPTIONAL_INT = {"stride", "block", "C"}


def _convert(key: str, raw: str):
    f = _FIELDS[key]
    raw = raw.strip()
    try:
        if key == "variants":
            names = tuple(v.strip() for v in raw.split(",") if v.strip())
            unknown = [v for v in names if v not in VARIANTS]
            if unknown or not names:
                raise ConfigError(f"variants: unknown variant {unknown[0] if unknown else raw!r}")
            return names
        if key == "subcommand":
            if raw not in SUBCOMMANDS:
                raise ConfigError(f"subcommand: must be one of {', '.join(SUBCOMMANDS)}, got {raw!r}")
            return raw
        if key in _OPTIONAL_INT:
            return None if raw.lower() in ("", "none", "auto") else int(raw)
        if f.type in ("bool", bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if f.type in ("int", int):
            return int(raw)
        if f.type in ("float", float):
            return float(raw)
        return raw
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{key}: invalid value {raw!r}") from exc


def read_config_file(path) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (t.strip() for t in line.split("=", 1))
        values[key] = value
    return values


def parse_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a validated :class:`RunConfig` from a file and/or flag overrides.

    Unknown keys are rejected.  Values in ``overrides`` may be strings or
    already-typed values and take precedence over the file.
    """
    raw: dict = {}
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file not found: {path}")
        raw.update(read_config_file(path))
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    values = {}
    for key, value in raw.items():
        name = _ALIASES.get(key, key)
        if name not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        values[name] = _convert(name, value if isinstance(value, str) else _to_text(value))
    cfg = RunConfig(**values)
    _validate(cfg)
    return cfg


def _to_text(value) -> str:
    if isinstance(value, (tuple, list)):
        return ",".join(value)
    return str(value)


def _validate(cfg: RunConfig):
    for v in cfg.resolved_variants():
        cfg.attention_config(v)
    cfg.train_config()
    for key in ("layers", "batches", "repetitions"):
        if getattr(cfg, key) < 1:
            raise ConfigError(f"{key}: must be >= 1")
    if cfg.warmup < 0:
        raise ConfigError("warmup: must be >= 0")


def manifest_text(cfg: RunConfig) -> str:
    lines = [f"version={__version__}"]
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if f.name == "variants":
            value = ",".join(cfg.resolved_variants())
        elif f.name == "C":
            value = cfg.resolved_C
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buf.getvalue())


def _run_cost(cfg: RunConfig, out: Path, stdout):
    rows = cost_table(cfg.L, cfg.D, cfg.H, cfg.resolved_C, cfg.N, cfg.resolved_variants())
    stdout.write(format_cost_table(rows))
    _write_csv(out / "cost.csv", ("variant", "training", "inference"),
               [(r["variant"], r["training"], r["inference"]) for r in rows])


def _run_bench(cfg: RunConfig, out: Path, stdout):
    records = []
    for v in cfg.resolved_variants():
        rec = run_benchmark(v, cfg.attention_config(v), cfg.batches, cfg.seed,
                            repetitions=cfg.repetitions, warmup=cfg.warmup,
                            generalize_heads=cfg.generalize_heads)
        records.append(rec)
        stdout.write(f"{v:<15}{rec.seconds:>10.4f} s / {cfg.batches} batches\n")
    write_bench_csv(records, out / "bench.csv")


def _attention_snapshot(result, seed: int) -> np.ndarray:
    model = result.model
    if model.cfg.variant in ("syn-random", "ours"):
        return np.stack([row_softmax(layer.attention_logits()) for layer in model.attn])
    probe = default_data(model.cfg, seed)(stream_rng(seed, "train/probe"), 1).features[0]
    return model.attention_maps(probe)


def _run_train(cfg: RunConfig, out: Path, stdout):
    tcfg = cfg.train_config()
    for v in cfg.resolved_variants():
        result = train(v, tcfg, cfg.attention_config(v), layers=cfg.layers,
                       generalize_heads=cfg.generalize_heads)
        _write_csv(out / f"loss_{v}.csv", ("step", "loss"), [(i, repr(x)) for i, x in enumerate(result.losses)])
        np.savez(out / f"weights_{v}.npz", weights=_attention_snapshot(result, cfg.seed))
        stdout.write(f"{v}: eval loss {result.eval_initial:.4f} -> {result.eval_final:.4f} "
                     f"over {tcfg.steps} steps\n")


def load_weights(source: str, cfg: RunConfig) -> np.ndarray:
    """``layers x H x L x L`` post-softmax weights from an npz file or the fixed init."""
    if source == "fixed-init":
        logits = build_fixed_init(cfg.H, cfg.L, seed=cfg.seed, generalize=cfg.generalize_heads)
        return row_softmax(logits.as_array())[None]
    path = Path(source)
    if not path.exists():
        raise ConfigError(f"weights: file not found: {source}")
    with np.load(path) as data:
        arr = np.asarray(data["weights"], dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != arr.shape[-2]:
        raise ConfigError(f"weights: expected (layers, H, L, L), got {arr.shape}")
    return arr


def analyze(weights: np.ndarray, pca_dim: int = PCA_DIM):
    """Flatten, project to 2-D through PCA and label every head."""
    n_layers, H = weights.shape[:2]
    vectors = flatten_attention(weights)
    pca: PCAResult = pca_project(vectors, min(pca_dim, *vectors.shape))
    coords = pca.projected[:, :2] if pca.projected.shape[1] >= 2 else np.pad(pca.projected, ((0, 0), (0, 1)))
    labels = [[classify_pattern(weights[l, h]) for h in range(H)] for l in range(n_layers)]
    return coords, labels


def format_pattern_report(labels) -> str:
    lines = [f"{'layer':>5} {'head':>4}  {'label':<10} {'diag_offset':>11} {'col_corr':>9}"]
    for l, layer in enumerate(labels, 1):
        for h, lab in enumerate(layer, 1):
            lines.append(f"{l:>5} {h:>4}  {lab.label:<10} {lab.diagonal_offset:>11.3f} {lab.column_corr:>9.3f}")
    for l, layer in enumerate(labels, 1):
        lines.append(f"layer {l}: {summarize_labels([lab.label for lab in layer])}")
    return "\n".join(lines) + "\n"


def _run_analyze(cfg: RunConfig, out: Path, stdout):
    weights = load_weights(cfg.weights, cfg)
    coords, labels = analyze(weights)
    H = weights.shape[1]
    rows = [(f"{i // H + 1}.{i % H + 1}", repr(float(x)), repr(float(y))) for i, (x, y) in enumerate(coords)]
    _write_csv(out / "head_embedding.csv", ("head", "x", "y"), rows)
    report = format_pattern_report(labels)
    (out / "patterns.txt").write_text(report)
    stdout.write(report)


_RUNNERS = {"cost": _run_cost, "bench": _run_bench, "train": _run_train, "analyze": _run_analyze}


def run(cfg: RunConfig, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.txt").write_text(manifest_text(cfg))
        _RUNNERS[cfg.subcommand](cfg, out, stdout)
    except (AttnBenchError, ValueError, OSError) as exc:
        stderr.write(f"error: {exc}\n")
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attnbench", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", nargs="?", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="flat key=value configuration file")
    parser.add_argument("--variants", "--variant", dest="variants", help="comma-separated variant tags")
    for f in fields(RunConfig):
        if f.name in ("subcommand", "variants"):
            continue
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper())
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k != "config" and v is not None}
    try:
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
