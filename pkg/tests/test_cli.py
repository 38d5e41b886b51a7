import csv
import io

import numpy as np
import pytest

from attnbench.attention import VARIANTS
from attnbench.cli import RunConfig, main, manifest_text, parse_config, run
from attnbench.cost import theoretical_cost
from attnbench.errors import ConfigError


def _cfg_file(tmp_path, text):
    p = tmp_path / "run.cfg"
    p.write_text(text)
    return p


def test_minimal_file_uses_defaults(tmp_path):
    cfg = parse_config(_cfg_file(tmp_path, "subcommand=cost\n"))
    assert (cfg.L, cfg.D, cfg.H, cfg.resolved_C, cfg.N, cfg.seed) == (128, 64, 12, 32, 16, 0)
    assert cfg.resolved_variants() == VARIANTS


def test_unknown_variant(tmp_path):
    with pytest.raises(ConfigError, match="variant"):
        parse_config(_cfg_file(tmp_path, "variant=frobnicate\n"))


def test_flags_override_file(tmp_path):
    cfg = parse_config(_cfg_file(tmp_path, "# comment line\nL = 128  # trailing\n"), {"L": "500"})
    assert cfg.L == 500


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="colour"):
        parse_config(_cfg_file(tmp_path, "colour=blue\n"))


def test_invalid_value_names_key(tmp_path):
    with pytest.raises(ConfigError, match="steps"):
        parse_config(_cfg_file(tmp_path, "steps=many\n"))


def test_malformed_line(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(_cfg_file(tmp_path, "just words\n"))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "nope.cfg")


def test_invalid_attention_combination():
    with pytest.raises(ConfigError):
        parse_config(None, {"L": "8", "C": "32"})


def test_unset_C_follows_short_sequences():
    assert parse_config(None, {"L": "16"}).resolved_C == 16
    assert parse_config(None, {"L": "16", "C": "4"}).resolved_C == 4


def test_train_defaults_to_ours():
    assert parse_config(None, {"subcommand": "train"}).resolved_variants() == ("ours",)


def test_cost_table_run(tmp_path):
    cfg = parse_config(None, {"subcommand": "cost", "L": "500", "D": "768", "H": "12", "C": "32", "N": "16",
                              "out": str(tmp_path)})
    out = io.StringIO()
    assert run(cfg, stdout=out) == 0
    rows = list(csv.DictReader(open(tmp_path / "cost.csv")))
    assert [r["variant"] for r in rows] == list(VARIANTS)
    for r in rows:
        for phase in ("training", "inference"):
            assert int(r[phase]) == theoretical_cost(r["variant"], phase, 500, 768, 12, 32, 16).ops
    assert "7,536,000" in out.getvalue()


def test_train_zero_steps(tmp_path):
    cfg = parse_config(None, {"subcommand": "train", "steps": "0", "L": "16", "D": "12", "C": "4",
                              "layers": "1", "out": str(tmp_path)})
    assert run(cfg, stdout=io.StringIO()) == 0
    assert (tmp_path / "loss_ours.csv").read_text() == "step,loss\n"
    with np.load(tmp_path / "weights_ours.npz") as data:
        assert data["weights"].shape == (1, 12, 16, 16)


def test_analyze_fixed_init(tmp_path):
    cfg = parse_config(None, {"subcommand": "analyze", "out": str(tmp_path)})
    out = io.StringIO()
    assert run(cfg, stdout=out) == 0
    assert "layer 1: 5 Diagonal, 1 Increasing, 1 Decreasing, 5 Sparse" in out.getvalue()
    rows = list(csv.DictReader(open(tmp_path / "head_embedding.csv")))
    assert [r["head"] for r in rows] == [f"1.{h}" for h in range(1, 13)]


def test_analyze_trained_weights(tmp_path):
    base = {"L": "16", "D": "12", "C": "4", "layers": "2", "out": str(tmp_path)}
    assert run(parse_config(None, {**base, "subcommand": "train", "steps": "2", "batch_size": "2"}),
               stdout=io.StringIO()) == 0
    cfg = parse_config(None, {**base, "subcommand": "analyze", "weights": str(tmp_path / "weights_ours.npz")})
    out = io.StringIO()
    assert run(cfg, stdout=out) == 0
    assert "layer 2:" in out.getvalue()
    assert len((tmp_path / "head_embedding.csv").read_text().splitlines()) == 1 + 24


def test_manifest_written(tmp_path):
    cfg = parse_config(None, {"subcommand": "cost", "seed": "9", "out": str(tmp_path)})
    run(cfg, stdout=io.StringIO())
    text = (tmp_path / "manifest.txt").read_text()
    assert text == manifest_text(cfg)
    assert "seed=9" in text and text.startswith("version=")


def test_reruns_are_byte_identical(tmp_path):
    outputs = []
    for name in ("a", "b"):
        d = tmp_path / name
        base = {"L": "16", "D": "12", "C": "4", "layers": "1", "out": str(d)}
        run(parse_config(None, {**base, "subcommand": "train", "steps": "2", "batch_size": "2"}), stdout=io.StringIO())
        run(parse_config(None, {**base, "subcommand": "analyze"}), stdout=io.StringIO())
        run(parse_config(None, {**base, "subcommand": "cost"}), stdout=io.StringIO())
        outputs.append({p.name: p.read_bytes() for p in d.iterdir() if p.name != "manifest.txt" and p.suffix in (".csv", ".txt")})
    assert outputs[0] == outputs[1]


def test_bench_writes_csv(tmp_path):
    cfg = parse_config(None, {"subcommand": "bench", "variants": "baseline-qk,ours", "L": "16", "D": "12",
                              "C": "4", "batches": "1", "repetitions": "1", "out": str(tmp_path)})
    assert run(cfg, stdout=io.StringIO()) == 0
    lines = (tmp_path / "bench.csv").read_text().splitlines()
    assert lines[0] == "variant,L,D,H,C,N,batches,seconds,seed"
    assert [l.split(",")[0] for l in lines[1:]] == ["baseline-qk", "ours"]


def test_module_error_gives_nonzero_exit(tmp_path):
    cfg = parse_config(None, {"subcommand": "analyze", "weights": str(tmp_path / "missing.npz"),
                              "out": str(tmp_path)})
    err = io.StringIO()
    assert run(cfg, stdout=io.StringIO(), stderr=err) == 1
    assert "missing.npz" in err.getvalue()


def test_main_entry(tmp_path, capsys):
    assert main(["cost", "--L", "500", "--D", "768", "--out", str(tmp_path)]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 15
    assert main(["cost", "--variants", "frobnicate", "--out", str(tmp_path)]) == 2
    assert "frobnicate" in capsys.readouterr().err
