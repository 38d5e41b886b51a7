import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attnbench.attention import AttentionConfig
from attnbench.errors import ConfigError, LengthError, ShapeError
from attnbench.models import build_attention
from attnbench.numeric import Var, backward, finite_difference_grad, mul, relative_error, row_softmax, total
from attnbench.synthesizer import (
    DenseSynthWeights,
    PatternSpec,
    RandomSynthLogits,
    build_fixed_init,
    dense_synth_weights,
    fixed_head_specs,
    init_dense,
    init_random,
    make_pattern,
    pattern_csv,
    random_synth_weights,
    synthesizer_forward,
)


def _head(D, N, L, rng):
    return {"w1": rng.standard_normal((D, N)), "b1": rng.standard_normal(N),
            "w2": rng.standard_normal((N, L)), "b2": rng.standard_normal(L)}


# --- dense ----------------------------------------------------------------------

def test_dense_zero_first_layer_gives_bias_rows():
    rng = np.random.default_rng(0)
    head = _head(3, 4, 5, rng)
    head["w1"] = np.zeros((3, 4))
    head["b1"] = np.zeros(4)
    out = dense_synth_weights(rng.standard_normal((5, 3)), head)
    assert np.array_equal(out, np.tile(head["b2"], (5, 1)))


def test_dense_single_hidden_unit():
    x = np.array([[1.0, 2.0], [-1.0, 0.5]])
    head = {"w1": np.array([[1.0], [1.0]]), "b1": np.array([0.5]),
            "w2": np.array([[2.0, -1.0]]), "b2": np.array([0.0, 1.0])}
    # hidden = relu([3.5, 0]) = [3.5, 0]
    assert np.array_equal(dense_synth_weights(x, head), [[7.0, -2.5], [0.0, 1.0]])


def test_dense_negative_preactivations():
    rng = np.random.default_rng(1)
    head = _head(3, 4, 4, rng)
    head["b1"] = np.full(4, -1e6)
    assert np.array_equal(dense_synth_weights(rng.standard_normal((4, 3)), head), np.tile(head["b2"], (4, 1)))


def test_dense_crops_to_input_length():
    rng = np.random.default_rng(2)
    head = _head(3, 2, 6, rng)
    x = rng.standard_normal((4, 3))
    full = np.maximum(x @ head["w1"] + head["b1"], 0) @ head["w2"] + head["b2"]
    assert np.allclose(dense_synth_weights(x, head), full[:, :4], atol=1e-14)
    with pytest.raises(LengthError):
        dense_synth_weights(rng.standard_normal((7, 3)), head)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**32 - 1))
def test_dense_is_row_local(L, seed):
    rng = np.random.default_rng(seed)
    head = _head(3, 4, L, rng)
    x = rng.standard_normal((L, 3))
    i, j = rng.choice(L, 2, replace=False)
    y = x.copy()
    y[j] += rng.standard_normal(3)
    assert np.array_equal(dense_synth_weights(x, head)[i], dense_synth_weights(y, head)[i])


# --- random -----------------------------------------------------------------------

def test_random_full_length():
    logits = init_random(2, 4, np.random.default_rng(0))
    out = random_synth_weights(logits, 4)
    assert all(np.array_equal(a, b) for a, b in zip(out, logits.logits))


def test_random_top_left_slice():
    g = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(random_synth_weights(RandomSynthLogits([g]), 2)[0], [[0.0, 1.0], [3.0, 4.0]])
    with pytest.raises(LengthError):
        random_synth_weights(RandomSynthLogits([g]), 4)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2**32 - 1), st.sampled_from(["syn-random", "ours"]))
def test_random_weights_ignore_input(L, seed, variant):
    H = 2
    cfg = AttentionConfig(L=L, D=4, H=H, C=1, variant=variant)
    kw = {"generalize_heads": True, "L_max": max(L, 3)} if variant == "ours" else {}
    layer = build_attention(cfg, seed=seed % 1000, **kw)
    rng = np.random.default_rng(seed)
    _, w1 = layer.forward(rng.standard_normal((L, 4)))
    _, w2 = layer.forward(rng.standard_normal((L, 4)) * 10)
    for a, b in zip(w1, w2):
        assert a.tobytes() == b.tobytes()


def test_frozen_source_reuses_weights():
    logits = init_random(2, 5, np.random.default_rng(0)).freeze()
    cfg = AttentionConfig(L=5, D=4, H=2, C=1, variant="syn-random")
    vals = [np.eye(4)[:, :2], np.eye(4)[:, 2:]]
    _, w1 = synthesizer_forward(np.ones((5, 4)), vals, cfg, logits)
    _, w2 = synthesizer_forward(np.zeros((5, 4)), vals, cfg, logits)
    assert w1 is w2


# --- forward ---------------------------------------------------------------------

def test_equal_logits_average_values():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((5, 4))
    cfg = AttentionConfig(L=5, D=4, H=1, C=1, variant="syn-random")
    out, _ = synthesizer_forward(x, [np.eye(4)], cfg, RandomSynthLogits([np.zeros((5, 5))]))
    assert np.allclose(out, np.tile(x.mean(axis=0), (5, 1)), atol=1e-14)


def test_saturated_diagonal_copies_values():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((5, 4))
    cfg = AttentionConfig(L=5, D=4, H=1, C=1, variant="syn-random")
    out, _ = synthesizer_forward(x, [np.eye(4)], cfg, RandomSynthLogits([np.eye(5) * 50.0]))
    assert np.max(np.abs(out - x)) <= 1e-6


def test_forward_matches_oracle():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((6, 4))
    logits = init_random(2, 6, rng)
    vals = [rng.standard_normal((4, 2)) for _ in range(2)]
    cfg = AttentionConfig(L=6, D=4, H=2, C=1, variant="syn-random")
    out, _ = synthesizer_forward(x, vals, cfg, logits)
    ref = []
    for g, v in zip(logits.logits, vals):
        e = np.exp(g - g.max(axis=1, keepdims=True))
        ref.append((e / e.sum(axis=1, keepdims=True)) @ (x @ v))
    assert np.allclose(out, np.concatenate(ref, axis=1), atol=1e-12)


def test_forward_head_count_mismatch():
    cfg = AttentionConfig(L=3, D=4, H=2, C=1, variant="syn-random")
    with pytest.raises(ShapeError):
        synthesizer_forward(np.ones((3, 4)), [np.eye(4)], cfg, init_random(2, 3, np.random.default_rng(0)))


# --- gradients --------------------------------------------------------------------

def _check_grads(layer, x, weight):
    params = layer.parameters()
    out, _ = layer.forward(x, grad=True)
    grads = backward(total(mul(out, weight)), params)
    for p, g in zip(params, grads):
        def f(val, p=p):
            saved = p.value
            p.value = val
            try:
                return float(np.sum(layer.forward(x)[0] * weight))
            finally:
                p.value = saved
        fd = finite_difference_grad(f, p.value.copy())
        assert relative_error(g.value, fd) <= 1e-4, p.name


@pytest.mark.parametrize("variant", ["syn-dense", "syn-dense-mh", "syn-random", "ours"])
def test_gradients_match_finite_differences(variant):
    cfg = AttentionConfig(L=8, D=4, H=2, C=1, N=3, variant=variant)
    layer = build_attention(cfg, seed=7, generalize_heads=True)
    rng = np.random.default_rng(8)
    x = rng.standard_normal((8, 4))
    weight = rng.standard_normal((8, 4))
    _check_grads(layer, x, weight)


# --- patterns ---------------------------------------------------------------------

def test_saturated_diagonal_is_identity():
    assert np.allclose(row_softmax(make_pattern(PatternSpec("diagonal", 0, 60.0), 6)), np.eye(6), atol=1e-20)


def test_increasing_rows_rise():
    w = row_softmax(make_pattern(PatternSpec("increasing", sharpness=3.0), 3))
    assert (np.diff(w, axis=1) > 0).all()


def test_shifted_diagonal_peak():
    p = make_pattern(PatternSpec("diagonal", 2), 6)
    assert np.argmax(p[0]) == 2
    # clamped at the right edge
    assert np.argmax(p[5]) == 5


def test_pattern_spec_validation():
    with pytest.raises(ConfigError):
        PatternSpec("diagonal", 3)
    with pytest.raises(ConfigError):
        PatternSpec("diagonal", 0, 0.0)
    with pytest.raises(ConfigError):
        PatternSpec("wavy")
    with pytest.raises(ConfigError):
        make_pattern(PatternSpec("diagonal"), 2)


def test_fixed_init_head_layout():
    logits = build_fixed_init(12, 16, seed=0).as_array()
    for h, shift in enumerate((0, -1, -2, 1, 2)):
        assert np.array_equal(logits[h], make_pattern(PatternSpec("diagonal", shift), 16))
    assert np.array_equal(logits[5], logits[6][:, ::-1])
    assert np.array_equal(logits[5][0], np.linspace(0, 3.0, 16))
    sparse = logits[7:]
    for a in range(5):
        for b in range(a + 1, 5):
            assert not np.array_equal(sparse[a], sparse[b])
    assert np.abs(sparse).max() < 0.2


def test_fixed_init_is_seeded():
    a = build_fixed_init(12, 8, seed=3).as_array()
    assert np.array_equal(a, build_fixed_init(12, 8, seed=3).as_array())
    assert not np.array_equal(a[7:], build_fixed_init(12, 8, seed=4).as_array()[7:])


def test_fixed_init_head_count():
    with pytest.raises(ConfigError):
        build_fixed_init(8, 16)
    kinds = [s.kind for s in fixed_head_specs(24, generalize=True)]
    assert kinds.count("diagonal") == 10 and kinds.count("increasing") == 2
    assert kinds.count("decreasing") == 2 and kinds.count("sparse-random") == 10
    assert [s.kind for s in fixed_head_specs(2, generalize=True)] == ["diagonal", "sparse-random"]


def test_pattern_csv():
    assert pattern_csv(np.array([[1.0, 0.5], [0.0, 2.0]])) == "1.0,0.5\n0.0,2.0\n"
    with pytest.raises(ShapeError):
        pattern_csv(np.ones(3))
