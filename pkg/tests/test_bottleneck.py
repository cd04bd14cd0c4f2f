import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsqa import ndgrad as G
from dsqa.bottleneck import (
    DiscreteCode,
    GumbelConfig,
    GumbelSoftmax,
    SemanticHashing,
    SemhashConfig,
    gumbel_forward,
    gumbel_temperature,
    pack_bits,
    semhash_forward,
    unpack_ids,
    usage_variance_penalty,
)


def small_semhash(seed=0, **kw):
    cfg = SemhashConfig(**{"bits": 6, "filter_size": 12, "hidden_size": 10, **kw})
    return SemanticHashing(G.ParamStore(G.RngState(seed)), cfg), cfg


# ------------------------------------------------------------------ codes


def test_pack_examples():
    assert pack_bits(np.zeros(16, int)) == 0
    assert pack_bits([1, 1] + [0] * 14) == 3


def test_pack_unpack_exhaustive_b8():
    ids = np.arange(256)
    bits = unpack_ids(ids, 8)
    assert set(np.unique(bits)) <= {0, 1}
    np.testing.assert_array_equal(pack_bits(bits), ids)


@given(st.integers(1, 24), st.data())
def test_pack_unpack_roundtrip(b, data):
    i = data.draw(st.integers(0, 2**b - 1))
    assert pack_bits(unpack_ids(i, b)) == i


def test_unpack_out_of_range():
    with pytest.raises(ValueError):
        unpack_ids([256], 8)
    with pytest.raises(ValueError):
        unpack_ids([-1], 8)


def test_discrete_code_invariants():
    code = DiscreteCode.from_ids([0, 5, 255], 8)
    np.testing.assert_array_equal(pack_bits(code.bits), code.ids)
    assert len(code) == 3


def test_config_validation():
    for bad in (dict(bits=0), dict(bits=25), dict(mix_probability=1.5), dict(noise_sigma=-1.0),
                dict(bit_polarity="sideways")):
        with pytest.raises(G.ConfigError):
            SemhashConfig(**bad).validate()
    with pytest.raises(G.ConfigError):
        GumbelConfig(tau_start=0.1, tau_end=0.5).validate()
    with pytest.raises(G.ConfigError):
        GumbelConfig(num_symbols=1).validate()


# ------------------------------------------------------------- projection


def test_project_to_bits_shapes_and_zero():
    sh, _ = small_semhash(bits=16, hidden_size=512, filter_size=8)
    assert sh.project_to_bits(G.DiffArray(np.ones((10, 512), np.float32))).shape == (10, 16)
    for p in (sh.project.weight, sh.project.bias):
        p.value[...] = 0
    assert not np.any(sh.project_to_bits(G.DiffArray(np.ones((3, 512), np.float32))).value)
    with pytest.raises(G.DimensionError):
        sh.project_to_bits(G.DiffArray(np.ones((3, 511), np.float32)))


# ---------------------------------------------------------------- forward


def test_eval_thresholding():
    cfg = SemhashConfig(bits=2)
    dense, code = semhash_forward(G.DiffArray(np.array([3.0, -3.0], np.float32)), False, cfg)
    np.testing.assert_array_equal(code.bits, [1, 0])
    np.testing.assert_array_equal(dense.value, [1.0, 0.0])
    neg = SemhashConfig(bits=2, bit_polarity="negative_is_one")
    _, code = semhash_forward(G.DiffArray(np.array([3.0, -3.0], np.float32)), False, neg)
    np.testing.assert_array_equal(code.bits, [0, 1])


def test_eval_is_deterministic():
    cfg = SemhashConfig(bits=8)
    v = G.DiffArray(np.random.default_rng(0).normal(size=(4, 8)).astype(np.float32))
    a, _ = semhash_forward(v, False, cfg, G.RngState(1))
    b, _ = semhash_forward(v, False, cfg, G.RngState(2))
    np.testing.assert_array_equal(a.value, b.value)


def test_train_requires_rng():
    with pytest.raises(G.ConfigError):
        semhash_forward(G.DiffArray(np.zeros(4, np.float32)), True, SemhashConfig(bits=4))


def test_train_dense_branch_is_saturating_sigmoid_of_noisy_v():
    cfg = SemhashConfig(bits=8, noise_sigma=1.0)
    v = np.random.default_rng(1).normal(size=(5, 8)).astype(np.float32)
    dense, code = semhash_forward(G.DiffArray(v), True, cfg, G.RngState(3), mix_dense=np.ones(5, bool))
    noise = G.gaussian_noise(v.shape, 1.0, G.RngState(3)).value
    vn = v + noise
    np.testing.assert_array_equal(dense.value, G.saturating_sigmoid(vn).value)
    np.testing.assert_array_equal(code.bits, (vn > 0).astype(np.uint8))


def test_straight_through_exact():
    """Discrete branch: forward is the hard bits; gradient equals the v1-branch gradient bit-for-bit."""
    cfg = SemhashConfig(bits=8, noise_sigma=0.7)
    v0 = np.random.default_rng(2).normal(size=(6, 8)).astype(np.float32)
    weights = np.random.default_rng(3).normal(size=(6, 8)).astype(np.float32)

    def grad(mix):
        v = G.DiffArray(v0, requires_grad=True)
        with G.Tape() as tape:
            dense, code = semhash_forward(v, True, cfg, G.RngState(9), mix_dense=np.full(6, mix))
            loss = G.sum(G.mul(dense, weights))
        return dense.value, code, tape.gradient(loss, [v])[0]

    d_disc, code, g_disc = grad(False)
    _, _, g_dense = grad(True)
    assert d_disc.tobytes() == code.bits.astype(np.float32).tobytes()
    assert g_disc.tobytes() == g_dense.tobytes()
    assert np.any(g_disc != 0)


def test_mixing_is_per_position_and_balanced():
    cfg = SemhashConfig(bits=4, mix_probability=0.5)
    v = G.DiffArray(np.full((4000, 4), 0.3, np.float32))
    dense, code = semhash_forward(v, True, cfg, G.RngState(0))
    hard = np.all(dense.value == code.bits, axis=-1)
    assert 0.45 < hard.mean() < 0.55


def test_all_ids_in_range():
    sh, cfg = small_semhash()
    w = G.DiffArray(np.random.default_rng(0).normal(size=(3, 7, 10)).astype(np.float32))
    for train in (True, False):
        _, code, _ = sh(w, train, G.RngState(1))
        assert code.ids.min() >= 0 and code.ids.max() < 2**cfg.bits
        assert code.bits.shape == (3, 7, cfg.bits)


# ------------------------------------------------------ bit-decode network


def test_bit_decode_shapes_and_zero():
    sh, _ = small_semhash(bits=16, filter_size=64, hidden_size=32)
    assert sh.decode(np.zeros((2, 3, 16), np.float32)).shape == (2, 3, 32)
    for layer in (sh.h1a, sh.h1b, sh.h2, sh.out):
        layer.weight.value[...] = 0
        layer.bias.value[...] = 0
    assert not np.any(sh.decode(np.random.default_rng(0).random((4, 16)).astype(np.float32)).value)
    with pytest.raises(G.DimensionError):
        sh.decode(np.zeros((2, 15), np.float32))


@given(st.integers(0, 1000))
@settings(max_examples=20, deadline=None)
def test_bit_decode_complement_symmetry(seed):
    sh, cfg = small_semhash(seed)
    vd = np.random.default_rng(seed).random((5, cfg.bits)).astype(np.float32)
    before = sh.decode(vd).value
    sh.h1a.weight.value, sh.h1b.weight.value = sh.h1b.weight.value.copy(), sh.h1a.weight.value.copy()
    sh.h1a.bias.value, sh.h1b.bias.value = sh.h1b.bias.value.copy(), sh.h1a.bias.value.copy()
    after = sh.decode(1.0 - vd).value
    np.testing.assert_allclose(after, before, rtol=1e-5, atol=1e-6)


def test_embed_ids_matches_eval_path():
    sh, cfg = small_semhash()
    w = G.DiffArray(np.random.default_rng(0).normal(size=(2, 5, 10)).astype(np.float32))
    dense, code, _ = sh(w, False)
    np.testing.assert_array_equal(sh.embed_ids(code.ids).value, dense.value)


# ----------------------------------------------------------------- gumbel


def test_gumbel_eval_argmax():
    emb = G.DiffArray(np.eye(3, dtype=np.float32))
    dense, ids, y = gumbel_forward(G.DiffArray(np.array([0.1, 5.0, -2.0], np.float32)), emb, False, 1.0)
    assert ids == 1 and y is None
    np.testing.assert_array_equal(dense.value, [0, 1, 0])


@given(st.floats(-50, 50))
def test_gumbel_eval_shift_invariance(c):
    logits = np.random.default_rng(0).normal(size=(4, 6)).astype(np.float32)
    emb = G.DiffArray(np.zeros((6, 2), np.float32))
    a = gumbel_forward(G.DiffArray(logits), emb, False, 1.0)[1]
    b = gumbel_forward(G.DiffArray(logits + np.float32(c)), emb, False, 1.0)[1]
    np.testing.assert_array_equal(a, b)


def test_gumbel_low_temperature_one_hot():
    logits = G.DiffArray(np.array([[0.0, 6.0, -1.0]], np.float32))
    _, ids, y = gumbel_forward(logits, G.DiffArray(np.eye(3, dtype=np.float32)), True, 0.05,
                               noise=np.zeros((1, 3)))
    assert y.value.max() > 0.99 and ids[0] == 1


def test_gumbel_uniform_logits_uniform_y():
    for tau in (0.1, 1.0, 7.0):
        _, _, y = gumbel_forward(G.DiffArray(np.zeros((2, 5), np.float32)), G.DiffArray(np.eye(5, dtype=np.float32)),
                                 True, tau, noise=np.zeros((2, 5)))
        np.testing.assert_allclose(y.value, 0.2, rtol=1e-6)


def test_gumbel_bad_temperature():
    with pytest.raises(G.ConfigError):
        gumbel_forward(G.DiffArray(np.zeros(3, np.float32)), G.DiffArray(np.eye(3, dtype=np.float32)), True, 0.0)


def test_gumbel_temperature_schedule():
    cfg = GumbelConfig(tau_start=1.0, tau_end=0.1, tau_decay_steps=100)
    assert gumbel_temperature(cfg, 0) == 1.0
    assert gumbel_temperature(cfg, 50) == pytest.approx(math.sqrt(0.1))
    assert gumbel_temperature(cfg, 100) == pytest.approx(0.1)
    assert gumbel_temperature(cfg, 10_000) == pytest.approx(0.1)


def test_gumbel_module_train_and_eval():
    cfg = GumbelConfig(num_symbols=16, hidden_size=8, variance_penalty_weight=0.1)
    gs = GumbelSoftmax(G.ParamStore(G.RngState(0)), cfg)
    w = G.DiffArray(np.random.default_rng(0).normal(size=(2, 3, 8)).astype(np.float32))
    dense, code, aux = gs(w, True, G.RngState(1), step=5)
    assert dense.shape == (2, 3, 8) and aux is not None
    dense, code, aux = gs(w, False)
    np.testing.assert_array_equal(dense.value, gs.embed_ids(code.ids).value)
    assert aux is None


# ------------------------------------------------------- usage penalty


def test_penalty_extremes():
    v, wgt = 6, 0.5
    same = np.zeros((8, v), np.float32)
    same[:, 0] = 1
    assert usage_variance_penalty(G.DiffArray(same), wgt).item() == pytest.approx(0.0, abs=1e-6)
    uniform = np.eye(v, dtype=np.float32)
    assert usage_variance_penalty(G.DiffArray(uniform), wgt).item() == pytest.approx(-wgt * math.log(v), rel=1e-5)


def test_penalty_prefers_balanced_usage():
    def usage(p):
        rows = np.zeros((10, 2), np.float32)
        rows[: int(round(10 * p)), 0] = 1
        rows[int(round(10 * p)):, 1] = 1
        return usage_variance_penalty(G.DiffArray(rows), 1.0).item()

    assert usage(0.5) < usage(0.9)


def test_penalty_empty_rows():
    with pytest.raises(ValueError):
        usage_variance_penalty(G.DiffArray(np.zeros((0, 3), np.float32)), 1.0)
