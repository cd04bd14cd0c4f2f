import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsqa import ndgrad as G
from dsqa.bottleneck import GumbelConfig, SemhashConfig
from dsqa.compressor import Compressor, CompressorConfig, HalvingStep, latent_mask, receptive_field

H = 8


def make(k=2, local=False, pretrain=0, bottleneck=None, seed=0):
    bn = bottleneck or SemhashConfig(bits=4, filter_size=8, hidden_size=H)
    cfg = CompressorConfig(k=k, local=local, hidden_size=H, pretrain_steps=pretrain, bottleneck=bn)
    store = G.ParamStore(G.RngState(seed))
    return Compressor(store, cfg), store


def x_of(n, seed=0, batch=None):
    shape = (n, H) if batch is None else (batch, n, H)
    return np.random.default_rng(seed).normal(size=shape).astype(np.float32)


def test_halving_lengths():
    step = HalvingStep(G.ParamStore(G.RngState(0)), H)
    assert step(x_of(16)).shape == (8, H)
    assert step(x_of(7)).shape == (4, H)
    assert step(x_of(1)).shape == (1, H)


def test_halving_residual_identity_path():
    store = G.ParamStore(G.RngState(0))
    step = HalvingStep(store, H)
    for conv in step.convs:
        conv.kernel.value[...] = 0
        conv.bias.value[...] = 0
    for norm in step.norms:
        norm.gain.value[...] = 0
    x = x_of(10)
    np.testing.assert_array_equal(step(x).value, step.down(x).value)


@given(st.integers(1, 128), st.integers(1, 3), st.booleans())
@settings(max_examples=40, deadline=None)
def test_latent_length_is_ceil(n, k, local):
    comp, _ = make(k=k, local=local)
    out = comp(G.DiffArray(x_of(n)), train=False, step=0)
    assert out.dense_latent.shape == (-(-n // 2**k), H)
    assert len(out.latent) == -(-n // 2**k)


def test_k3_shapes():
    comp, _ = make(k=3)
    assert comp(G.DiffArray(x_of(64)), False, 0).latent.ids.shape == (8,)


def test_empty_sequence_rejected():
    comp, _ = make()
    with pytest.raises(ValueError):
        comp(G.DiffArray(np.zeros((0, H), np.float32)), False, 0)


def test_receptive_field():
    mk = lambda local, k: CompressorConfig(k=k, local=local, hidden_size=H,  # noqa: E731
                                           bottleneck=SemhashConfig(hidden_size=H))
    assert receptive_field(mk(True, 3)) == 8
    assert receptive_field(mk(False, 3)) >= 12
    with pytest.raises(G.ConfigError):
        receptive_field(mk(True, 0))
    with pytest.raises(G.ConfigError):
        mk(True, 0).validate()


@pytest.mark.parametrize("pos", [0, 17, 31, 40])
def test_local_variant_locality(pos):
    comp, _ = make(k=3, local=True)
    x = x_of(48)
    base = comp.shorten(G.DiffArray(x)).value
    x2 = x.copy()
    x2[pos] += 1.0
    changed = np.any(comp.shorten(G.DiffArray(x2)).value != base, axis=-1)
    assert np.flatnonzero(changed).tolist() == [pos // 8]


def test_global_variant_is_not_local():
    comp, _ = make(k=3, local=False)
    x = x_of(48)
    base = comp.shorten(G.DiffArray(x)).value
    x2 = x.copy()
    x2[17] += 1.0
    assert np.sum(np.any(comp.shorten(G.DiffArray(x2)).value != base, axis=-1)) > 1


def test_bypass_is_exact_and_skips_bottleneck():
    comp, store = make(k=2, pretrain=10)
    x = G.DiffArray(x_of(12, batch=2), requires_grad=True)
    with G.Tape() as tape:
        out = comp(x, train=True, step=0, rng=G.RngState(0))
        loss = G.sum(G.square(out.dense_latent))
    assert out.latent is None and out.bypassed
    assert out.dense_latent is out.s_prime
    grads = tape.backward(loss, list(store))
    for name, g in grads.items():
        if "bottleneck" in name:
            assert not np.any(g), name
        elif name.endswith("kernel"):
            assert np.any(g), name


def test_phase_switch_keeps_shapes():
    comp, _ = make(k=2, pretrain=5)
    x = G.DiffArray(x_of(12, batch=2))
    before = comp(x, True, 4, G.RngState(0))
    after = comp(x, True, 5, G.RngState(0))
    assert before.latent is None and after.latent is not None
    assert before.dense_latent.shape == after.dense_latent.shape


def test_post_bypass_gradient_reaches_compressor():
    comp, store = make(k=2, pretrain=0)
    x = G.DiffArray(x_of(12, batch=2))
    with G.Tape() as tape:
        loss = G.sum(G.square(comp(x, True, 0, G.RngState(1)).dense_latent))
    grads = tape.backward(loss, list(store))
    assert np.any(grads["step0/down/kernel"])
    assert np.any(grads["bottleneck/project/W"])


def test_gumbel_compressor_runs():
    comp, _ = make(bottleneck=GumbelConfig(num_symbols=16, hidden_size=H, variance_penalty_weight=0.1))
    mask = np.ones((2, 12), np.float32)
    out = comp(G.DiffArray(x_of(12, batch=2)), True, 0, G.RngState(0), token_mask=mask)
    assert out.dense_latent.shape == (2, 3, H)
    assert out.aux_loss is not None
    assert out.latent.ids.max() < 16


def test_latent_mask():
    mask = np.array([[1, 1, 1, 1, 1, 0, 0, 0], [1, 1, 0, 0, 0, 0, 0, 0]], np.float32)
    np.testing.assert_array_equal(latent_mask(mask, 4), [[1, 1], [1, 0]])
