import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sfcad import autodiff as ad
from sfcad.errors import CapacityError, ConfigError, ContractError, DimensionError
from sfcad.model import (ENCODERS, READOUTS, ModelConfig, MonitoringWindow, _lstm_step, attention_pool_weights,
                         classify, encode, feature_map, forward_batch, forward_window, init_params, param_count,
                         readout)

SMALL = dict(d_input=6, d_z=8, window_len=3)


def cfg(**kw):
    return ModelConfig(**{**SMALL, **kw})


def test_config_validation():
    with pytest.raises(ConfigError):
        cfg(encoder_kind="transformer", n_heads=3)
    with pytest.raises(ConfigError):
        cfg(window_len=0)
    with pytest.raises(ConfigError):
        cfg(encoder_kind="gru")
    assert cfg(encoder_kind="transformer", n_heads=2).head_width == 4
    assert cfg().classifier_hidden == (8,)


def test_init_is_deterministic():
    a = init_params(cfg(encoder_kind="transformer"), 3)
    b = init_params(cfg(encoder_kind="transformer"), 3)
    assert a.keys() == b.keys()
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_init_ranges():
    c = cfg()
    p = init_params(c, 0)
    bound = np.sqrt(1.0 / c.input_width)
    assert np.all(np.abs(p["map.W"]) <= bound)
    assert np.all(p["map.b"] == 0)
    forget = p["enc.b"][c.d_z:2 * c.d_z]
    assert np.all(forget == 1.0)


def test_feedback_adds_one_map_column():
    a = init_params(cfg(feedback=False), 0)["map.W"]
    b = init_params(cfg(feedback=True), 0)["map.W"]
    assert b.shape[0] == a.shape[0] + 1 and a.shape[1] == b.shape[1]


def test_feature_map_identity_and_bias():
    p = {"map.W": np.eye(4), "map.b": np.zeros(4)}
    x = np.arange(12.0).reshape(3, 4)
    np.testing.assert_array_equal(feature_map(x, p).data, x)
    p["map.b"] = np.array([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(feature_map(np.zeros((5, 4)), p).data, np.tile(p["map.b"], (5, 1)))


def test_feature_map_shared_across_chain_lengths():
    c = cfg()
    p = init_params(c, 0)
    assert feature_map(np.ones((5, 6)), p).shape == (5, 8)
    assert feature_map(np.ones((4, 6)), p).shape == (4, 8)
    with pytest.raises(DimensionError):
        feature_map(np.ones((4, 5)), p)


def test_uni_rnn_single_position_is_one_lstm_step():
    c = cfg()
    p = init_params(c, 1)
    x = np.random.default_rng(0).normal(size=(1, 8))
    z = encode(x, c, p).data
    gates = ad.add(ad.matmul(x, p["enc.W_ih"]), ad.expand(p["enc.b"], (1, 32)))
    h, _ = _lstm_step(gates, ad.Tensor(np.zeros((1, 8))), 8)
    np.testing.assert_allclose(z, h.data, atol=1e-15)


def test_bi_rnn_directional_symmetry_with_tied_weights():
    c = cfg(encoder_kind="bi_rnn")
    p = init_params(c, 2)
    for k in ("W_ih", "W_hh", "b"):
        p[f"enc.bwd.{k}"] = p[f"enc.fwd.{k}"].copy()
    s = np.random.default_rng(1).normal(size=(5, 8))
    a = encode(s, c, p).data
    b = encode(s[::-1], c, p).data
    assert a.shape == (5, 8) and np.all(np.isfinite(a))
    np.testing.assert_allclose(a[:, :4], b[::-1, 4:], atol=1e-14)


@given(st.integers(1, 8), st.integers(0, 10_000), st.floats(0.1, 100.0))
def test_transformer_attention_rows_sum_to_one(V, seed, scale):
    c = cfg(encoder_kind="transformer", n_enc_layers=2)
    p = init_params(c, seed)
    attn = []
    encode(np.random.default_rng(seed).normal(size=(V, 8)) * scale, c, p, attn)
    assert len(attn) == 2
    for a in attn:
        np.testing.assert_allclose(a.sum(axis=-1), 1.0, atol=1e-12, rtol=0)


def test_transformer_capacity():
    c = cfg(encoder_kind="transformer", max_vnfs=4)
    with pytest.raises(CapacityError):
        encode(np.ones((5, 8)), c, init_params(c, 0))


def test_readout_examples():
    np.testing.assert_array_equal(readout(np.array([[1.0, 2.0], [3.0, 4.0]]), "mean").data, [2.0, 3.0])
    np.testing.assert_array_equal(readout(np.array([[1.0, 5.0], [3.0, 4.0]]), "max").data, [3.0, 5.0])
    z = np.random.default_rng(0).normal(size=(4, 3))
    p = {"att.U": np.random.default_rng(1).normal(size=(3, 3)), "att.w": np.zeros(3)}
    np.testing.assert_allclose(readout(z, "self_attention", p).data, z.mean(axis=0), atol=1e-15)
    with pytest.raises(ContractError):
        readout(np.zeros((0, 3)), "mean")


@given(st.integers(1, 7), st.integers(0, 10_000), st.sampled_from(READOUTS))
def test_readout_permutation_invariant(V, seed, kind):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(V, 4))
    p = {"att.U": rng.normal(size=(4, 4)), "att.w": rng.normal(size=4)}
    perm = rng.permutation(V)
    a, b = readout(z, kind, p).data, readout(z[perm], kind, p).data
    if kind == "self_attention":
        np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)
        np.testing.assert_allclose(attention_pool_weights(z, p).data.sum(), 1.0, atol=1e-12)
    else:
        np.testing.assert_array_equal(a, b)


def test_classify_contracts():
    c = cfg()
    p = init_params(c, 0)
    y = classify(np.random.default_rng(0).normal(size=(3, 8)) * 100, c, p)
    assert 0.0 < y.item() < 1.0
    with pytest.raises(DimensionError):
        classify(np.zeros((2, 8)), c, p)
    p["head.Wout"][:] = 0.0
    assert classify(np.ones((3, 8)), c, p).item() == 0.5


def test_single_step_window():
    c = cfg(window_len=1)
    p = init_params(c, 0)
    y = forward_window(MonitoringWindow(np.ones((1, 4, 6))), None, c, p)
    assert 0.0 < y < 1.0


def test_forward_window_feedback_contract():
    c = cfg(feedback=True)
    p = init_params(c, 0)
    w = MonitoringWindow(np.random.default_rng(0).normal(size=(3, 4, 6)))
    with pytest.raises(ContractError):
        forward_window(w, None, c, p)
    with pytest.raises(ContractError):
        forward_window(w, [0.0, 1.0], c, p)
    assert forward_window(w, [0, 0, 0], c, p) != forward_window(w, [1, 1, 1], c, p)


def test_non_feedback_ignores_prev_preds():
    c = cfg()
    p = init_params(c, 0)
    w = MonitoringWindow(np.random.default_rng(0).normal(size=(3, 4, 6)))
    assert forward_window(w, None, c, p) == forward_window(w, [1.0, 0.0, 1.0], c, p)


@pytest.mark.parametrize("kind", ["max", "mean"])
def test_vnf_order_irrelevant_for_position_free_encoder(kind):
    # no recurrent weights and a closed forget gate: each LSTM output depends only on its own input
    c = cfg(readout_kind=kind)
    p = init_params(c, 0)
    p["enc.W_hh"][:] = 0.0
    p["enc.W_ih"][:, 8:16] = 0.0
    p["enc.b"][8:16] = -1e3
    frames = np.random.default_rng(3).normal(size=(3, 5, 6))
    perm = [3, 0, 4, 1, 2]
    a = forward_window(MonitoringWindow(frames), None, c, p)
    b = forward_window(MonitoringWindow(frames[:, perm]), None, c, p)
    assert a == pytest.approx(b, abs=1e-15)


@pytest.mark.parametrize("enc,ro,fb", list(itertools.product(ENCODERS, READOUTS, (False, True))))
def test_parameter_count_independent_of_chain_length(enc, ro, fb):
    c = cfg(encoder_kind=enc, readout_kind=ro, feedback=fb)
    p = init_params(c, 0)
    n = param_count(p)
    assert n == param_count(init_params(c, 1))
    for V in (1, 4, 5):
        x = np.random.default_rng(V).normal(size=(2, 3, V, 6))
        y = forward_batch(x, c, p, np.zeros((2, 3)) if fb else None).data
        assert y.shape == (2,) and np.all((y > 0) & (y < 1))
    assert param_count(p) == n
