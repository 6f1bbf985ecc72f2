import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from survseq import autodiff as ad
from survseq.autodiff import Tensor
from survseq.encoder import (
    encode_batch,
    gru_step,
    grud_step,
    hidden_decay,
    impute,
    init_encoder,
    input_decay,
)
from survseq.gradcheck import grad_check


def _params(D=3, H=4, layers=1, seed=0, dtype=np.float64):
    p = init_encoder(np.random.default_rng(seed), D, H, layers, dtype)
    return {k: Tensor(v) for k, v in p.items()}


def _inputs(B=2, S=4, D=3, seed=0):
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(B, S, D))
    mask = rng.integers(0, 2, (B, S, D)).astype(float)
    delta = rng.uniform(0, 2, (B, S, D))
    x_last = rng.normal(size=(B, S, D))
    valid = np.ones((B, S))
    return values * mask, mask, delta, x_last, valid


def test_input_decay_examples():
    assert input_decay(np.zeros(2), np.array([0.3, 0.7]), 0.0).data == pytest.approx([1.0, 1.0])
    assert input_decay(np.array([2.0]), np.array([0.5]), 0.0).data[0] == pytest.approx(np.exp(-1.0), abs=1e-15)
    assert input_decay(np.array([1e4]), np.array([0.5]), 0.0).data[0] < 1e-300


def test_negative_preactivation_is_clamped_to_no_decay():
    assert input_decay(np.array([2.0]), np.array([-0.5]), 0.0).data[0] == 1.0


def test_impute_examples():
    x, last, mean = np.array([2.0]), np.array([5.0]), 0.0
    assert impute(x, np.ones(1), np.array([0.3]), last, mean).data[0] == 2.0
    assert impute(x, np.zeros(1), np.array([1.0]), last, mean).data[0] == 5.0
    assert impute(x, np.zeros(1), np.array([0.0]), last, mean).data[0] == 0.0


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(1e-6, 1.0))
def test_impute_lies_between_last_and_mean(last, mean, gamma):
    got = impute(np.zeros(1), np.zeros(1), np.array([gamma]), np.array([last]), mean).data[0]
    lo, hi = min(last, mean), max(last, mean)
    assert lo - 1e-12 <= got <= hi + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_hidden_decay_shrinks_state(seed):
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(3, 5))
    g = hidden_decay(rng.uniform(0, 3, (3, 2)), rng.normal(size=(2, 5)), rng.normal(size=5)).data
    assert np.all((g > 0) & (g <= 1))
    assert np.abs(g * h).max() <= np.abs(h).max()


def test_closed_update_gate_keeps_decayed_state():
    p = _params(D=2, H=3)
    H = 3
    p["encoder.l0.b"].data[:H] = -1e3  # z -> 0
    x, m, d, last, _ = (a[:, 0] for a in _inputs(B=2, S=1, D=2))
    h_prev = np.random.default_rng(1).normal(size=(2, H))
    got = grud_step(x, m, d, last, h_prev, p, "encoder.l0").data
    want = hidden_decay(d, p["encoder.l0.decay_h_W"], p["encoder.l0.decay_h_b"]).data * h_prev
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_full_observation_without_gaps_is_a_plain_gru_step():
    p = _params(D=3, H=4)
    x = np.random.default_rng(2).normal(size=(2, 3))
    h = np.random.default_rng(3).normal(size=(2, 4))
    got = grud_step(x, np.ones((2, 3)), np.zeros((2, 3)), np.zeros((2, 3)), h, p, "encoder.l0").data
    q = dict(p)
    q["encoder.l0.b"] = Tensor(p["encoder.l0.b"].data + p["encoder.l0.V"].data.sum(axis=0))
    want = gru_step(x, h, q, "encoder.l0").data
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_one_step_sequence_final_equals_only_row():
    p = _params()
    out = encode_batch(*_inputs(S=1), p)
    assert out.hidden.shape == (2, 1, 4)
    np.testing.assert_array_equal(out.hidden.data[:, 0], out.final.data)


def test_padding_holds_final_state():
    p = _params()
    values, mask, delta, x_last, valid = _inputs(S=4)
    valid[0, 2:] = 0
    full = encode_batch(values, mask, delta, x_last, valid, p)
    short = encode_batch(values[:1, :2], mask[:1, :2], delta[:1, :2], x_last[:1, :2], valid[:1, :2], p)
    np.testing.assert_allclose(full.final.data[0], short.final.data[0], atol=1e-14)
    np.testing.assert_array_equal(full.hidden.data[0, 3], full.hidden.data[0, 1])


def test_step_order_matters():
    p = _params()
    values, mask, delta, x_last, valid = _inputs(S=3)
    mask[:] = 1
    swap = [1, 0, 2]
    a = encode_batch(values, mask, delta, x_last, valid, p)
    b = encode_batch(values[:, swap], mask[:, swap], delta[:, swap], x_last[:, swap], valid, p)
    assert not np.allclose(a.hidden.data, b.hidden.data)


def test_zero_steps_rejected():
    with pytest.raises(ValueError):
        encode_batch(*(a[:, :0] for a in _inputs()), _params())


def test_stacked_layers_use_separate_weights():
    one = _params(layers=1)
    two = _params(layers=2)
    assert "encoder.l1.W" in two and "encoder.l1.W" not in one
    out = encode_batch(*_inputs(), two, n_layers=2)
    assert out.hidden.shape == (2, 4, 4)
    np.testing.assert_array_equal(encode_batch(*_inputs(), one).final.data, encode_batch(*_inputs(), one, n_layers=1).final.data)


@pytest.mark.parametrize("layers", [1, 2])
def test_encoder_gradients(layers):
    p = _params(D=3, H=4, layers=layers, seed=5)
    # move decay pre-activations away from the relu kink
    p["encoder.l0.decay_x_b"].data[:] = 0.1
    p["encoder.l0.decay_h_b"].data[:] = 0.1
    values, mask, delta, x_last, valid = _inputs(S=3, seed=6)
    valid[1, 2] = 0
    w = np.random.default_rng(7).normal(size=(2, 3, 4))

    def fn():
        out = encode_batch(values, mask, delta, x_last, valid, p, n_layers=layers)
        return ad.sum(out.hidden * w) + ad.sum(ad.square(out.final))

    report = grad_check(fn, p)
    assert report.passed, report.summary()
