import numpy as np
import pytest

from semmtl import autodiff as ad
from semmtl.layers import (Adam, BiLSTM, ConfigError, Dense, Embedding, LstmCell, clip_grad_norm, dropout,
                           load_checkpoint, lstm_step, read_checkpoint_index, restore, run_lstm,
                           save_checkpoint)


def test_dense_shapes_and_error(rng):
    d = Dense(4, 3, rng, activation="tanh")
    assert d(ad.constant(np.ones((2, 5, 4)))).shape == (2, 5, 3)
    with pytest.raises(ad.ShapeError):
        d(ad.constant(np.ones((2, 5))))


def test_embedding_rejects_out_of_range(rng):
    e = Embedding(10, 4, rng)
    with pytest.raises(IndexError):
        e(np.array([[10]]))


def test_lstm_step_matches_hand_equations(rng):
    cell = LstmCell(3, 2, rng)
    x = rng.normal(size=(1, 3))
    h0, c0 = rng.normal(size=(1, 2)), rng.normal(size=(1, 2))
    h, c = lstm_step(cell, ad.constant(x), ad.constant(h0), ad.constant(c0))
    params = {k: p.value for k, p in cell.named_parameters()}
    W = [v for k, v in params.items() if v.shape == (3, 8)][0]
    U = [v for k, v in params.items() if v.shape == (2, 8)][0]
    b = [v for k, v in params.items() if v.shape == (8,)][0]
    z = x @ W + h0 @ U + b
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    i, f, o, g = sig(z[:, :2]), sig(z[:, 2:4]), sig(z[:, 4:6]), np.tanh(z[:, 6:])
    c_ref = f * c0 + i * g
    np.testing.assert_allclose(c.value, c_ref, rtol=1e-12)
    np.testing.assert_allclose(h.value, o * np.tanh(c_ref), rtol=1e-12)


def test_masked_lstm_ignores_padding(rng):
    layer = BiLSTM(3, 2, rng)
    x = rng.normal(size=(1, 4, 3))
    short = layer(ad.constant(x[:, :2]), np.ones((1, 2), bool)).value
    padded = x.copy()
    padded[:, 2:] = 99.0
    long = layer(ad.constant(padded), np.array([[1, 1, 0, 0]], bool)).value
    np.testing.assert_allclose(long[:, :2], short, rtol=1e-12)


def test_run_lstm_reverse_direction(rng):
    cell = LstmCell(2, 2, rng)
    x = rng.normal(size=(1, 3, 2))
    fwd = run_lstm(cell, ad.constant(x[:, ::-1].copy()))
    bwd = run_lstm(cell, ad.constant(x), reverse=True)
    np.testing.assert_allclose(fwd[-1].value, bwd[0].value, rtol=1e-12)


def test_dropout_identity_at_eval_and_rate_check(rng):
    x = ad.constant(np.ones((4, 4)))
    assert dropout(x, 0.5, training=False) is x
    y = dropout(x, 0.5, training=True, rng=rng).value
    assert set(np.unique(y)) <= {0.0, 2.0}
    with pytest.raises(ConfigError):
        dropout(x, 1.0, training=True, rng=rng)


def test_adam_first_step_moves_by_learning_rate():
    p = ad.parameter(np.array([1.0, -1.0]))
    opt = Adam({"p": p}, learning_rate=0.1)
    p.grad = np.array([0.5, -3.0])
    opt.step()
    np.testing.assert_allclose(p.value, [0.9, -0.9], rtol=1e-6)


def test_adam_skips_zero_gradient_parameters():
    p = ad.parameter(np.array([1.0]))
    opt = Adam({"p": p}, learning_rate=0.1)
    p.grad = np.array([1.0])
    opt.step()
    before = p.value.copy()
    p.grad = np.zeros(1)
    opt.step()
    np.testing.assert_array_equal(p.value, before)


def test_clip_grad_norm():
    a, b = ad.parameter(np.zeros(2)), ad.parameter(np.zeros(1))
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    assert clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(np.sqrt(np.sum(a.grad ** 2) + np.sum(b.grad ** 2)), 1.0)


def test_checkpoint_round_trip_is_bitwise(tmp_path, rng):
    layer = BiLSTM(3, 2, rng)
    params = layer.parameters()
    params_extra = dict(params, half=np.arange(4, dtype=np.float32))
    save_checkpoint(tmp_path / "m.ckpt", params_extra)
    state = load_checkpoint(tmp_path / "m.ckpt")
    assert state["half"].dtype == np.float32
    for k, p in params.items():
        assert np.array_equal(state[k], p.value)
    assert read_checkpoint_index(tmp_path / "m.ckpt")["half"]["shape"] == [4]
    fresh = BiLSTM(3, 2, np.random.default_rng(99))
    restore(fresh, state)
    for k, p in fresh.parameters().items():
        assert np.array_equal(p.value, params[k].value)


def test_restore_rejects_missing_and_bad_file(tmp_path, rng):
    layer = Dense(2, 2, rng)
    with pytest.raises(KeyError):
        restore(layer, {})
    (tmp_path / "bad.ckpt").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.ckpt")
