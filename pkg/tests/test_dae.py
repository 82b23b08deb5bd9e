import numpy as np
import pytest

from manicode.core import make_rng
from manicode.dae import DaeEncoder, dae_forward, dae_loss_and_grads, dae_train_step, init_dae


def zero_dae(d, hidden, noise_var=0.04):
    return DaeEncoder(np.zeros((hidden, d)), np.zeros(hidden), np.zeros((d, hidden)), np.zeros(d), noise_var)


def test_null_network_outputs_zero(rng):
    x = rng.normal(size=(3, 5))
    assert np.array_equal(dae_forward(x, zero_dae(3, 4)), np.zeros((3, 5)))


def test_no_noise_train_equals_eval(rng):
    enc = init_dae(4, rng, hidden=8, noise_var=0.0)
    x = rng.normal(size=(4, 6))
    assert np.array_equal(dae_forward(x, enc, rng, True), dae_forward(x, enc, rng, False))


def test_train_mode_adds_noise(rng):
    enc = init_dae(4, rng, hidden=8)
    x = rng.normal(size=(4, 6))
    assert not np.array_equal(dae_forward(x, enc, make_rng(1), True), dae_forward(x, enc))


def test_forward_formula(rng):
    enc = init_dae(3, rng, hidden=5)
    x = rng.normal(size=(3, 4))
    z = enc.w1 @ x + enc.b1[:, None]
    expect = enc.w2 @ np.where(z > 0, z, 0.2 * z) + enc.b2[:, None]
    assert np.allclose(dae_forward(x, enc), expect, atol=1e-14)


def test_gradients_vs_fd(rng):
    enc = init_dae(3, rng, hidden=5, noise_var=0.0)
    enc = DaeEncoder(enc.w1, rng.normal(size=5), enc.w2, rng.normal(size=3), 0.0)
    x = rng.normal(size=(3, 7))
    _, grads = dae_loss_and_grads(x, enc, train_mode=False)
    h = 1e-6
    for name, p in enc.params().items():
        flat = p.ravel()
        for i in range(flat.size):
            up = {k: v.copy() for k, v in enc.params().items()}
            dn = {k: v.copy() for k, v in enc.params().items()}
            up[name].ravel()[i] += h
            dn[name].ravel()[i] -= h
            lu, _ = dae_loss_and_grads(x, DaeEncoder(**up, noise_var=0.0), train_mode=False)
            ld, _ = dae_loss_and_grads(x, DaeEncoder(**dn, noise_var=0.0), train_mode=False)
            assert abs((lu - ld) / (2 * h) - grads[name].ravel()[i]) < 1e-5


def test_train_step_descends(rng):
    enc = init_dae(4, rng, hidden=16, noise_var=0.0)
    x = rng.normal(size=(4, 32))
    losses = []
    for _ in range(100):
        enc, loss = dae_train_step(x, enc, 1e-3)
        losses.append(loss)
    assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:]))


def test_lr_zero_unchanged(rng):
    enc = init_dae(4, rng)
    new, _ = dae_train_step(rng.normal(size=(4, 3)), enc, 0.0, rng)
    for k in enc.params():
        assert np.array_equal(new.params()[k], enc.params()[k])


def test_identity_autoencoder_zero_loss(rng):
    d = 3
    # positive and negative halves let the leaky unit pass x through exactly
    w1 = np.vstack([np.eye(d), -np.eye(d)])
    w2 = np.hstack([np.eye(d), -np.eye(d)]) / 1.0
    enc = DaeEncoder(w1, np.zeros(2 * d), w2, np.zeros(d), noise_var=0.0, leaky_slope=0.2)
    x = rng.normal(size=(d, 10))
    out = dae_forward(x, enc)
    # leaky(z) - leaky(-z) = 1.2 z
    assert np.allclose(out, 1.2 * x, atol=1e-14)
    enc = DaeEncoder(w1, np.zeros(2 * d), w2 / 1.2, np.zeros(d), noise_var=0.0)
    loss, _ = dae_loss_and_grads(x, enc, train_mode=False)
    assert loss < 1e-25


def test_validation():
    with pytest.raises(ValueError):
        DaeEncoder(np.zeros((0, 2)), np.zeros(0), np.zeros((2, 0)), np.zeros(2))
    with pytest.raises(ValueError):
        DaeEncoder(np.zeros((2, 2)), np.zeros(2), np.zeros((2, 2)), np.zeros(2), leaky_slope=1.5)
    with pytest.raises(ValueError):
        DaeEncoder(np.full((2, 2), np.nan), np.zeros(2), np.zeros((2, 2)), np.zeros(2))
