"""Denoising auto-encoder used in place of a dictionary coder.

Two affine maps with a leaky rectifier between them; in training mode
Gaussian noise of variance ``noise_var`` is added to the input first.
"""

from dataclasses import dataclass, replace

import numpy as np

from .core import DTYPE, as_matrix


@dataclass(frozen=True, eq=False)
class DaeEncoder:
    w1: np.ndarray  # hidden x d
    b1: np.ndarray
    w2: np.ndarray  # d x hidden
    b2: np.ndarray
    noise_var: float = 0.04
    leaky_slope: float = 0.2

    def __post_init__(self):
        w1 = np.asarray(self.w1, dtype=DTYPE)
        w2 = np.asarray(self.w2, dtype=DTYPE)
        b1 = np.asarray(self.b1, dtype=DTYPE).reshape(-1)
        b2 = np.asarray(self.b2, dtype=DTYPE).reshape(-1)
        if w1.shape[0] < 1:
            raise ValueError("hidden width must be >= 1")
        if w1.shape != (w2.shape[1], w2.shape[0]) or b1.shape[0] != w1.shape[0] or b2.shape[0] != w2.shape[0]:
            raise ValueError("inconsistent DAE weight shapes")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must lie in (0, 1)")
        if self.noise_var < 0:
            raise ValueError("noise_var must be >= 0")
        for name, arr in (("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)

    @property
    def hidden(self):
        return self.w1.shape[0]

    def params(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def init_dae(d, rng, hidden=64, noise_var=0.04, leaky_slope=0.2):
    s1 = np.sqrt(2.0 / d)
    s2 = np.sqrt(2.0 / hidden)
    return DaeEncoder(
        w1=rng.normal(0.0, s1, size=(hidden, d)),
        b1=np.zeros(hidden),
        w2=rng.normal(0.0, s2, size=(d, hidden)),
        b2=np.zeros(d),
        noise_var=noise_var,
        leaky_slope=leaky_slope,
    )


def _forward(x, enc, rng, train_mode):
    if train_mode and enc.noise_var > 0:
        xin = x + rng.normal(0.0, np.sqrt(enc.noise_var), size=x.shape)
    else:
        xin = x
    z = enc.w1 @ xin + enc.b1[:, None]
    a = np.where(z > 0, z, enc.leaky_slope * z)
    out = enc.w2 @ a + enc.b2[:, None]
    return out, (xin, z, a)


def dae_forward(x, enc, rng=None, train_mode=False):
    x = as_matrix(x, "x")
    if train_mode and enc.noise_var > 0 and rng is None:
        raise ValueError("train_mode with noise needs an rng")
    return _forward(x, enc, rng, train_mode)[0]


def dae_loss_and_grads(x, enc, rng=None, train_mode=True):
    """Reconstruction loss ||r(x + eps) - x||_F^2 / N and its parameter gradients."""
    x = as_matrix(x, "x")
    n = x.shape[1]
    out, (xin, z, a) = _forward(x, enc, rng, train_mode and enc.noise_var > 0)
    r = out - x
    loss = float(np.einsum("ij,ij->", r, r)) / n
    dout = 2.0 * r / n
    gw2 = dout @ a.T
    gb2 = dout.sum(axis=1)
    da = enc.w2.T @ dout
    dz = da * np.where(z > 0, 1.0, enc.leaky_slope)
    gw1 = dz @ xin.T
    gb1 = dz.sum(axis=1)
    return loss, {"w1": gw1, "b1": gb1, "w2": gw2, "b2": gb2}


def dae_train_step(x, enc, lr, rng=None):
    """One SGD step on the reconstruction loss; returns ``(new_encoder, pre_step_loss)``."""
    if lr < 0:
        raise ValueError("lr must be >= 0")
    loss, grads = dae_loss_and_grads(x, enc, rng, train_mode=True)
    if lr == 0:
        return enc, loss
    new = {name: p - lr * grads[name] for name, p in enc.params().items()}
    return replace(enc, **new), loss
