"""Finite-difference oracle for one discriminator step on a micro configuration."""

import numpy as np

from manicode.block import ManifoldBlock
from manicode.coders import CoderConfig
from manicode.core import make_rng
from manicode.dictionary import Dictionary
from manicode.nn import init_dense
from manicode.toy_gan import Discriminator, discriminator_grads, hinge_losses


def micro_discriminator(rng, width=8, n_blocks=2, k=16, kprime=4, sigma=1.2):
    blocks = []
    n_in = 2
    for i in range(n_blocks):
        layer = init_dense(n_in, width, rng)
        layer.b[:] = 0.1 * rng.normal(size=width)
        atoms = 1.5 * rng.normal(size=(width, k))
        cfg = CoderConfig(kind="LCSA", sigma=sigma, kprime=kprime)
        blocks.append(ManifoldBlock(layer, cfg, Dictionary(atoms), grad_mode="AnalyticJacobian", index=i))
        n_in = width
    head = init_dense(width, 1, rng, "identity")
    return Discriminator(blocks, head)


def frozen_loss(disc, real, fake, beta, gamma, h_frozen):
    """Hinge loss with live mixing plus the proximity term against fixed manifold points."""
    x = np.concatenate([real, fake], axis=1)
    score, recs = disc.forward(x, beta)
    b = real.shape[1]
    d_loss, _ = hinge_losses(score[0, :b], score[0, b:])
    prox = sum(np.sum((r.x_tilde - h) ** 2) / r.x_tilde.shape[1] for r, h in zip(recs, h_frozen))
    return d_loss + gamma / len(recs) * prox, score, recs


def _well_posed(disc, real, fake, beta, tol=1e-4):
    x = np.concatenate([real, fake], axis=1)
    score, recs = disc.forward(x, beta)
    b = real.shape[1]
    kinks = np.concatenate([1.0 - score[0, :b], 1.0 + score[0, b:]])
    margins = np.concatenate([r.codes.margins for r in recs])
    return np.min(np.abs(kinks)) > tol and margins.min() > tol


def micro_setup(seed=0, batch=4, beta=0.5):
    s = seed
    while True:
        rng = make_rng(s)
        disc = micro_discriminator(rng)
        real = rng.normal(size=(2, batch))
        fake = rng.normal(size=(2, batch))
        if _well_posed(disc, real, fake, beta):
            return disc, real, fake
        s += 1000


def gradient_check(seed=0, beta=0.5, gamma=0.7, step=1e-6):
    """Return (relative inf-norm error of all D parameter gradients, atoms untouched flag)."""
    disc, real, fake = micro_setup(seed, beta=beta)
    atoms_before = [b.dictionary.atoms.copy() for b in disc.blocks]
    _, _, grads, _, recs = discriminator_grads(disc, real, fake, beta, gamma, manifold=True)
    untouched = all(np.array_equal(b.dictionary.atoms, a) for b, a in zip(disc.blocks, atoms_before))
    h_frozen = [r.h_out.copy() for r in recs]
    # the trainer normalises the proximity term per column
    an = np.concatenate([g.ravel() for g in grads])
    fd = []
    for p in disc.params():
        flat = p.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            lp, _, _ = frozen_loss(disc, real, fake, beta, gamma, h_frozen)
            flat[i] = old - step
            lm, _, _ = frozen_loss(disc, real, fake, beta, gamma, h_frozen)
            flat[i] = old
            fd.append((lp - lm) / (2 * step))
    fd = np.array(fd)
    rel = np.max(np.abs(an - fd)) / max(np.max(np.abs(fd)), 1e-12)
    return float(rel), untouched
