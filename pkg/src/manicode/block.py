"""A discriminator block whose output is mixed with its manifold view.

Forward: ``X~ = f(X_in)``, ``h = M alpha(X~)``, ``X_out = (1 - beta) X~ + beta h``.
The proximity term ``gamma / L * sum_l ||X~_l - h_l||_F^2`` treats ``h`` as a
constant, so its gradient never reaches the dictionary.
"""

from dataclasses import dataclass

import numpy as np

from .coders import BOUNDARY_TOL, SOFT_KINDS, CoderConfig, CoderError, decode, encode, soft_jvp
from .dae import dae_forward
from .nn import Dense

GRAD_MODES = ("StraightThrough", "AnalyticJacobian")
VARIANTS = ("manifold", "acm", "plain")


@dataclass
class ManifoldBlock:
    """Block function ``layer`` plus its coder.

    ``variant`` selects the mixing rule: ``"manifold"`` (coder + mixing),
    ``"acm"`` (X_out = (1 - beta) X~, no coder) or ``"plain"`` (X_out = X~).
    For ``coder_cfg.kind == "DAE"`` the coder is ``dae`` instead of ``dictionary``.
    """

    layer: Dense
    coder_cfg: CoderConfig | None = None
    dictionary: object = None
    dae: object = None
    grad_mode: str = "AnalyticJacobian"
    variant: str = "manifold"
    index: int = 0

    def __post_init__(self):
        if self.grad_mode not in GRAD_MODES:
            raise ValueError(f"unknown grad_mode {self.grad_mode!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == "manifold":
            if self.coder_cfg is None:
                raise ValueError("manifold variant needs a coder config")
            if self.grad_mode == "AnalyticJacobian" and self.coder_cfg.kind not in SOFT_KINDS:
                raise CoderError(
                    f"AnalyticJacobian needs a soft coder (SA/LCSA), got {self.coder_cfg.kind}", block=self.index
                )
            if self.coder_cfg.kind == "DAE" and self.dae is None:
                raise ValueError("DAE coder needs a DaeEncoder")
            if self.coder_cfg.kind != "DAE" and self.dictionary is None:
                raise ValueError("dictionary coder needs a Dictionary")


@dataclass
class BlockForwardRecord:
    x_in: np.ndarray
    z: np.ndarray
    x_tilde: np.ndarray
    h_out: np.ndarray | None
    mixed: np.ndarray
    per_sample_prox: np.ndarray
    codes: object = None
    boundary: np.ndarray | None = None


def block_forward(block, x_in, beta, rng=None, train_mode=True):
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    x_tilde, z = block.layer.forward(x_in)
    n = x_tilde.shape[1]
    if block.variant == "plain":
        return BlockForwardRecord(x_in, z, x_tilde, None, x_tilde, np.zeros(n))
    if block.variant == "acm":
        return BlockForwardRecord(x_in, z, x_tilde, None, (1.0 - beta) * x_tilde, np.zeros(n))
    codes = None
    boundary = None
    cfg = block.coder_cfg
    try:
        if cfg.kind == "DAE":
            h = dae_forward(x_tilde, block.dae, rng, train_mode=train_mode)
        else:
            codes = encode(x_tilde, block.dictionary, cfg, rng)
            h = decode(codes, block.dictionary)
            if codes.margins is not None:
                boundary = codes.margins <= BOUNDARY_TOL
    except CoderError as err:
        if err.block is None:
            err.block = block.index
        raise
    r = x_tilde - h
    prox = np.einsum("dn,dn->n", r, r)
    mixed = (1.0 - beta) * x_tilde + beta * h
    return BlockForwardRecord(x_in, z, x_tilde, h, mixed, prox, codes, boundary)


def proximity_loss(records, gamma, normalize=False):
    """(gamma / L) * sum_l ||X~_l - h_l||_F^2; ``normalize`` divides each term by its column count."""
    if not records:
        raise ValueError("need at least one block record")
    total = 0.0
    for rec in records:
        s = float(rec.per_sample_prox.sum())
        total += s / rec.x_tilde.shape[1] if normalize else s
    return gamma / len(records) * total


def proximity_grads(records, gamma, normalize=False):
    """Gradients of :func:`proximity_loss` w.r.t. each ``X~_l`` with ``h_l`` held fixed."""
    n_blocks = len(records)
    out = []
    for rec in records:
        if rec.h_out is None:
            out.append(np.zeros_like(rec.x_tilde))
            continue
        scale = 2.0 * gamma / n_blocks
        if normalize:
            scale /= rec.x_tilde.shape[1]
        out.append(scale * (rec.x_tilde - rec.h_out))
    return out


def mix_backward(block, record, grad_out, beta):
    """Gradient of the mixed output w.r.t. ``X~`` given upstream ``grad_out``."""
    if block.variant == "plain":
        return grad_out
    if block.variant == "acm":
        return (1.0 - beta) * grad_out
    if block.grad_mode == "StraightThrough" or beta == 0.0:
        return grad_out
    if block.coder_cfg.kind not in SOFT_KINDS:
        raise CoderError("AnalyticJacobian requested for a non-soft coder", block=block.index)
    jg = soft_jvp(block.dictionary.atoms, record.codes, record.h_out, grad_out, block.coder_cfg.sigma)
    if record.boundary is not None and np.any(record.boundary):
        jg[:, record.boundary] = 0.0
    return (1.0 - beta) * grad_out + beta * jg


def block_backward(block, record, grad_out, beta, prox_grad=None):
    """Chain through mixing and the block layer; returns ``(grad_x_in, grad_w, grad_b)``."""
    g = mix_backward(block, record, grad_out, beta)
    if prox_grad is not None:
        g = g + prox_grad
    return block.layer.backward(record.x_in, record.z, g)
