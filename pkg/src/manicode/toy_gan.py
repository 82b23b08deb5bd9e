"""Desk-scale GAN on 2-D mixtures with manifold blocks in the discriminator.

Each discriminator step encodes every block's features, mixes them with their
manifold view, adds the proximity penalty, refits each dictionary with one
gradient step, and advances the overfitting detector.  Generator steps reuse
the same discriminator forward pass without the proximity term.
"""

import logging
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import meta
from .block import ManifoldBlock, block_backward, block_forward, proximity_grads, proximity_loss
from .coders import SOFT_KINDS, CoderConfig, encode_ha
from .core import make_rng, split_rng
from .dae import dae_train_step, init_dae
from .dictionary import dl_step, ema_step, init_dictionary
from .nn import MomentumSGD, init_dense, init_mlp

log = logging.getLogger(__name__)

DATASETS = ("Ring8", "Grid25", "TwoMoons")
ABLATIONS = ("Full", "GammaZero", "BetaZero", "ACM", "FixedBetaGamma", "EmaDict", "NoManifold")
MODE_STD = 0.05
DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    pass


def mode_centers(kind):
    if kind == "Ring8":
        t = 2.0 * np.pi * np.arange(8) / 8
        return np.stack([2.0 * np.cos(t), 2.0 * np.sin(t)])
    if kind == "Grid25":
        g = np.arange(5, dtype=float) - 2.0
        xx, yy = np.meshgrid(g, g, indexing="ij")
        return np.stack([xx.ravel(), yy.ravel()])
    if kind == "TwoMoons":
        return None
    raise ValueError(f"unknown dataset kind {kind!r}")


def _moons(n, rng):
    n_top = (n + 1) // 2
    t_top = rng.uniform(0.0, np.pi, size=n_top)
    t_bot = rng.uniform(0.0, np.pi, size=n - n_top)
    top = np.stack([np.cos(t_top), np.sin(t_top)])
    bot = np.stack([1.0 - np.cos(t_bot), 0.5 - np.sin(t_bot)])
    return np.concatenate([top, bot], axis=1) + rng.normal(0.0, MODE_STD, size=(2, n))


def make_dataset(kind, n, rng):
    """Return a ``2 x n`` sample of the named mixture."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if kind == "TwoMoons":
        return _moons(n, rng)
    centers = mode_centers(kind)
    comp = rng.integers(0, centers.shape[1], size=n)
    return centers[:, comp] + rng.normal(0.0, MODE_STD, size=(2, n))


def _moon_distances(samples):
    # distance from each sample to the two noiseless arcs
    def arc(p, cx, cy, upper):
        v = p - np.array([[cx], [cy]])
        ang = np.arctan2(v[1], v[0])
        ang = np.clip(ang, 0.0, np.pi) if upper else np.clip(ang, -np.pi, 0.0)
        q = np.stack([cx + np.cos(ang), cy + np.sin(ang)])
        return np.linalg.norm(p - q, axis=0)

    return np.stack([arc(samples, 0.0, 0.0, True), arc(samples, 1.0, 0.5, False)])


def mode_metrics(samples, kind):
    """(modes_covered, high_quality_frac) with a 3-std radius and n/(4 modes) count threshold."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[1]
    if n < 1:
        raise ValueError("need at least one sample")
    if kind == "TwoMoons":
        dist = _moon_distances(samples)
    else:
        centers = mode_centers(kind)
        dist = np.linalg.norm(samples[:, None, :] - centers[:, :, None], axis=0)
    n_modes = dist.shape[0]
    near = dist <= 3.0 * MODE_STD
    counts = near.sum(axis=1)
    covered = int(np.sum(counts >= n / (4.0 * n_modes)))
    hq = float(np.mean(near.any(axis=0)))
    return covered, hq


def hinge_losses(d_real, d_fake):
    d_real = np.asarray(d_real, dtype=float).ravel()
    d_fake = np.asarray(d_fake, dtype=float).ravel()
    if d_real.size == 0 or d_fake.size == 0:
        raise ValueError("empty score batch")
    d_loss = float(np.mean(np.maximum(0.0, 1.0 - d_real)) + np.mean(np.maximum(0.0, 1.0 + d_fake)))
    g_loss = float(-np.mean(d_fake))
    return d_loss, g_loss


def hinge_grads(d_real, d_fake):
    """Gradients of the discriminator hinge loss w.r.t. the real and fake scores."""
    gr = np.where(1.0 - d_real > 0, -1.0 / d_real.size, 0.0)
    gf = np.where(1.0 + d_fake > 0, 1.0 / d_fake.size, 0.0)
    return gr, gf


@dataclass(frozen=True)
class TrainConfig:
    dataset: str = "Ring8"
    n_real: int = 2000
    batch: int = 32
    steps: int = 20000
    d_steps_per_g: int = 1
    lr_g: float = 0.01
    lr_d: float = 0.01
    momentum: float = 0.5
    noise_dim: int = 8
    g_hidden: int = 64
    d_width: int = 32
    n_blocks: int = 4
    coder: str = "LCSA"
    sigma: float = 1.2
    kprime: int = 8
    kappa: float = 0.1
    tau: int = 3
    rho: float = 1e-6
    coder_iters: int = 5
    dict_k: int = 64
    dict_lr: float = 2e-3
    dict_norm_cap: float = 0.0
    ema_decay_dict: float = 0.99
    dae_hidden: int = 64
    dae_noise_var: float = 0.04
    dae_lr: float = 0.01
    beta0: float = 0.1
    gamma0: float = 0.1
    delta_beta: float = 0.001
    delta_gamma: float = 1.2
    eta: float = 0.5
    r_ema: float = 0.99
    fixed_beta: float = 0.4
    fixed_gamma: float = 0.48
    grad_mode: str = "AnalyticJacobian"
    ablation: str = "Full"
    seed: int = 0
    log_every: int = 1000
    eval_samples: int = 2500

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}")
        if self.batch < 2 or self.steps < 1 or self.d_steps_per_g < 1:
            raise ValueError("batch >= 2, steps >= 1 and d_steps_per_g >= 1 required")
        if self.n_blocks < 1 or self.log_every < 1:
            raise ValueError("n_blocks and log_every must be >= 1")

    def coder_config(self):
        return CoderConfig(
            kind=self.coder,
            sigma=self.sigma,
            kprime=self.kprime,
            kappa=self.kappa,
            tau=self.tau,
            rho=self.rho,
            iters=self.coder_iters,
        )

    def effective_grad_mode(self):
        if self.grad_mode == "AnalyticJacobian" and self.coder not in SOFT_KINDS:
            return "StraightThrough"
        return self.grad_mode


@dataclass
class RunMetrics:
    step: int
    d_loss: float
    g_loss: float
    prox_loss: float
    beta: float
    gamma: float
    r_stat: float
    modes_covered: int
    high_quality_frac: float
    mean_recon_err: float


CSV_HEADER = ("step", "d_loss", "g_loss", "prox", "beta", "gamma", "r", "modes", "hq", "recon")


def metrics_row(m):
    return (
        m.step, m.d_loss, m.g_loss, m.prox_loss, m.beta, m.gamma,
        m.r_stat, m.modes_covered, m.high_quality_frac, m.mean_recon_err,
    )


class Discriminator:
    """Stack of :class:`ManifoldBlock` followed by a linear scoring head."""

    def __init__(self, blocks, head):
        self.blocks = blocks
        self.head = head

    def forward(self, x, beta, rng=None, train_mode=True):
        records = []
        h = x
        for blk in self.blocks:
            rec = block_forward(blk, h, beta, rng, train_mode)
            records.append(rec)
            h = rec.mixed
        score, _ = self.head.forward(h)
        return score, records

    def backward(self, records, grad_score, beta, prox=None):
        """Return ``(grad_input, param_grads)``; ``prox`` is a per-block list of X~ gradients."""
        last = records[-1].mixed
        g, gw, gb = self.head.backward(last, None, grad_score)
        grads = [None] * (2 * len(self.blocks) + 2)
        grads[-2], grads[-1] = gw, gb
        for i in range(len(self.blocks) - 1, -1, -1):
            pg = prox[i] if prox is not None else None
            g, gw, gb = block_backward(self.blocks[i], records[i], g, beta, pg)
            grads[2 * i], grads[2 * i + 1] = gw, gb
        return g, grads

    def params(self):
        out = []
        for blk in self.blocks:
            out.extend((blk.layer.w, blk.layer.b))
        out.extend((self.head.w, self.head.b))
        return out


def build_discriminator(cfg, rng):
    ab = cfg.ablation
    variant = {"NoManifold": "plain", "ACM": "acm"}.get(ab, "manifold")
    coder_cfg = cfg.coder_config() if variant == "manifold" else None
    blocks = []
    n_in = 2
    for i in range(cfg.n_blocks):
        layer = init_dense(n_in, cfg.d_width, rng, "leaky")
        dictionary = dae = None
        if variant == "manifold":
            if cfg.coder == "DAE":
                dae = init_dae(cfg.d_width, rng, cfg.dae_hidden, cfg.dae_noise_var)
            else:
                cap = cfg.dict_norm_cap if cfg.dict_norm_cap > 0 else (1.0 if cfg.coder == "OMP" else None)
                dictionary = init_dictionary(cfg.d_width, cfg.dict_k, rng, lr=cfg.dict_lr, norm_cap=cap)
        blocks.append(
            ManifoldBlock(
                layer,
                coder_cfg,
                dictionary,
                dae,
                grad_mode=cfg.effective_grad_mode() if variant == "manifold" else "StraightThrough",
                variant=variant,
                index=i,
            )
        )
        n_in = cfg.d_width
    head = init_dense(cfg.d_width, 1, rng, "identity")
    return Discriminator(blocks, head)


def build_generator(cfg, rng):
    return init_mlp([cfg.noise_dim, cfg.g_hidden, cfg.g_hidden, 2], rng)


def _mix_and_prox_weights(cfg, state):
    """Effective (beta used for mixing, gamma used for the proximity term)."""
    ab = cfg.ablation
    if ab == "NoManifold":
        return 0.0, 0.0
    if ab == "GammaZero":
        return state.beta, 0.0
    if ab == "BetaZero":
        return 0.0, state.gamma
    if ab == "ACM":
        return state.beta, 0.0
    return state.beta, state.gamma


def _check_finite(step, **losses):
    for name, v in losses.items():
        if not np.isfinite(v) or abs(v) > DIVERGENCE_LIMIT:
            raise DivergenceError(f"{name}={v!r} at step {step} exceeds the divergence guard")


@dataclass
class TrainResult:
    history: list
    generator: object
    discriminator: object
    meta_state: object
    samples: np.ndarray
    config: TrainConfig = field(repr=False, default=None)


def update_codebooks(disc, records, cfg, rng):
    """One dictionary (or DAE) update per block from the detached block features."""
    if cfg.ablation in ("NoManifold", "ACM"):
        return
    for blk, rec in zip(disc.blocks, records):
        if cfg.coder == "DAE":
            blk.dae, _ = dae_train_step(rec.x_tilde, blk.dae, cfg.dae_lr, rng)
        elif cfg.ablation == "EmaDict":
            codes = rec.codes if cfg.coder in ("HA", "LCSA", "SA") else encode_ha(rec.x_tilde, blk.dictionary)
            blk.dictionary = ema_step(blk.dictionary, rec.x_tilde, codes, cfg.ema_decay_dict)
        else:
            blk.dictionary, _ = dl_step(blk.dictionary, rec.x_tilde, rec.codes)


def discriminator_grads(disc, real, fake, beta_mix, gamma, manifold=True, rng=None):
    """Hinge + proximity loss of one D batch and its parameter gradients (no update).

    Returns ``(d_loss, prox, grads, real_scores, records)``.
    """
    b = real.shape[1]
    x = np.concatenate([real, fake], axis=1)
    score, records = disc.forward(x, beta_mix, rng)
    s = score[0]
    d_real, d_fake = s[:b], s[b:]
    d_loss, _ = hinge_losses(d_real, d_fake)
    prox = proximity_loss(records, gamma, normalize=True) if manifold else 0.0
    pgrads = proximity_grads(records, gamma, normalize=True) if manifold and gamma != 0.0 else None
    gr, gf = hinge_grads(d_real, d_fake)
    _, grads = disc.backward(records, np.concatenate([gr, gf])[None, :], beta_mix, pgrads)
    return d_loss, prox, grads, d_real, records


def discriminator_step(disc, opt, real, fake, state, cfg, rng):
    """One D update; returns (d_loss, prox, mean_recon, real_scores, records)."""
    beta_mix, gamma = _mix_and_prox_weights(cfg, state)
    manifold = cfg.ablation not in ("NoManifold", "ACM")
    d_loss, prox, grads, d_real, records = discriminator_grads(disc, real, fake, beta_mix, gamma, manifold, rng)
    opt.step(grads)
    recon = float(np.mean([r.per_sample_prox.mean() for r in records])) if manifold else 0.0
    return d_loss, prox, recon, d_real, records


def generator_grads(gen, disc, z, beta_mix, rng=None):
    """g_loss = -mean D(G(z)) and its gradients w.r.t. the generator parameters."""
    fake, cache = gen.forward(z)
    score, records = disc.forward(fake, beta_mix, rng)
    g_loss = float(-np.mean(score))
    grad_score = np.full((1, z.shape[1]), -1.0 / z.shape[1])
    gx, _ = disc.backward(records, grad_score, beta_mix)
    _, ggrads = gen.backward(cache, gx)
    return g_loss, [g for pair in ggrads for g in pair]


def generator_step(gen, gen_opt, disc, state, cfg, rng):
    beta_mix, _ = _mix_and_prox_weights(cfg, state)
    z = rng.normal(size=(cfg.noise_dim, cfg.batch))
    g_loss, grads = generator_grads(gen, disc, z, beta_mix, rng)
    gen_opt.step(grads)
    return g_loss


def sample_generator(gen, n, noise_dim, rng):
    return gen.forward(rng.normal(size=(noise_dim, n)))[0]


def train(cfg, on_log=None):
    """Run the GAN loop; returns a :class:`TrainResult` with the logged metric history."""
    master = make_rng(cfg.seed)
    data_rng, init_rng, step_rng, eval_rng = split_rng(master, 4)
    pool = make_dataset(cfg.dataset, cfg.n_real, data_rng)
    gen = build_generator(cfg, init_rng)
    disc = build_discriminator(cfg, init_rng)
    d_opt = MomentumSGD(disc.params(), cfg.lr_d, cfg.momentum)
    g_opt = MomentumSGD(gen.params(), cfg.lr_g, cfg.momentum)
    state = meta.initial_state(cfg.beta0, cfg.gamma0, cfg.delta_beta, cfg.delta_gamma, cfg.eta, cfg.r_ema)
    if cfg.ablation == "FixedBetaGamma":
        state = meta.fixed_mode(state, cfg.fixed_beta, cfg.fixed_gamma)
    history = []
    d_loss = g_loss = prox = recon = 0.0
    for step in range(1, cfg.steps + 1):
        for _ in range(cfg.d_steps_per_g):
            real = pool[:, step_rng.integers(0, cfg.n_real, size=cfg.batch)]
            fake = sample_generator(gen, cfg.batch, cfg.noise_dim, step_rng)
            d_loss, prox, recon, d_real, records = discriminator_step(disc, d_opt, real, fake, state, cfg, step_rng)
            update_codebooks(disc, records, cfg, step_rng)
            state = meta.update_r(state, d_real)
            if cfg.ablation != "NoManifold":
                state = meta.step_beta_gamma(state)
        g_loss = generator_step(gen, g_opt, disc, state, cfg, step_rng)
        _check_finite(step, d_loss=d_loss, g_loss=g_loss, prox_loss=prox)
        if step % cfg.log_every == 0 or step == cfg.steps:
            samples = sample_generator(gen, cfg.eval_samples, cfg.noise_dim, eval_rng)
            modes, hq = mode_metrics(samples, cfg.dataset)
            no_meta = cfg.ablation == "NoManifold"
            m = RunMetrics(
                step, d_loss, g_loss, prox,
                0.0 if no_meta else state.beta,
                0.0 if no_meta else state.gamma,
                state.r_stat, modes, hq, recon,
            )
            history.append(m)
            log.info("step %d d=%.4f g=%.4f prox=%.4f beta=%.4f modes=%d hq=%.3f",
                     step, d_loss, g_loss, prox, m.beta, modes, hq)
            if on_log is not None:
                on_log(m)
    samples = sample_generator(gen, cfg.eval_samples, cfg.noise_dim, eval_rng)
    return TrainResult(history, gen, disc, state, samples, cfg)


def config_fields():
    return {f.name: f.type for f in fields(TrainConfig)}


def with_overrides(cfg, **kw):
    return replace(cfg, **kw)
