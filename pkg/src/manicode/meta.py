"""Overfitting detector and the adaptive mixing/proximity weights (beta, gamma).

The detector tracks ``r``, a smoothed mean of sign(D(x_real)).  Each step moves
beta by +-delta_beta depending on whether ``r`` is above or below ``eta`` and
sets gamma = gamma0 + delta_gamma * beta.
"""

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class MetaState:
    beta: float = 0.1
    gamma: float | None = None
    beta0: float = 0.1
    gamma0: float = 0.1
    delta_beta: float = 0.001
    delta_gamma: float = 1.2
    eta: float = 0.5
    r_stat: float = 0.0
    ema_decay: float = 0.99
    frozen: bool = False

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in [0, 1)")
        if not -1.0 <= self.r_stat <= 1.0:
            raise ValueError("r_stat must lie in [-1, 1]")
        if self.gamma is None:
            object.__setattr__(self, "gamma", self.gamma0 + self.delta_gamma * self.beta)


def initial_state(beta0=0.1, gamma0=0.1, delta_beta=0.001, delta_gamma=1.2, eta=0.5, ema_decay=0.99):
    return MetaState(
        beta=beta0,
        beta0=beta0,
        gamma0=gamma0,
        delta_beta=delta_beta,
        delta_gamma=delta_gamma,
        eta=eta,
        ema_decay=ema_decay,
    )


def sign_mean(outputs):
    out = np.asarray(outputs, dtype=np.float64).ravel()
    if out.size == 0:
        raise ValueError("empty discriminator batch")
    return float(np.mean(np.sign(out)))


def update_r(state, disc_outputs_on_real):
    """Fold the batch mean of sign(D(x_real)) into the running statistic."""
    batch = sign_mean(disc_outputs_on_real)
    if state.frozen:
        return state
    r = state.ema_decay * state.r_stat + (1.0 - state.ema_decay) * batch
    return replace(state, r_stat=min(1.0, max(-1.0, r)))


def decision(state):
    if state.r_stat > state.eta:
        return 1
    if state.r_stat < state.eta:
        return -1
    return 0


def step_beta_gamma(state):
    if state.frozen:
        return state
    beta = min(1.0, max(0.0, state.beta + state.delta_beta * decision(state)))
    return replace(state, beta=beta, gamma=state.gamma0 + state.delta_gamma * beta)


def fixed_mode(state, beta_fixed, gamma_fixed):
    """Freeze (beta, gamma); later updates are no-ops until :func:`unfreeze`."""
    if not 0.0 <= beta_fixed <= 1.0:
        raise ValueError("beta_fixed must lie in [0, 1]")
    return replace(state, beta=beta_fixed, gamma=gamma_fixed, frozen=True)


def unfreeze(state):
    return replace(state, frozen=False)
