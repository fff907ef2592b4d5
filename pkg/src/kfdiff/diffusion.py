"""Noise schedule, closed-form forward process, posterior mean for the
clean-sequence parameterization, and the masked training losses.

Schedule arrays are 1-indexed by diffusion step t in [1, T]; index 0 holds
the t=0 sentinels (beta=0, alpha_bar=1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .motion_data import CONTACT_SLICE, FOOT_JOINTS, POS_SLICE, ConfigError

BETA_MAX = 0.999


class RangeError(ValueError):
    """Diffusion step outside [1, T]."""


class LossError(ValueError):
    """Loss undefined for the given mask."""


@dataclass
class DiffusionSchedule:
    T: int
    beta: np.ndarray        # (T+1,), beta[0] = 0
    alpha: np.ndarray       # (T+1,), alpha[0] = 1
    alpha_bar: np.ndarray   # (T+1,), alpha_bar[0] = 1
    sigma2: np.ndarray      # (T+1,), posterior ("beta-tilde") variances
    sigma2_beta: np.ndarray  # (T+1,), plain beta_t variances
    c1: np.ndarray          # posterior-mean coefficient on X0_hat
    c2: np.ndarray          # posterior-mean coefficient on X_t
    variance_mode: str = "posterior"  # or "beta"

    def check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise RangeError(f"step t={t} outside [1, {self.T}]")

    def sigma2_at(self, t: int) -> float:
        arr = self.sigma2 if self.variance_mode == "posterior" \
            else self.sigma2_beta
        return float(arr[t])


def cosine_schedule(T: int, variance_mode: str = "posterior"
                    ) -> DiffusionSchedule:
    """Cosine alpha-bar schedule with beta clipped at BETA_MAX."""
    if T < 1:
        raise ConfigError(f"step count must be >= 1, got {T}")
    if variance_mode not in ("posterior", "beta"):
        raise ConfigError(f"unknown variance mode {variance_mode!r}")

    def f(u: float) -> float:
        return math.cos((u + 0.008) / 1.008 * math.pi / 2) ** 2

    f0 = f(0.0)
    beta = np.zeros(T + 1)
    alpha_bar = np.ones(T + 1)
    for t in range(1, T + 1):
        ratio = f(t / T) / f((t - 1) / T)
        beta[t] = min(1.0 - ratio, BETA_MAX)
        alpha_bar[t] = alpha_bar[t - 1] * (1.0 - beta[t])
    del f0
    alpha = 1.0 - beta
    alpha[0] = 1.0

    ab_prev = alpha_bar[:-1]  # alpha_bar_{t-1} for t = 1..T
    one_minus_ab = 1.0 - alpha_bar[1:]
    sigma2 = np.zeros(T + 1)
    sigma2[1:] = beta[1:] * (1.0 - ab_prev) / one_minus_ab
    sigma2_beta = np.zeros(T + 1)
    sigma2_beta[1:] = beta[1:]
    c1 = np.zeros(T + 1)
    c2 = np.zeros(T + 1)
    c1[1:] = np.sqrt(ab_prev) * beta[1:] / one_minus_ab
    c2[1:] = np.sqrt(alpha[1:]) * (1.0 - ab_prev) / one_minus_ab

    return DiffusionSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar,
                             sigma2=sigma2, sigma2_beta=sigma2_beta,
                             c1=c1, c2=c2, variance_mode=variance_mode)


def q_sample(x0, t: int, eps, sched: DiffusionSchedule):
    """Closed-form forward jump: sqrt(ab_t) x0 + sqrt(1 - ab_t) eps.

    Works for numpy arrays and torch tensors alike (scalar coefficients).
    """
    sched.check_t(t)
    ab = float(sched.alpha_bar[t])
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def posterior_mean(x0_hat, x_t, t: int, sched: DiffusionSchedule):
    """Mean of p(X_{t-1} | X_t, X0_hat) = c1[t] X0_hat + c2[t] X_t."""
    sched.check_t(t)
    return float(sched.c1[t]) * x0_hat + float(sched.c2[t]) * x_t


def simple_loss(x0, x0_hat, mask):
    """Mean squared error over target (non-keyframe) entries only.

    Accepts numpy arrays or torch tensors; `mask` is 1 on keyframe entries.
    """
    inv = 1.0 - mask
    denom = float(inv.sum())
    if denom == 0:
        raise LossError("all-keyframe mask leaves no target entries")
    diff = (x0 - x0_hat) * inv
    return (diff * diff).sum() / denom


def phy_loss(x0, x0_hat, mask, lambda_vel: float = 1.0,
             lambda_foot: float = 1.0, contacts=None):
    """Kinematic loss: masked position MSE + masked velocity MSE on first
    differences + contact-gated squared foot velocity of the prediction.

    Position/velocity terms are masked to target entries; the foot term is
    unmasked. Velocity differences count only when both endpoint frames are
    targets. `contacts` (..., N, 2) overrides the gate read from x0's
    contact channels (needed when x0 is normalized).
    """
    inv = 1.0 - mask

    pos_inv = inv[..., POS_SLICE]
    pos_denom = float(pos_inv.sum())
    if pos_denom == 0:
        raise LossError("all-keyframe mask leaves no target entries")
    pd = (x0[..., POS_SLICE] - x0_hat[..., POS_SLICE]) * pos_inv
    l_pos = (pd * pd).sum() / pos_denom

    v0 = x0[..., 1:, :][..., POS_SLICE] - x0[..., :-1, :][..., POS_SLICE]
    v1 = x0_hat[..., 1:, :][..., POS_SLICE] - x0_hat[..., :-1, :][..., POS_SLICE]
    vmask = pos_inv[..., 1:, :] * pos_inv[..., :-1, :]
    vdenom = float(vmask.sum())
    if vdenom > 0:
        vd = (v0 - v1) * vmask
        l_vel = (vd * vd).sum() / vdenom
    else:
        l_vel = (v1 * 0.0).sum()

    # contact at frame i gates the prediction's foot motion i -> i+1
    l_foot = (x0_hat * 0.0).sum()
    n_frames = x0.shape[-2]
    if n_frames > 1:
        if contacts is None:
            contacts = x0[..., CONTACT_SLICE]
        contacts = contacts[..., :-1, :]
        total = None
        for k, j in enumerate(FOOT_JOINTS):
            ch = slice(3 * j, 3 * j + 3)
            fv = x0_hat[..., 1:, :][..., ch] - x0_hat[..., :-1, :][..., ch]
            term = (contacts[..., k:k + 1] * fv * fv).sum()
            total = term if total is None else total + term
        l_foot = total / float(np.prod(contacts.shape[:-1]))

    return l_pos + lambda_vel * l_vel + lambda_foot * l_foot
