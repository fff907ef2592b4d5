"""Reverse-process sampling: classifier-free keyframe guidance, DCT
transition guidance, and the two inference-editing baselines (inpainting
and gradient guidance on a text-only model)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .dct_guidance import cfg_combine, transition_grad
from .denoiser import DenoiserModel
from .diffusion import DiffusionSchedule, posterior_mean, q_sample
from .motion_data import ConfigError, CorpusStats, denormalize, normalize

STRATEGIES = ("diffkfc", "inpaint", "grad", "text-only")


class SamplingError(RuntimeError):
    """Non-finite state encountered mid-loop."""


@dataclass
class SamplerConfig:
    r: float = 100.0          # transition guidance scale
    s: float = 2.5            # classifier-free scale
    l: int = 4                # DCT half-window
    m: int = 3                # retained DCT bases
    tg_step_window: int | None = None  # apply guidance only for t <= this
    grad_scale: float = 1.0   # keyframe-gradient baseline strength
    seed: int = 0

    def validate(self) -> None:
        if self.r < 0:
            raise ConfigError("transition guidance scale r must be >= 0")
        if self.m > 2 * self.l + 1 or self.m < 1:
            raise ConfigError(f"m={self.m} outside [1, {2 * self.l + 1}]")


def _prep_inputs(model, tokens, n):
    tok = torch.tensor([tokens], dtype=torch.long)
    return tok


def _check_finite(x: torch.Tensor, t: int) -> None:
    if not bool(torch.isfinite(x).all()):
        raise SamplingError(f"non-finite sampler state at step t={t}")


def _tg_active(cfg: SamplerConfig, t: int) -> bool:
    return cfg.tg_step_window is None or t <= cfg.tg_step_window


@torch.no_grad()
def sample(model: DenoiserModel, sched: DiffusionSchedule,
           stats: CorpusStats, tokens: list[int],
           keyframes: np.ndarray | None, indices: list[int] | None,
           n: int, config: SamplerConfig) -> np.ndarray:
    """Keyframe-collaborated sampling. `keyframes` are raw (unnormalized)
    rows aligned with `indices`; pass None for pure text conditioning.
    Returns the denormalized (n, D) motion."""
    config.validate()
    model.eval()
    d = model.cfg.feature_dim
    has_kf = keyframes is not None and indices is not None and len(indices)
    gen = torch.Generator().manual_seed(config.seed & 0x7FFFFFFF)
    tok = _prep_inputs(model, tokens, n)

    kf_rows = torch.zeros(1, n, dtype=torch.bool)
    x_kf = torch.zeros(1, n, d)
    kf_norm = None
    if has_kf:
        kf_norm = normalize(np.asarray(keyframes, dtype=float), stats)
        kf_rows[0, list(indices)] = True
        x_kf[0, list(indices)] = torch.tensor(kf_norm, dtype=torch.float32)

    drop_f = torch.zeros(1, dtype=torch.bool)
    drop_t = torch.ones(1, dtype=torch.bool)
    kf_clean = None
    idx = list(indices) if has_kf else []
    if has_kf:
        kf_clean = torch.tensor(kf_norm, dtype=torch.float32)
    x = torch.randn(1, n, d, generator=gen)
    for t in range(sched.T, 0, -1):
        tt = torch.tensor([t], dtype=torch.long)
        # only target frames diffuse: the conditional view of the state
        # carries the known clean keyframes, while the unconditional CFG
        # pass sees the raw diffusing state it was trained on
        if has_kf:
            x_c = x.clone()
            x_c[0, idx] = kf_clean
        else:
            x_c = x
        x0_unc = model(x, tt, tok, x_kf, kf_rows, drop_t)
        if has_kf:
            x0_cond = model(x_c, tt, tok, x_kf, kf_rows, drop_f)
            x0_hat = cfg_combine(x0_cond, x0_unc, config.s)
        else:
            x0_hat = x0_unc
        mean = posterior_mean(x0_hat, x_c, t, sched)
        sigma2 = sched.sigma2_at(t)
        if has_kf and config.r > 0 and _tg_active(config, t):
            # the smoothness gradient is taken at the mean itself, so the
            # perturbation is a guaranteed descent step on the loss
            est = mean[0].numpy().astype(float)
            g = transition_grad(est, kf_norm, list(indices),
                                config.l, config.m)
            mean = mean - config.r * sigma2 * torch.tensor(
                g, dtype=torch.float32)[None]
        if t > 1:
            z = torch.randn(1, n, d, generator=gen)
            x = mean + np.sqrt(sigma2) * z
        else:
            x = mean
        _check_finite(x, t)
    if has_kf:
        # the generated motion passes through the keyframes
        x[0, idx] = kf_clean
    return denormalize(x[0].numpy().astype(float), stats)


@torch.no_grad()
def baseline_inpaint_sample(model: DenoiserModel, sched: DiffusionSchedule,
                            stats: CorpusStats, tokens: list[int],
                            keyframes: np.ndarray, indices: list[int],
                            n: int, config: SamplerConfig) -> np.ndarray:
    """Inference-time inpainting on a model without keyframe conditioning:
    keyframe rows of the state are overwritten with their forward-noised
    values at every reverse step."""
    config.validate()
    model.eval()
    d = model.cfg.feature_dim
    gen = torch.Generator().manual_seed(config.seed & 0x7FFFFFFF)
    tok = _prep_inputs(model, tokens, n)
    idx = list(indices)
    kf_norm = torch.tensor(normalize(np.asarray(keyframes, dtype=float),
                                     stats), dtype=torch.float32)
    dummy_kf = torch.zeros(1, n, d)
    no_rows = torch.zeros(1, n, dtype=torch.bool)
    drop_t = torch.ones(1, dtype=torch.bool)

    x = torch.randn(1, n, d, generator=gen)
    for t in range(sched.T, 0, -1):
        tt = torch.tensor([t], dtype=torch.long)
        x0_hat = model(x, tt, tok, dummy_kf, no_rows, drop_t)
        mean = posterior_mean(x0_hat, x, t, sched)
        sigma2 = sched.sigma2_at(t)
        if t > 1:
            z = torch.randn(1, n, d, generator=gen)
            x = mean + np.sqrt(sigma2) * z
        else:
            x = mean
        if idx:
            if t - 1 >= 1:
                eps = torch.randn(len(idx), d, generator=gen)
                x[0, idx] = q_sample(kf_norm, t - 1, eps, sched)
            else:
                x[0, idx] = kf_norm
        _check_finite(x, t)
    return denormalize(x[0].numpy().astype(float), stats)


def baseline_gradient_sample(model: DenoiserModel, sched: DiffusionSchedule,
                             stats: CorpusStats, tokens: list[int],
                             keyframes: np.ndarray, indices: list[int],
                             n: int, config: SamplerConfig) -> np.ndarray:
    """Gradient-guided sampling on a model without keyframe conditioning:
    the reverse-step mean is perturbed by the gradient (w.r.t. the noisy
    state) of the masked keyframe reconstruction error."""
    config.validate()
    model.eval()
    d = model.cfg.feature_dim
    gen = torch.Generator().manual_seed(config.seed & 0x7FFFFFFF)
    tok = _prep_inputs(model, tokens, n)
    idx = list(indices)
    kf_norm = torch.tensor(normalize(np.asarray(keyframes, dtype=float),
                                     stats), dtype=torch.float32)
    dummy_kf = torch.zeros(1, n, d)
    no_rows = torch.zeros(1, n, dtype=torch.bool)
    drop_t = torch.ones(1, dtype=torch.bool)

    x = torch.randn(1, n, d, generator=gen)
    for t in range(sched.T, 0, -1):
        tt = torch.tensor([t], dtype=torch.long)
        if config.grad_scale != 0 and idx:
            x_req = x.detach().requires_grad_(True)
            x0_hat = model(x_req, tt, tok, dummy_kf, no_rows, drop_t)
            err = ((x0_hat[0, idx] - kf_norm) ** 2).sum()
            (g,) = torch.autograd.grad(err, x_req)
            x0_hat = x0_hat.detach()
        else:
            with torch.no_grad():
                x0_hat = model(x, tt, tok, dummy_kf, no_rows, drop_t)
            g = torch.zeros_like(x)
        sigma2 = sched.sigma2_at(t)
        mean = posterior_mean(x0_hat, x.detach(), t, sched)
        mean = mean - config.grad_scale * sigma2 * g
        if t > 1:
            z = torch.randn(1, n, d, generator=gen)
            x = mean + np.sqrt(sigma2) * z
        else:
            x = mean
        x = x.detach()
        _check_finite(x, t)
    return denormalize(x[0].numpy().astype(float), stats)


def run_strategy(strategy: str, model_kf: DenoiserModel | None,
                 model_uncond: DenoiserModel | None,
                 sched: DiffusionSchedule, stats: CorpusStats,
                 tokens: list[int], keyframes: np.ndarray | None,
                 indices: list[int] | None, n: int,
                 config: SamplerConfig) -> np.ndarray:
    """Dispatch one generation for a named strategy."""
    if strategy == "diffkfc":
        if model_kf is None:
            raise ConfigError("diffkfc strategy needs a conditioned model")
        return sample(model_kf, sched, stats, tokens, keyframes, indices, n,
                      config)
    if strategy == "text-only":
        model = model_uncond if model_uncond is not None else model_kf
        return sample(model, sched, stats, tokens, None, None, n, config)
    if model_uncond is None:
        raise ConfigError(f"strategy {strategy!r} needs the unconditional "
                          "model")
    if strategy == "inpaint":
        return baseline_inpaint_sample(model_uncond, sched, stats, tokens,
                                       keyframes, indices, n, config)
    if strategy == "grad":
        return baseline_gradient_sample(model_uncond, sched, stats, tokens,
                                        keyframes, indices, n, config)
    raise ConfigError(f"unknown strategy {strategy!r}; "
                      f"expected one of {STRATEGIES}")
