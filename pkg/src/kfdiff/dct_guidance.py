"""Low-pass DCT smoothness prior around keyframes: orthonormal basis,
projection windows, the transition loss, its analytic gradient, and the
classifier-free combination rule."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .motion_data import ConfigError


@dataclass
class DctWindow:
    l: int                 # half-window length in frames
    m: int                 # retained low-frequency basis count
    basis: np.ndarray      # (2l+1, m), orthonormal DCT-II columns
    projection: np.ndarray  # (2l+1, 2l+1), basis @ basis.T


@lru_cache(maxsize=None)
def _dct_matrix(length: int, m: int) -> np.ndarray:
    n = np.arange(length)[:, None]
    k = np.arange(m)[None, :]
    mat = np.cos(np.pi * (n + 0.5) * k / length)
    scale = np.full(m, np.sqrt(2.0 / length))
    scale[0] = np.sqrt(1.0 / length)
    return mat * scale


def dct_basis(l: int, m: int) -> DctWindow:
    length = 2 * l + 1
    if not 1 <= m <= length:
        raise ConfigError(f"retained basis count m={m} outside [1, {length}]")
    basis = _dct_matrix(length, m)
    return DctWindow(l=l, m=m, basis=basis, projection=basis @ basis.T)


def _window_projection(length: int, m: int) -> np.ndarray:
    m_eff = min(m, length)
    basis = _dct_matrix(length, m_eff)
    return basis @ basis.T


def transition_loss(x_hat: np.ndarray, keyframes: np.ndarray,
                    indices: list[int], l: int, m: int) -> float:
    """Mean squared residual of the low-pass DCT projection over windows of
    half-width l centred at each keyframe.

    x_hat: (N, D) current generated estimate; keyframes: (K, D) clean
    keyframe rows aligned with `indices`. Windows near the boundary are
    clipped and their basis rebuilt for the clipped length; the denominator
    stays (2l+1)*K.
    """
    if len(indices) == 0:
        raise ConfigError("transition loss needs at least one keyframe")
    n = x_hat.shape[0]
    x_sub = np.array(x_hat, dtype=float, copy=True)
    x_sub[list(indices)] = keyframes  # keyframe rows are constants
    total = 0.0
    for i in indices:
        start, stop = max(0, i - l), min(n, i + l + 1)
        g = x_sub[start:stop]
        p = _window_projection(stop - start, m)
        resid = p @ g - g
        total += float((resid * resid).sum())
    return total / ((2 * l + 1) * len(indices))


def transition_grad(x_hat: np.ndarray, keyframes: np.ndarray,
                    indices: list[int], l: int, m: int) -> np.ndarray:
    """Analytic gradient of transition_loss w.r.t. the generated frames.

    Keyframe rows are constants: their gradient rows are zero. Overlapping
    windows accumulate additively.
    """
    if len(indices) == 0:
        raise ConfigError("transition gradient needs at least one keyframe")
    n = x_hat.shape[0]
    x_sub = np.array(x_hat, dtype=float, copy=True)
    x_sub[list(indices)] = keyframes
    grad = np.zeros_like(x_sub)
    scale = 2.0 / ((2 * l + 1) * len(indices))
    for i in indices:
        start, stop = max(0, i - l), min(n, i + l + 1)
        g = x_sub[start:stop]
        p = _window_projection(stop - start, m)
        grad[start:stop] += scale * ((np.eye(stop - start) - p) @ g)
    grad[list(indices)] = 0.0  # keyframes are not generated frames
    return grad


def cfg_combine(cond, uncond, s: float):
    """uncond + s * (cond - uncond); s=1 -> cond and s=0 -> uncond exactly."""
    if s == 1.0:
        return cond
    if s == 0.0:
        return uncond
    return uncond + s * (cond - uncond)
