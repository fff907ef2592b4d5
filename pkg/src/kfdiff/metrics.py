"""Evaluation metrics: ADE, keyframe reconstruction error, keyframe
transition smoothness, diversity, and a hand-crafted-feature Frechet
distance standing in for FID."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np


class MetricInputError(ValueError):
    """Empty or malformed metric inputs."""


@dataclass
class MetricBundle:
    ade: float
    k_err: float
    k_trans: float
    diversity: float
    frechet: float

    def as_dict(self) -> dict:
        return asdict(self)


def ade(gt: np.ndarray, samples: list[np.ndarray],
        keyframe_indices: list[int]) -> float:
    """Min over samples of the mean per-frame L2 distance to ground truth,
    keyframe rows excluded."""
    if len(samples) == 0:
        raise MetricInputError("ADE needs at least one sample")
    n = gt.shape[0]
    keep = np.ones(n, dtype=bool)
    keep[list(keyframe_indices)] = False
    if not keep.any():
        raise MetricInputError("all frames are keyframes; ADE undefined")
    best = np.inf
    for s in samples:
        if s.shape != gt.shape:
            raise MetricInputError("sample shape disagrees with ground truth")
        d = np.linalg.norm((s - gt)[keep], axis=1).mean()
        best = min(best, float(d))
    return best


def k_err(gen: np.ndarray, keyframes: np.ndarray,
          indices: list[int]) -> float:
    """Mean L2 distance between each keyframe and the generated frame at
    its index."""
    if len(indices) == 0:
        raise MetricInputError("K-Err needs at least one keyframe")
    diffs = gen[list(indices)] - keyframes
    return float(np.linalg.norm(diffs, axis=1).mean())


def k_trans(gen: np.ndarray, keyframes: np.ndarray,
            indices: list[int]) -> float:
    """Mean first-difference magnitude at keyframe junctions: per keyframe,
    average of the L2 steps to its available neighbours."""
    if len(indices) == 0:
        raise MetricInputError("K-TranS needs at least one keyframe")
    n = gen.shape[0]
    vals = []
    for kf, i in zip(keyframes, indices):
        steps = []
        if i - 1 >= 0:
            steps.append(np.linalg.norm(kf - gen[i - 1]))
        if i + 1 < n:
            steps.append(np.linalg.norm(gen[i + 1] - kf))
        if steps:
            vals.append(float(np.mean(steps)))
    if not vals:
        raise MetricInputError("no keyframe has a neighbour inside the clip")
    return float(np.mean(vals))


def real_k_trans_reference(sequences, rate: float, seed: int,
                           mask_sampler) -> float:
    """Corpus-level K-TranS of real motions at a given keyframe rate."""
    vals = []
    for idx, seq in enumerate(sequences):
        km = mask_sampler(seq.frames.shape[0], rate, seed + idx)
        kf = seq.frames[km.keyframe_indices]
        vals.append(k_trans(seq.frames, kf, km.keyframe_indices))
    return float(np.mean(vals))


def _pairwise_motion_distance(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise MetricInputError("diversity requires equal-shape motions")
    return float(np.linalg.norm(a - b, axis=1).mean())


def diversity(samples: list[np.ndarray], pair_count: int, seed: int) -> float:
    """Average motion distance between randomly split halves, over
    pair_count random splits/pairings."""
    n = len(samples)
    if n < 2:
        raise MetricInputError("diversity needs at least two samples")
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    half = n // 2
    dists = []
    while len(dists) < pair_count:
        perm = rng.permutation(n)
        for i in range(half):
            if len(dists) == pair_count:
                break
            dists.append(_pairwise_motion_distance(samples[perm[i]],
                                                   samples[perm[half + i]]))
    return float(np.mean(dists))


def motion_features(frames: np.ndarray) -> np.ndarray:
    """Per-motion summary: channel means, channel stds, mean speed, mean
    acceleration magnitude (2D + 2 entries)."""
    mean = frames.mean(axis=0)
    std = frames.std(axis=0)
    if frames.shape[0] > 1:
        vel = np.diff(frames, axis=0)
        speed = np.linalg.norm(vel, axis=1).mean()
    else:
        vel = np.zeros((1, frames.shape[1]))
        speed = 0.0
    if vel.shape[0] > 1:
        acc = np.linalg.norm(np.diff(vel, axis=0), axis=1).mean()
    else:
        acc = 0.0
    return np.concatenate([mean, std, [speed, acc]])


def gaussian_frechet_distance(mu_a, cov_a, mu_b, cov_b) -> float:
    """||mu_a - mu_b||^2 + Tr(cov_a + cov_b - 2 (cov_a cov_b)^{1/2}) with
    symmetric eigendecomposition square roots, eigenvalues clamped at 0."""
    def _sqrtm(sym: np.ndarray) -> np.ndarray:
        w, v = np.linalg.eigh((sym + sym.T) / 2.0)
        return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T

    # canonical argument order: the formula is symmetric, swapping makes
    # the computed value bitwise symmetric too
    if np.asarray(mu_b).tobytes() < np.asarray(mu_a).tobytes():
        mu_a, cov_a, mu_b, cov_b = mu_b, cov_b, mu_a, cov_a
    sa = _sqrtm(np.asarray(cov_a, dtype=float))
    inner = _sqrtm(sa @ np.asarray(cov_b, dtype=float) @ sa)
    mu_d = np.asarray(mu_a, dtype=float) - np.asarray(mu_b, dtype=float)
    fd = float(mu_d @ mu_d + np.trace(cov_a) + np.trace(cov_b)
               - 2.0 * np.trace(inner))
    return max(fd, 0.0)


def frechet_from_features(feat_a: np.ndarray, feat_b: np.ndarray) -> float:
    if feat_a.shape[0] < 2 or feat_b.shape[0] < 2:
        raise MetricInputError("Frechet distance needs >= 2 items per set")
    mu_a, mu_b = feat_a.mean(axis=0), feat_b.mean(axis=0)
    cov_a = np.cov(feat_a, rowvar=False)
    cov_b = np.cov(feat_b, rowvar=False)
    cov_a = np.atleast_2d(cov_a)
    cov_b = np.atleast_2d(cov_b)
    return gaussian_frechet_distance(mu_a, cov_a, mu_b, cov_b)


def frechet_feature_distance(set_a: list[np.ndarray],
                             set_b: list[np.ndarray]) -> float:
    """Frechet distance between Gaussian fits of hand-crafted motion
    features of the two sets."""
    if len(set_a) < 2 or len(set_b) < 2:
        raise MetricInputError("Frechet distance needs >= 2 motions per set")
    feat_a = np.stack([motion_features(f) for f in set_a])
    feat_b = np.stack([motion_features(f) for f in set_b])
    return frechet_from_features(feat_a, feat_b)
