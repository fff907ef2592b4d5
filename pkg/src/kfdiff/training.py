"""Training loop for the keyframe-conditioned denoiser: batched forward
diffusion, masked losses, Adam updates, and a CSV-able loss log."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from . import diffusion
from .denoiser import DenoiserModel, ModelConfig
from .diffusion import DiffusionSchedule, cosine_schedule
from .motion_data import Corpus, ConfigError


class TrainingError(RuntimeError):
    """Non-finite loss or other unrecoverable training failure."""


@dataclass
class TrainConfig:
    T: int = 100
    steps: int = 2000
    batch: int = 32
    lr: float = 1e-4
    d: int = 64
    layers: int = 4
    heads: int = 4
    ff_width: int = 128
    dma_blocks: int = 8
    keyframe_rate: float = 0.05
    dropout_rate: float = 0.1
    lambda_phy: float = 1.0
    lambda_vel: float = 1.0
    lambda_foot: float = 1.0
    seed: int = 0
    conditioning: str = "keyframe"  # or "none" for the text-only baseline
    variance_mode: str = "posterior"

    def validate(self) -> None:
        if self.conditioning not in ("keyframe", "none"):
            raise ConfigError(f"unknown conditioning {self.conditioning!r}")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ConfigError("dropout_rate must be in [0, 1]")


def q_sample_batch(x0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor,
                   sched: DiffusionSchedule) -> torch.Tensor:
    ab = torch.as_tensor(sched.alpha_bar, dtype=x0.dtype)[t]
    ab = ab.view(-1, *([1] * (x0.dim() - 1)))
    return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps


class Trainer:
    """Single-writer trainer over an in-memory corpus."""

    def __init__(self, corpus: Corpus, config: TrainConfig,
                 vocab_size: int = 15):
        config.validate()
        self.config = config
        self.corpus = corpus
        self.sched = cosine_schedule(config.T,
                                     variance_mode=config.variance_mode)
        n_max = corpus.n_max
        feature_dim = corpus.sequences[0].frames.shape[1]
        self.model_cfg = ModelConfig(
            feature_dim=feature_dim, vocab_size=vocab_size, d=config.d,
            heads=config.heads, decoder_layers=config.layers,
            ff_width=config.ff_width, dma_blocks=config.dma_blocks,
            n_max=n_max)
        torch.manual_seed(config.seed & 0x7FFFFFFF)
        self.model = DenoiserModel(self.model_cfg)
        self.opt = torch.optim.Adam(self.model.parameters(), lr=config.lr)
        self.gen = torch.Generator().manual_seed((config.seed + 1)
                                                 & 0x7FFFFFFF)
        self.loss_log: list[tuple[int, float, float, float]] = []

        # normalized, padded tensors
        mean = torch.tensor(corpus.stats.mean, dtype=torch.float32)
        std = torch.tensor(corpus.stats.std, dtype=torch.float32)
        size = len(corpus.sequences)
        self.x0 = torch.zeros(size, n_max, feature_dim)
        self.lengths = torch.zeros(size, dtype=torch.long)
        max_tok = max(len(p.tokens) for p in corpus.prompts)
        self.tokens = torch.zeros(size, max_tok, dtype=torch.long)
        for i, (seq, pr) in enumerate(zip(corpus.sequences, corpus.prompts)):
            n = seq.frames.shape[0]
            fr = torch.tensor(seq.frames, dtype=torch.float32)
            self.x0[i, :n] = (fr - mean) / std
            self.lengths[i] = n
            self.tokens[i, :len(pr.tokens)] = torch.tensor(pr.tokens)
        self.n_max = n_max
        self.feature_dim = feature_dim

    def _make_batch(self):
        cfg = self.config
        size = self.x0.shape[0]
        idx = torch.randint(size, (cfg.batch,), generator=self.gen)
        x0 = self.x0[idx]
        tokens = self.tokens[idx]
        lengths = self.lengths[idx]
        arange = torch.arange(self.n_max)
        padding = arange[None, :] >= lengths[:, None]

        kf_rows = torch.zeros(cfg.batch, self.n_max, dtype=torch.bool)
        for b in range(cfg.batch):
            n = int(lengths[b])
            # per-sample rate jitter around the configured mean so the
            # model sees the whole range of conditioning densities
            u = 0.4 + 1.6 * float(torch.rand((), generator=self.gen))
            k = max(1, int(np.floor(u * cfg.keyframe_rate * n + 0.5)))
            perm = torch.randperm(n, generator=self.gen)[:k]
            kf_rows[b, perm] = True

        t = torch.randint(1, cfg.T + 1, (cfg.batch,), generator=self.gen)
        if cfg.conditioning == "none":
            dropout = torch.ones(cfg.batch, dtype=torch.bool)
        else:
            dropout = torch.rand(cfg.batch, generator=self.gen) \
                < cfg.dropout_rate
        eps = torch.randn(x0.shape, generator=self.gen)
        return x0, tokens, padding, kf_rows, t, dropout, eps

    def _raw_contacts(self, x0_norm: torch.Tensor) -> torch.Tensor:
        """Recover 0/1 contact gates from normalized features."""
        from .motion_data import CONTACT_SLICE
        mean = torch.tensor(self.corpus.stats.mean[CONTACT_SLICE],
                            dtype=x0_norm.dtype)
        std = torch.tensor(self.corpus.stats.std[CONTACT_SLICE],
                           dtype=x0_norm.dtype)
        return x0_norm[..., CONTACT_SLICE] * std + mean

    def train_step(self, step: int) -> tuple[float, float, float]:
        cfg = self.config
        x0, tokens, padding, kf_rows, t, dropout, eps = self._make_batch()
        x_t = q_sample_batch(x0, t, eps, self.sched)
        # only target frames are noised: known keyframe rows stay clean in
        # the denoiser input (unless the sample's condition is dropped)
        keep = kf_rows & ~dropout[:, None]
        x_t = torch.where(keep[..., None], x0, x_t)
        x_kf = x0 * kf_rows[..., None].to(x0.dtype)
        x0_hat = self.model(x_t, t, tokens, x_kf, kf_rows, dropout, padding)

        # loss mask: keyframe entries and padded rows carry no loss
        loss_rows = kf_rows | padding
        mask = loss_rows[..., None].to(x0.dtype).expand_as(x0)
        l_simple = diffusion.simple_loss(x0, x0_hat, mask)
        l_phy = diffusion.phy_loss(x0, x0_hat, mask,
                                   lambda_vel=cfg.lambda_vel,
                                   lambda_foot=cfg.lambda_foot,
                                   contacts=self._raw_contacts(x0)
                                   * (~padding)[..., None].to(x0.dtype))
        total = l_simple + cfg.lambda_phy * l_phy
        if not torch.isfinite(total):
            raise TrainingError(
                f"non-finite loss at step {step}: simple={float(l_simple)} "
                f"phy={float(l_phy)}")
        self.opt.zero_grad()
        total.backward()
        self.opt.step()
        vals = (float(l_simple.detach()), float(l_phy.detach()),
                float(total.detach()))
        self.loss_log.append((step, *vals))
        return vals

    def train(self, progress: bool = False) -> None:
        for step in range(self.config.steps):
            vals = self.train_step(step)
            if progress and (step % 200 == 0 or step ==
                             self.config.steps - 1):
                print(f"step {step}: simple={vals[0]:.4f} phy={vals[1]:.4f} "
                      f"total={vals[2]:.4f}", flush=True)
