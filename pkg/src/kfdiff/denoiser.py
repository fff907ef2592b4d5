"""Clean-sequence denoiser network: prompt/timestep embedders, the dilated
mask attention (DMA) keyframe encoder, and a transformer decoder.

Token conventions: sequences are (batch, length, width). Validity and
padding are boolean masks over the frame axis; padding tokens are never
valid and never participate in attention or dilation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

NEG_INF = -1e9

DEFAULT_DILATION = (2, 2, 4, 4, 6, 6, 8, -1)  # -1 means "full sequence"


class ValidityError(ValueError):
    """Attention requested with zero valid tokens."""


@dataclass
class ModelConfig:
    feature_dim: int = 19
    vocab_size: int = 15
    d: int = 64
    heads: int = 4
    decoder_layers: int = 4
    ff_width: int = 128
    dma_blocks: int = 8
    dilation: tuple = DEFAULT_DILATION
    n_max: int = 64

    @classmethod
    def paper_scale(cls, feature_dim: int = 19, vocab_size: int = 15,
                    n_max: int = 64) -> "ModelConfig":
        return cls(feature_dim=feature_dim, vocab_size=vocab_size, d=512,
                   heads=8, decoder_layers=8, ff_width=1024, dma_blocks=8,
                   n_max=n_max)

    def dilation_steps(self, n: int) -> list[int]:
        steps = list(self.dilation)[:self.dma_blocks]
        while len(steps) < self.dma_blocks:
            steps.append(-1)
        return [n if s < 0 else s for s in steps]


def sinusoidal_embedding(positions: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sin/cos embedding; positions (...,) -> (..., dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=positions.dtype,
                                          device=positions.device) / half)
    args = positions[..., None].to(freqs.dtype) * freqs
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def masked_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
                     validity: torch.Tensor) -> torch.Tensor:
    """Softmax((QK^T + M')/sqrt(d)) V with additive key mask M' that is 0
    on valid tokens and a large negative constant on invalid ones.

    q, k, v: (B, L, d); validity: (B, L) bool. Every query position gets an
    output; only valid key tokens receive weight.
    """
    if not bool(validity.any(dim=-1).all()):
        raise ValidityError("masked attention requires >= 1 valid token")
    d = q.shape[-1]
    scores = torch.matmul(q, k.transpose(-2, -1))
    mprime = torch.where(validity[..., None, :],
                         torch.zeros((), dtype=q.dtype, device=q.device),
                         torch.full((), NEG_INF, dtype=q.dtype,
                                    device=q.device))
    weights = torch.softmax((scores + mprime) / math.sqrt(d), dim=-1)
    return torch.matmul(weights, v)


def dilate_validity(validity: torch.Tensor, step: int,
                    padding: torch.Tensor | None = None) -> torch.Tensor:
    """Activate non-padding tokens within temporal distance <= step of any
    valid token. Monotone: valid tokens stay valid.

    validity: (..., L) bool over frame positions.
    """
    if step <= 0:
        out = validity.clone()
    else:
        x = validity.to(torch.float32)
        squeeze = x.dim() == 1
        if squeeze:
            x = x[None]
        reach = F.max_pool1d(x[:, None, :], kernel_size=2 * step + 1,
                             stride=1, padding=step)[:, 0]
        out = reach > 0.5
        if squeeze:
            out = out[0]
        out = out | validity
    if padding is not None:
        out = out & ~padding
    return out


class DMABlock(nn.Module):
    """One dilated-mask-attention block: masked attention, concat fusion,
    per-token MLP. No layer normalization by design."""

    def __init__(self, d: int, ff_width: int):
        super().__init__()
        self.wq = nn.Linear(d, d)
        self.wk = nn.Linear(d, d)
        self.wv = nn.Linear(d, d)
        self.fuse = nn.Linear(2 * d, d)
        self.mlp = nn.Sequential(nn.Linear(d, ff_width), nn.GELU(),
                                 nn.Linear(ff_width, d))

    def forward(self, z: torch.Tensor, validity: torch.Tensor) -> torch.Tensor:
        att = masked_attention(self.wq(z), self.wk(z), self.wv(z), validity)
        fused = self.fuse(torch.cat([att, z], dim=-1))
        return self.mlp(fused)


class KeyframeEncoder(nn.Module):
    """DMA stack over keyframe tokens plus one always-valid prompt token.

    Frame tokens start from projected keyframe rows (a shared learned
    placeholder elsewhere); validity starts at the keyframe rows and is
    dilated after every block until all non-padding frames are valid.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.in_proj = nn.Linear(cfg.feature_dim, cfg.d)
        self.placeholder = nn.Parameter(torch.zeros(cfg.d))
        self.blocks = nn.ModuleList(
            DMABlock(cfg.d, cfg.ff_width) for _ in range(cfg.dma_blocks))

    def forward(self, x_kf: torch.Tensor, kf_rows: torch.Tensor,
                prompt_emb: torch.Tensor,
                padding: torch.Tensor | None = None,
                collect_validity: bool = False):
        """x_kf: (B, N, D) keyframe contents (zeros elsewhere); kf_rows:
        (B, N) bool; prompt_emb: (B, d). Returns (B, N, d) memory and,
        optionally, the per-block frame validity masks."""
        b, n, _ = x_kf.shape
        if padding is None:
            padding = torch.zeros(b, n, dtype=torch.bool, device=x_kf.device)
        pos = sinusoidal_embedding(
            torch.arange(n, device=x_kf.device, dtype=x_kf.dtype),
            self.cfg.d).to(x_kf.dtype)
        tok = torch.where(kf_rows[..., None], self.in_proj(x_kf),
                          self.placeholder.to(x_kf.dtype).expand(b, n, -1))
        tok = tok + pos

        z = torch.cat([tok, prompt_emb[:, None, :]], dim=1)
        frame_valid = kf_rows & ~padding
        prompt_valid = torch.ones(b, 1, dtype=torch.bool, device=x_kf.device)
        z0 = z
        history = []
        steps = self.cfg.dilation_steps(n)
        for block, step in zip(self.blocks, steps):
            validity = torch.cat([frame_valid, prompt_valid], dim=1)
            z = block(z, validity)
            frame_valid = dilate_validity(frame_valid, step, padding)
            if collect_validity:
                history.append(frame_valid.clone())
        z = z + z0  # global skip
        memory = z[:, :n, :]
        if collect_validity:
            return memory, history
        return memory


class DecoderLayer(nn.Module):
    """Self-attention over decoder tokens, cross-attention to encoder
    memory, feed-forward; post-norm residual blocks."""

    def __init__(self, d: int, heads: int, ff_width: int):
        super().__init__()
        self.self_attn = nn.MultiheadAttention(d, heads, batch_first=True)
        self.cross_attn = nn.MultiheadAttention(d, heads, batch_first=True)
        self.ff = nn.Sequential(nn.Linear(d, ff_width), nn.GELU(),
                                nn.Linear(ff_width, d))
        self.norm1 = nn.LayerNorm(d)
        self.norm2 = nn.LayerNorm(d)
        self.norm3 = nn.LayerNorm(d)

    def forward(self, x, memory, tgt_padding=None, mem_padding=None):
        sa, _ = self.self_attn(x, x, x, key_padding_mask=tgt_padding,
                               need_weights=False)
        x = self.norm1(x + sa)
        ca, _ = self.cross_attn(x, memory, memory,
                                key_padding_mask=mem_padding,
                                need_weights=False)
        x = self.norm2(x + ca)
        return self.norm3(x + self.ff(x))


class DenoiserModel(nn.Module):
    """Predicts the clean sequence from a noised one, conditioned on the
    diffusion step, a text prompt, and (optionally) clean keyframes."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d
        self.token_table = nn.Embedding(cfg.vocab_size, d, padding_idx=0)
        self.prompt_proj = nn.Linear(d, d)
        self.time_proj = nn.Sequential(nn.Linear(d, d), nn.SiLU(),
                                       nn.Linear(d, d))
        self.null_keyframe = nn.Parameter(torch.zeros(d))
        self.encoder = KeyframeEncoder(cfg)
        self.frame_in = nn.Linear(cfg.feature_dim, d)
        self.frame_out = nn.Linear(d, cfg.feature_dim)
        self.layers = nn.ModuleList(
            DecoderLayer(d, cfg.heads, cfg.ff_width)
            for _ in range(cfg.decoder_layers))

    def embed_prompt(self, tokens: torch.Tensor) -> torch.Tensor:
        """tokens: (B, L) int ids, 0 = padding. Mean-pool + linear."""
        if int(tokens.max()) >= self.cfg.vocab_size or int(tokens.min()) < 0:
            raise ValueError("prompt token id outside vocabulary")
        emb = self.token_table(tokens)
        keep = (tokens != 0).to(emb.dtype)[..., None]
        denom = keep.sum(dim=1).clamp(min=1.0)
        pooled = (emb * keep).sum(dim=1) / denom
        return self.prompt_proj(pooled)

    def embed_time(self, t: torch.Tensor) -> torch.Tensor:
        ref = self.frame_in.weight
        base = sinusoidal_embedding(t.to(ref.dtype), self.cfg.d)
        return self.time_proj(base.to(ref.dtype))

    def encode_keyframes(self, x_kf: torch.Tensor, kf_rows: torch.Tensor,
                         prompt_emb: torch.Tensor, dropout: torch.Tensor,
                         padding: torch.Tensor | None = None) -> torch.Tensor:
        """Memory for cross-attention; dropped samples get the learned null
        embedding broadcast over the frame axis (the empty condition)."""
        b, n, _ = x_kf.shape
        null = self.null_keyframe.to(x_kf.dtype).expand(b, n, -1)
        if bool(dropout.all()):
            return null
        # dropped samples still pass through the encoder for batching; give
        # them a dummy valid row so dilation is well-defined, then discard.
        rows = kf_rows.clone()
        rows[dropout, 0] = True
        encoded = self.encoder(x_kf, rows, prompt_emb, padding)
        return torch.where(dropout[:, None, None], null, encoded)

    def forward(self, x_t: torch.Tensor, t: torch.Tensor,
                tokens: torch.Tensor, x_kf: torch.Tensor,
                kf_rows: torch.Tensor, dropout: torch.Tensor,
                padding: torch.Tensor | None = None) -> torch.Tensor:
        """x_t: (B, N, D); t: (B,) int; tokens: (B, L); x_kf: (B, N, D);
        kf_rows, padding: (B, N) bool; dropout: (B,) bool. -> (B, N, D)."""
        b, n, _ = x_t.shape
        if padding is None:
            padding = torch.zeros(b, n, dtype=torch.bool, device=x_t.device)
        prompt_emb = self.embed_prompt(tokens)
        time_emb = self.embed_time(t)
        memory = self.encode_keyframes(x_kf, kf_rows, prompt_emb, dropout,
                                       padding)

        pos = sinusoidal_embedding(
            torch.arange(n, device=x_t.device, dtype=torch.float64),
            self.cfg.d).to(x_t.dtype)
        frames = self.frame_in(x_t) + pos
        x = torch.cat([time_emb[:, None, :], prompt_emb[:, None, :], frames],
                      dim=1)
        lead = torch.zeros(b, 2, dtype=torch.bool, device=x_t.device)
        tgt_padding = torch.cat([lead, padding], dim=1)
        for layer in self.layers:
            x = layer(x, memory, tgt_padding=tgt_padding, mem_padding=padding)
        return self.frame_out(x[:, 2:, :])
