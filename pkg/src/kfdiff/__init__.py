"""Keyframe-collaborated text-driven motion diffusion on a synthetic
toy corpus: conditioned denoiser training, guided sampling, baselines,
and evaluation metrics."""

__version__ = "0.1.0"
