"""Sinusoidal timestep encoding."""

from __future__ import annotations

import torch

DEFAULT_ENC_DIM = 256


def encode(t, enc_dim: int = DEFAULT_ENC_DIM, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Map timesteps to ``[sin(t * f_k) || cos(t * f_k)]`` rows.

    ``f_k = 10000 ** (-2k / enc_dim)`` for ``k = 0 .. enc_dim/2 - 1``. Accepts a
    scalar, a 1-D batch, or a ``(B, 1)`` column and returns ``(B, enc_dim)``.
    The arguments are formed at float64 and narrowed to ``dtype`` at the end.
    """
    if enc_dim < 2 or enc_dim % 2:
        raise ValueError(f"enc_dim must be an even integer >= 2, got {enc_dim}")
    t = torch.as_tensor(t).reshape(-1, 1).to(torch.float64)
    if (t < 0).any():
        raise ValueError("timesteps must be non-negative")
    k2 = torch.arange(0, enc_dim, 2, dtype=torch.float64)
    inv_freq = 1.0 / (10000.0 ** (k2 / enc_dim))
    arg = t * inv_freq
    return torch.cat([torch.sin(arg), torch.cos(arg)], dim=-1).to(dtype)
