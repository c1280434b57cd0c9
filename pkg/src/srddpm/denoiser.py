"""Noise predictors: a small attention U-Net and a closed-form Gaussian oracle.

Any callable ``predictor(x, t_enc) -> eps`` works with the sampler and the
trainer. Predictors that set ``wants_timesteps = True`` additionally receive
the integer timesteps as a ``timesteps=`` keyword.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .schedule import NoiseSchedule


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 2
    out_channels: int = 1
    encoder_channels: tuple[int, ...] = (32, 64, 128)
    bottleneck_channels: tuple[int, ...] = (256, 256)
    attention_flags: tuple[bool, ...] | None = None
    time_embedding_dim: int = 256

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        object.__setattr__(self, "bottleneck_channels", tuple(int(c) for c in self.bottleneck_channels))
        flags = self.attention_flags
        if flags is None:
            flags = (False,) * len(self.encoder_channels)
        object.__setattr__(self, "attention_flags", tuple(bool(f) for f in flags))

        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("in_channels and out_channels must be positive")
        if not self.encoder_channels or not self.bottleneck_channels:
            raise ValueError("encoder_channels and bottleneck_channels must be non-empty")
        if min(self.encoder_channels + self.bottleneck_channels) < 1:
            raise ValueError("channel counts must be positive")
        if len(self.attention_flags) != len(self.encoder_channels):
            raise ValueError(
                f"attention_flags has {len(self.attention_flags)} entries, "
                f"expected one per encoder level ({len(self.encoder_channels)})"
            )
        if self.time_embedding_dim < 2 or self.time_embedding_dim % 2:
            raise ValueError("time_embedding_dim must be even and >= 2")

    @property
    def levels(self) -> int:
        return len(self.encoder_channels)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


class SelfAttention(nn.Module):
    """Single-head attention over flattened spatial positions, with a residual."""

    def __init__(self, channels: int):
        super().__init__()
        self.qkv = nn.Conv2d(channels, 3 * channels, 1)
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        b, c, h, w = x.shape
        q, k, v = self.qkv(x).reshape(b, 3, c, h * w).unbind(1)
        attn = torch.softmax(q.transpose(1, 2) @ k / math.sqrt(c), dim=-1)  # (b, hw, hw)
        out = (v @ attn.transpose(1, 2)).reshape(b, c, h, w)
        return x + self.proj(out)


class ConvBlock(nn.Module):
    """Residual pair of 3x3 convolutions with the time embedding added in between.

    conv -> norm -> act -> (+ dense(t_enc)) -> conv -> norm -> act, plus a
    shortcut from the block input, then optional self-attention.
    """

    def __init__(self, in_ch: int, out_ch: int, emb_dim: int, attention: bool = False):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm1 = nn.GroupNorm(_groups(out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(_groups(out_ch), out_ch)
        self.time = nn.Linear(emb_dim, out_ch)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()
        self.attn = SelfAttention(out_ch) if attention else None

    def forward(self, x, t_emb):
        h = F.silu(self.norm1(self.conv1(x)))
        h = h + self.time(t_emb)[:, :, None, None]
        h = F.silu(self.norm2(self.conv2(h)))
        h = h + self.skip(x)
        if self.attn is not None:
            h = self.attn(h)
        return h


def _groups(channels: int) -> int:
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


class AttentionUNet(nn.Module):
    """Encoder/decoder with skip concatenation and per-level time injection.

    Encoder level ``i`` runs at resolution ``H / 2**i``; the bottleneck stays
    at the coarsest encoder resolution, so inputs need ``H`` and ``W``
    divisible by ``2 ** (levels - 1)``.
    """

    def __init__(self, cfg: UNetConfig):
        super().__init__()
        self.cfg = cfg
        emb = cfg.time_embedding_dim
        enc = cfg.encoder_channels

        self.down = nn.ModuleList()
        prev = cfg.in_channels
        for ch, att in zip(enc, cfg.attention_flags):
            self.down.append(ConvBlock(prev, ch, emb, att))
            prev = ch

        self.mid = nn.ModuleList()
        for ch in cfg.bottleneck_channels:
            self.mid.append(ConvBlock(prev, ch, emb))
            prev = ch

        self.up = nn.ModuleList()
        for ch, att in zip(reversed(enc), reversed(cfg.attention_flags)):
            self.up.append(ConvBlock(prev + ch, ch, emb, att))
            prev = ch
        self.head = nn.Conv2d(prev, cfg.out_channels, 1)

    @property
    def in_channels(self) -> int:
        return self.cfg.in_channels

    def check_input(self, x: torch.Tensor, t_enc: torch.Tensor) -> None:
        if x.ndim != 4:
            raise ValueError(f"expected a (B, C, H, W) batch, got shape {tuple(x.shape)}")
        if x.shape[1] != self.cfg.in_channels:
            raise ValueError(f"U-Net built for {self.cfg.in_channels} input channels, got {x.shape[1]}")
        div = 2 ** (self.cfg.levels - 1)
        if x.shape[-2] % div or x.shape[-1] % div:
            raise ValueError(
                f"spatial size {tuple(x.shape[-2:])} must be divisible by {div} "
                f"for a {self.cfg.levels}-level U-Net"
            )
        if t_enc.shape != (x.shape[0], self.cfg.time_embedding_dim):
            raise ValueError(
                f"time encoding must be ({x.shape[0]}, {self.cfg.time_embedding_dim}), "
                f"got {tuple(t_enc.shape)}"
            )

    def forward(self, x, t_enc):
        self.check_input(x, t_enc)
        skips = []
        h = x
        for i, block in enumerate(self.down):
            if i > 0:
                h = F.max_pool2d(h, 2)
            h = block(h, t_enc)
            skips.append(h)
        for block in self.mid:
            h = block(h, t_enc)
        for i, block in enumerate(self.up):
            if i > 0:
                h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = block(torch.cat((skips.pop(), h), dim=1), t_enc)
        return self.head(h)


def build_unet(cfg: UNetConfig, seed: int = 0, dtype: torch.dtype = torch.float32) -> AttentionUNet:
    """Build a U-Net whose initial parameters depend only on ``(cfg, seed)``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = AttentionUNet(cfg)
    return net.to(dtype)


@dataclass
class GaussianOracleParams:
    mean: float
    std: float
    schedule: NoiseSchedule = field(repr=False)

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError(f"std must be positive, got {self.std}")


class AnalyticGaussianPredictor:
    """Bayes-optimal noise estimate when every pixel of ``x0`` is N(mean, std**2).

    ``E[eps | x_t] = sqrt(1 - ab) * (x_t - sqrt(ab) * mean) / (ab * std**2 + 1 - ab)``
    """

    wants_timesteps = True
    in_channels = None  # accepts any channel count

    def __init__(self, params: GaussianOracleParams):
        self.params = params

    def __call__(self, x: torch.Tensor, t_enc: torch.Tensor | None = None, *, timesteps) -> torch.Tensor:
        p = self.params
        t = torch.as_tensor(timesteps).reshape(-1).cpu().numpy()
        if t.shape[0] != x.shape[0]:
            raise ValueError(f"got {t.shape[0]} timesteps for a batch of {x.shape[0]}")
        p.schedule.check_timestep(t)
        ab = torch.as_tensor(p.schedule.alpha_bar[t], dtype=torch.float64).reshape(-1, 1, 1, 1)
        xd = x.to(torch.float64)
        eps = torch.sqrt(1 - ab) * (xd - torch.sqrt(ab) * p.mean) / (ab * p.std**2 + 1 - ab)
        return eps.to(x.dtype)


def analytic_gaussian_predictor(p: GaussianOracleParams) -> AnalyticGaussianPredictor:
    return AnalyticGaussianPredictor(p)


def predict(predictor, x: torch.Tensor, t_enc: torch.Tensor, timesteps=None) -> torch.Tensor:
    """Noise estimate for ``x``; rejects outputs that change the spatial size or are non-finite."""
    if getattr(predictor, "wants_timesteps", False):
        if timesteps is None:
            raise ValueError("this predictor needs the integer timesteps")
        out = predictor(x, t_enc, timesteps=timesteps)
    else:
        out = predictor(x, t_enc)
    if out.shape[0] != x.shape[0] or out.shape[-2:] != x.shape[-2:]:
        raise ValueError(f"predictor output {tuple(out.shape)} does not match input {tuple(x.shape)}")
    if not torch.isfinite(out).all():
        raise FloatingPointError("predictor produced non-finite values")
    return out
