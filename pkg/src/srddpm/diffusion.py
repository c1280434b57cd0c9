"""Forward corruption and reverse sampling for a fixed noise schedule.

Image batches are ``(B, C, H, W)`` tensors. Schedule constants are gathered
from the float64 arrays of :class:`~srddpm.schedule.NoiseSchedule` and cast to
the dtype of the batch being processed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np
import torch

from .posenc import DEFAULT_ENC_DIM, encode
from .schedule import NoiseSchedule

SamplerVariant = Literal["simplified", "posterior"]
SAMPLER_VARIANTS = ("simplified", "posterior")


def check_batch(x: torch.Tensor, name: str = "x") -> None:
    if x.ndim != 4 or min(x.shape) < 1:
        raise ValueError(f"{name} must be a non-empty (B, C, H, W) batch, got shape {tuple(x.shape)}")
    if not torch.isfinite(x).all():
        raise ValueError(f"{name} contains NaN or Inf")


def _same_shape(a: torch.Tensor, b: torch.Tensor, names=("x", "noise")) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {names[0]} {tuple(a.shape)} vs {names[1]} {tuple(b.shape)}")


def _coef(arr: np.ndarray, t, like: torch.Tensor) -> torch.Tensor:
    """``arr[t]`` broadcast against ``like``; ``t`` is a scalar or one index per sample."""
    t_np = np.asarray(t.cpu() if isinstance(t, torch.Tensor) else t, dtype=np.int64)
    vals = torch.as_tensor(arr[t_np], dtype=like.dtype, device=like.device)
    if vals.ndim == 0:
        return vals
    if vals.shape[0] != like.shape[0]:
        raise ValueError(f"got {vals.shape[0]} timesteps for a batch of {like.shape[0]}")
    return vals.reshape(-1, *([1] * (like.ndim - 1)))


def forward_step(x_t: torch.Tensor, t, s: NoiseSchedule, noise: torch.Tensor) -> torch.Tensor:
    """One Markov corruption step: ``sqrt(1 - beta_t) x_t + sqrt(beta_t) noise``."""
    _same_shape(x_t, noise)
    s.check_timestep(t)
    beta = _coef(s.beta, t, x_t)
    return torch.sqrt(1 - beta) * x_t + torch.sqrt(beta) * noise


def forward_jump(
    x0: torch.Tensor,
    t,
    s: NoiseSchedule,
    noise: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Draw ``x_t`` directly from ``x0``; returns ``(x_t, noise)``.

    ``t`` may be a single index or one index per batch element.
    """
    s.check_timestep(t)
    if noise is None:
        noise = torch.randn(x0.shape, generator=generator, dtype=x0.dtype, device=x0.device)
    _same_shape(x0, noise, ("x0", "noise"))
    ab = _coef(s.alpha_bar, t, x0)
    return torch.sqrt(ab) * x0 + torch.sqrt(1 - ab) * noise, noise


def reconstruct_x0(x_t: torch.Tensor, eps: torch.Tensor, t, s: NoiseSchedule) -> torch.Tensor:
    _same_shape(x_t, eps, ("x_t", "eps"))
    s.check_timestep(t)
    return _coef(s.x0_coeff1, t, x_t) * x_t - _coef(s.x0_coeff2, t, x_t) * eps


def posterior_mean_simplified(x_t: torch.Tensor, eps: torch.Tensor, t, s: NoiseSchedule) -> torch.Tensor:
    _same_shape(x_t, eps, ("x_t", "eps"))
    s.check_timestep(t)
    alpha = _coef(s.alpha, t, x_t)
    ab = _coef(s.alpha_bar, t, x_t)
    return (x_t - (1 - alpha) / torch.sqrt(1 - ab) * eps) / torch.sqrt(alpha)


def posterior_mean_via_x0(
    x_t: torch.Tensor, eps: torch.Tensor, t, s: NoiseSchedule, clamp_x0: bool = False
) -> torch.Tensor:
    x0 = reconstruct_x0(x_t, eps, t, s)
    if clamp_x0:
        x0 = x0.clamp(-1.0, 1.0)
    return _coef(s.posterior_mean_coeff1, t, x_t) * x0 + _coef(s.posterior_mean_coeff2, t, x_t) * x_t


def _check_final_noise(t, z: torch.Tensor) -> None:
    if np.any(np.asarray(t) == 0) and torch.any(z != 0):
        raise ValueError("the t = 0 reverse step is deterministic; z must be zero")


def reverse_step_simplified(x_t, t, s: NoiseSchedule, predicted_noise, z) -> torch.Tensor:
    # sqrt(beta_t) is the same quantity as sqrt(1 - alpha_t)
    _same_shape(x_t, z, ("x_t", "z"))
    _check_final_noise(t, z)
    mean = posterior_mean_simplified(x_t, predicted_noise, t, s)
    return mean + torch.sqrt(_coef(s.beta, t, x_t)) * z


def reverse_step_posterior(x_t, t, s: NoiseSchedule, predicted_noise, z, clamp_x0: bool = True) -> torch.Tensor:
    _same_shape(x_t, z, ("x_t", "z"))
    _check_final_noise(t, z)
    mean = posterior_mean_via_x0(x_t, predicted_noise, t, s, clamp_x0=clamp_x0)
    return mean + torch.exp(0.5 * _coef(s.posterior_log_variance_clipped, t, x_t)) * z


@dataclass
class TrajectoryRecord:
    """States kept during reverse sampling.

    ``images`` has shape ``(n_images, len(saved_at), C, H, W)``; ``saved_at``
    lists the timesteps in the order they were visited (descending).
    """

    images: torch.Tensor
    saved_at: list[int]

    @property
    def final(self) -> torch.Tensor:
        """Last recorded state of every image, ``(n_images, C, H, W)``."""
        return self.images[:, -1]


def call_predictor(predictor, x: torch.Tensor, t_enc: torch.Tensor, timesteps: torch.Tensor) -> torch.Tensor:
    """Invoke a noise predictor, handing the raw timesteps to those that want them."""
    if getattr(predictor, "wants_timesteps", False):
        return predictor(x, t_enc, timesteps=timesteps)
    return predictor(x, t_enc)


@torch.no_grad()
def sample(
    predictor,
    s: NoiseSchedule,
    n_images: int,
    n_channels: int = 1,
    image_size: int | tuple[int, int] | None = None,
    condition: torch.Tensor | None = None,
    save_at: Iterable[int] = (0,),
    sampler_variant: SamplerVariant = "simplified",
    seed: int = 0,
    enc_dim: int = DEFAULT_ENC_DIM,
    clamp_x0: bool = True,
    dtype: torch.dtype = torch.float32,
    device=None,
) -> TrajectoryRecord:
    """Run the reverse process from pure noise down to ``t = 0``.

    With a ``condition`` batch its channels are placed in front of the noisy
    state before every predictor call; spatial size is then taken from the
    condition. ``clamp_x0`` only affects the ``"posterior"`` variant.
    """
    if sampler_variant not in SAMPLER_VARIANTS:
        raise ValueError(f"unknown sampler variant {sampler_variant!r}")
    save = sorted({int(i) for i in save_at}, reverse=True)
    if not save:
        raise ValueError("save_at must not be empty")
    s.check_timestep(save)

    if condition is not None:
        check_batch(condition, "condition")
        if condition.shape[0] != n_images:
            raise ValueError(f"condition has {condition.shape[0]} images, expected n_images={n_images}")
        if image_size is not None and tuple(condition.shape[-2:]) != _hw(image_size):
            raise ValueError(
                f"condition spatial size {tuple(condition.shape[-2:])} != image size {_hw(image_size)}"
            )
        h, w = condition.shape[-2:]
        condition = condition.to(dtype=dtype, device=device)
    elif image_size is None:
        raise ValueError("image_size is required for unconditional sampling")
    else:
        h, w = _hw(image_size)

    expected = getattr(predictor, "in_channels", None)
    got = n_channels + (condition.shape[1] if condition is not None else 0)
    if expected is not None and expected != got:
        raise ValueError(
            f"predictor expects {expected} input channels but sampling supplies {got} "
            f"({n_channels} state + {got - n_channels} condition)"
        )

    was_training = getattr(predictor, "training", False)
    if was_training:
        predictor.eval()
    try:
        gen = torch.Generator(device="cpu").manual_seed(seed)
        x = torch.randn((n_images, n_channels, h, w), generator=gen, dtype=dtype).to(device)
        kept = []
        for i in reversed(range(s.noise_steps)):
            t = torch.full((n_images,), i, dtype=torch.long)
            t_enc = encode(t, enc_dim, dtype=dtype).to(device)
            inp = x if condition is None else torch.cat((condition, x), dim=1)
            eps = call_predictor(predictor, inp, t_enc, t)
            if eps.shape != x.shape:
                raise ValueError(f"predictor returned shape {tuple(eps.shape)}, expected {tuple(x.shape)}")
            if i > 0:
                z = torch.randn(x.shape, generator=gen, dtype=dtype).to(device)
            else:
                z = torch.zeros_like(x)
            if sampler_variant == "simplified":
                x = reverse_step_simplified(x, i, s, eps, z)
            else:
                x = reverse_step_posterior(x, i, s, eps, z, clamp_x0=clamp_x0)
            if i in save:
                kept.append(x)
    finally:
        if was_training:
            predictor.train()
    return TrajectoryRecord(images=torch.stack(kept, dim=1), saved_at=save)


def _hw(size) -> tuple[int, int]:
    if isinstance(size, int):
        return size, size
    h, w = size
    return int(h), int(w)
