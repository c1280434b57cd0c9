"""Image quality metrics: SSIM, MS-SSIM, PSNR, MAE and NRMSE.

All functions take ``(B, C, H, W)`` tensors with pixel values on the
``[-1, 1]`` scale (``data_range = 2``) and return Python floats averaged over
the batch.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Iterable

import torch
import torch.nn.functional as F

SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


@dataclass(frozen=True)
class MetricsConfig:
    data_range: float = 2.0
    ssim_kernel: int = 7
    ms_ssim_weights: tuple[float, ...] = (0.0448, 0.2856, 0.3001)

    def __post_init__(self):
        object.__setattr__(self, "ms_ssim_weights", tuple(float(w) for w in self.ms_ssim_weights))
        if not self.data_range > 0:
            raise ValueError("data_range must be positive")
        if self.ssim_kernel < 3 or self.ssim_kernel % 2 == 0:
            raise ValueError(f"ssim_kernel must be odd and >= 3, got {self.ssim_kernel}")
        if not self.ms_ssim_weights or min(self.ms_ssim_weights) <= 0:
            raise ValueError("ms_ssim_weights must be non-empty and positive")

    @property
    def ms_ssim_min_size(self) -> int:
        return self.ssim_kernel * 2 ** (len(self.ms_ssim_weights) - 1)


@dataclass
class MetricsReport:
    ssim: float
    ms_ssim: float
    psnr: float
    mae: float
    nrmse: float
    n_images: int = 0

    @classmethod
    def csv_header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def csv_row(self) -> list[str]:
        return [_fmt(v) for v in asdict(self).values()]


def _fmt(v) -> str:
    if isinstance(v, int):
        return str(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def _check_pair(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.ndim != 4:
        raise ValueError(f"expected (B, C, H, W) batches, got shape {tuple(a.shape)}")


def gaussian_window(size: int, sigma: float = SSIM_SIGMA, dtype=torch.float64) -> torch.Tensor:
    """Normalised 2-D Gaussian window of shape ``(size, size)``."""
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(x**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g).to(dtype)


def _ssim_maps(a, b, kernel: int, data_range: float):
    """Per-position SSIM and contrast-structure maps over valid windows."""
    bc = a.shape[0] * a.shape[1]
    a = a.reshape(bc, 1, *a.shape[-2:]).to(torch.float64)
    b = b.reshape(bc, 1, *b.shape[-2:]).to(torch.float64)
    w = gaussian_window(kernel)[None, None]
    mu_a, mu_b = F.conv2d(a, w), F.conv2d(b, w)
    var_a = F.conv2d(a * a, w) - mu_a**2
    var_b = F.conv2d(b * b, w) - mu_b**2
    cov = F.conv2d(a * b, w) - mu_a * mu_b
    c1, c2 = (K1 * data_range) ** 2, (K2 * data_range) ** 2
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    lum = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    return lum * cs, cs


def ssim(a: torch.Tensor, b: torch.Tensor, cfg: MetricsConfig = MetricsConfig()) -> float:
    """Mean SSIM with a Gaussian window (sigma 1.5) over all fully covered positions."""
    _check_pair(a, b)
    k = cfg.ssim_kernel
    if min(a.shape[-2:]) < k:
        raise ValueError(f"images of size {tuple(a.shape[-2:])} are smaller than the {k}x{k} SSIM window")
    ssim_map, _ = _ssim_maps(a, b, k, cfg.data_range)
    return float(ssim_map.mean())


def ms_ssim(a: torch.Tensor, b: torch.Tensor, cfg: MetricsConfig = MetricsConfig()) -> float:
    """Multi-scale SSIM with one level per weight and 2x average pooling between levels.

    Coarse levels contribute their contrast-structure term, the last level the
    full SSIM; negative per-level values are clipped to zero before weighting.
    """
    _check_pair(a, b)
    min_size = cfg.ms_ssim_min_size
    if min(a.shape[-2:]) < min_size:
        raise ValueError(
            f"MS-SSIM with {len(cfg.ms_ssim_weights)} levels and kernel {cfg.ssim_kernel} "
            f"needs images of at least {min_size}x{min_size}, got {tuple(a.shape[-2:])}"
        )
    n = a.shape[0] * a.shape[1]
    a = a.reshape(n, 1, *a.shape[-2:]).to(torch.float64)
    b = b.reshape(n, 1, *b.shape[-2:]).to(torch.float64)
    weights = torch.tensor(cfg.ms_ssim_weights, dtype=torch.float64)
    levels = []
    for j in range(len(weights)):
        if j:
            a, b = F.avg_pool2d(a, 2), F.avg_pool2d(b, 2)
        ssim_map, cs_map = _ssim_maps(a, b, cfg.ssim_kernel, cfg.data_range)
        m = ssim_map if j == len(weights) - 1 else cs_map
        levels.append(m.flatten(1).mean(1))
    vals = torch.relu(torch.stack(levels, dim=1))  # (n, levels)
    return float(torch.prod(vals ** weights, dim=1).mean())


def psnr(a: torch.Tensor, b: torch.Tensor, cfg: MetricsConfig = MetricsConfig()) -> float:
    """``10 log10(data_range**2 / MSE)`` in dB; ``inf`` for identical inputs."""
    _check_pair(a, b)
    mse = float(torch.mean((a.double() - b.double()) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(cfg.data_range**2 / mse)


def mae(a: torch.Tensor, b: torch.Tensor) -> float:
    _check_pair(a, b)
    return float(torch.mean(torch.abs(a.double() - b.double())))


def nrmse(a: torch.Tensor, b: torch.Tensor) -> float:
    """RMSE normalised by the value range of the target ``b`` (not symmetric)."""
    _check_pair(a, b)
    span = float(b.max() - b.min())
    if span == 0.0:
        raise ValueError("nrmse is undefined for a constant target (zero range)")
    return math.sqrt(float(torch.mean((a.double() - b.double()) ** 2))) / span


def batch_metrics(generated: torch.Tensor, target: torch.Tensor, cfg: MetricsConfig = MetricsConfig()) -> dict:
    return {
        "ssim": ssim(generated, target, cfg),
        "ms_ssim": ms_ssim(generated, target, cfg),
        "psnr": psnr(generated, target, cfg),
        "mae": mae(generated, target),
        "nrmse": nrmse(generated, target),
    }


def average_batches(per_batch: list[dict], n_images: int) -> MetricsReport:
    """Plain mean of per-batch values: every batch counts once regardless of its size."""
    if not per_batch:
        raise ValueError("no batches to average")
    keys = ("ssim", "ms_ssim", "psnr", "mae", "nrmse")
    return MetricsReport(
        **{k: sum(m[k] for m in per_batch) / len(per_batch) for k in keys}, n_images=n_images
    )


def evaluate(
    predictor,
    s,
    test_batches: Iterable[tuple[torch.Tensor, torch.Tensor]],
    cfg: MetricsConfig = MetricsConfig(),
    sampler_variant: str = "simplified",
    seed: int = 0,
    enc_dim: int = 256,
    conditional: bool | None = None,
    dtype: torch.dtype = torch.float32,
    return_outputs: bool = False,
):
    """Generate one output per test input and score it against the target.

    Batch ``i`` is sampled with seed ``seed + i``. Returns a
    :class:`MetricsReport`, or ``(report, outputs)`` with ``return_outputs``.
    """
    from .diffusion import sample

    if conditional is None:
        in_ch = getattr(predictor, "in_channels", None)
        conditional = in_ch is not None and in_ch > 1
    per_batch, outputs, n = [], [], 0
    for i, (low, high) in enumerate(test_batches):
        try:
            rec = sample(
                predictor,
                s,
                n_images=high.shape[0],
                n_channels=high.shape[1],
                image_size=tuple(high.shape[-2:]),
                condition=low if conditional else None,
                save_at=(0,),
                sampler_variant=sampler_variant,
                seed=seed + i,
                enc_dim=enc_dim,
                dtype=dtype,
            )
            gen = rec.final
            per_batch.append(batch_metrics(gen, high.to(gen.dtype), cfg))
        except Exception as exc:
            raise RuntimeError(f"evaluation failed on test batch {i}: {exc}") from exc
        n += high.shape[0]
        if return_outputs:
            outputs.append(gen)
    if not per_batch:
        raise ValueError("test set is empty")
    report = average_batches(per_batch, n)
    return (report, outputs) if return_outputs else report
