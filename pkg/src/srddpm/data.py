"""Paired low/high resolution image datasets.

Two sources are supported: BioSR-style TIFF directories paired by shared
filename, and a synthetic generator of Gaussian-blob images whose low
resolution counterpart is a blurred copy.

Directory layout of the microtubule release::

    <root>/training_wf/*.tif         low resolution, training
    <root>/training_gt/*.tif         high resolution, training
    <root>/test_wf/level_NN/*.tif    low resolution test inputs per noise level
    <root>/test_gt/*.tif             high resolution test targets
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tifffile
import torch
from scipy.ndimage import gaussian_filter

TIFF_SUFFIXES = (".tif", ".tiff")


class DatasetError(ValueError):
    pass


def normalize(raw: np.ndarray) -> np.ndarray:
    """Integer (or unit-range float) pixels to ``[-1, 1]``: ``(raw / peak - 0.5) / 0.5``."""
    peak = peak_value(raw.dtype)
    return ((raw.astype(np.float64) / peak - 0.5) / 0.5).astype(np.float32)


def denormalize(x, dtype=np.uint8) -> np.ndarray:
    """Inverse of :func:`normalize`, clamping to ``[-1, 1]`` and rounding."""
    x = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    peak = peak_value(np.dtype(dtype))
    return np.rint((x * 0.5 + 0.5) * peak).astype(dtype)


def peak_value(dtype) -> float:
    dtype = np.dtype(dtype)
    if dtype.kind == "u":
        return float(2 ** (8 * dtype.itemsize) - 1)
    if dtype.kind == "f":
        return 1.0
    raise DatasetError(f"unsupported pixel type {dtype}; expected unsigned 8/16-bit or float")


def _as_chw(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img[None]
    if img.ndim == 3 and img.shape[-1] <= 4:
        return np.moveaxis(img, -1, 0)
    raise DatasetError(f"expected a single-plane image, got array of shape {img.shape}")


@dataclass(frozen=True)
class DatasetManifest:
    low_res_dir: Path
    high_res_dir: Path
    filenames: tuple[str, ...]
    image_size: tuple[int, int]
    channels: int

    def __len__(self) -> int:
        return len(self.filenames)


def _tiff_names(d: Path) -> set[str]:
    try:
        return {n for n in os.listdir(d) if n.lower().endswith(TIFF_SUFFIXES)}
    except OSError as exc:
        raise DatasetError(f"cannot read directory {d}: {exc}") from exc


def _probe(path: Path) -> tuple[tuple[int, ...], np.dtype]:
    try:
        with tifffile.TiffFile(path) as tf:
            page = tf.pages[0]
            return tuple(page.shape), np.dtype(page.dtype)
    except Exception as exc:
        raise DatasetError(f"cannot decode {path}: {exc}") from exc


def scan(low_res_dir, high_res_dir, verify: bool = True) -> DatasetManifest:
    """Pair TIFF files present in both directories, in byte-wise name order.

    With ``verify`` every file header is read to confirm that all images share
    one shape.
    """
    low, high = Path(low_res_dir), Path(high_res_dir)
    names = sorted(_tiff_names(low) & _tiff_names(high), key=lambda n: n.encode())
    if not names:
        raise DatasetError(f"no TIFF filenames shared between {low} and {high}")

    ref_shape, _ = _probe(low / names[0])
    check = names if verify else names[:1]
    for n in check:
        for d in (low, high):
            shape, dtype = _probe(d / n)
            peak_value(dtype)
            if shape != ref_shape:
                raise DatasetError(f"{d / n} has shape {shape}, expected {ref_shape}")
    chw = _as_chw(np.empty(ref_shape, dtype=np.uint8))
    return DatasetManifest(low, high, tuple(names), (chw.shape[1], chw.shape[2]), chw.shape[0])


def read_image(path) -> torch.Tensor:
    """Decode a TIFF into a normalised ``(C, H, W)`` float32 tensor."""
    try:
        raw = tifffile.imread(path)
    except Exception as exc:
        raise DatasetError(f"cannot decode {path}: {exc}") from exc
    return torch.from_numpy(_as_chw(normalize(raw)).copy())


def load_pair(m: DatasetManifest, index: int) -> tuple[torch.Tensor, torch.Tensor]:
    """``(low, high)`` as ``(1, C, H, W)`` batches of one image."""
    if not 0 <= index < len(m):
        raise IndexError(f"index {index} out of range for {len(m)} pairs")
    name = m.filenames[index]
    return read_image(m.low_res_dir / name)[None], read_image(m.high_res_dir / name)[None]


class PairedDataset:
    """Indexable pairs; item ``i`` is ``(low, high)`` with shape ``(C, H, W)`` each."""

    def __len__(self) -> int:
        raise NotImplementedError

    def __getitem__(self, i):
        raise NotImplementedError

    def get_batch(self, indices) -> tuple[torch.Tensor, torch.Tensor]:
        items = [self[int(i)] for i in indices]
        return torch.stack([a for a, _ in items]), torch.stack([b for _, b in items])

    def batches(self, batch_size: int):
        """Consecutive ``(low, high)`` batches in index order; the last may be short."""
        for start in range(0, len(self), batch_size):
            yield self.get_batch(range(start, min(start + batch_size, len(self))))

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self[0][1].shape)


class TiffPairDataset(PairedDataset):
    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest

    def __len__(self):
        return len(self.manifest)

    def __getitem__(self, i):
        low, high = load_pair(self.manifest, i)
        return low[0], high[0]


class TensorPairDataset(PairedDataset):
    def __init__(self, low: torch.Tensor, high: torch.Tensor):
        if low.shape[0] != high.shape[0] or low.shape[-2:] != high.shape[-2:]:
            raise DatasetError(f"unpaired tensors: {tuple(low.shape)} vs {tuple(high.shape)}")
        self.low, self.high = low, high

    def __len__(self):
        return self.low.shape[0]

    def __getitem__(self, i):
        return self.low[i], self.high[i]

    def get_batch(self, indices):
        idx = torch.as_tensor(list(indices), dtype=torch.long)
        return self.low[idx], self.high[idx]

    def split(self, n_first: int) -> tuple["TensorPairDataset", "TensorPairDataset"]:
        return (
            TensorPairDataset(self.low[:n_first], self.high[:n_first]),
            TensorPairDataset(self.low[n_first:], self.high[n_first:]),
        )


@dataclass(frozen=True)
class SyntheticSpec:
    n_pairs: int = 256
    image_size: int = 16
    blobs: int = 3
    blur_radius: float = 1.5
    seed: int = 0
    blob_sigma: tuple[float, float] = (0.6, 1.2)

    def __post_init__(self):
        if self.n_pairs < 1 or self.image_size < 1 or self.blobs < 1:
            raise ValueError("n_pairs, image_size and blobs must be positive")
        if self.blur_radius < 0:
            raise ValueError("blur_radius must be >= 0")


def generate_synthetic(spec: SyntheticSpec) -> TensorPairDataset:
    """Blob images on a dark background and their blurred counterparts, in ``[-1, 1]``.

    Each high resolution image is a sum of isotropic Gaussian spots scaled so
    its brightest pixel is 1. The low resolution image is the same unit-range
    image passed through a Gaussian blur of standard deviation ``blur_radius``
    pixels (none when 0).
    """
    rng = np.random.default_rng(spec.seed)
    n, size = spec.n_pairs, spec.image_size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    high = np.zeros((n, size, size))
    for i in range(n):
        centers = rng.uniform(0, size - 1, size=(spec.blobs, 2))
        sigmas = rng.uniform(*spec.blob_sigma, size=spec.blobs)
        amps = rng.uniform(0.5, 1.0, size=spec.blobs)
        for (cy, cx), sg, a in zip(centers, sigmas, amps):
            high[i] += a * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sg**2))
        high[i] /= high[i].max()
    if spec.blur_radius > 0:
        low = gaussian_filter(high, sigma=(0, spec.blur_radius, spec.blur_radius), mode="reflect")
    else:
        low = high.copy()
    to_t = lambda a: torch.from_numpy((2.0 * a - 1.0).astype(np.float32))[:, None]
    return TensorPairDataset(to_t(low), to_t(high))
