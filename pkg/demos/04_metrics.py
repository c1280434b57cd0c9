# The evaluation metrics on a few hand-made cases.

import torch

from srddpm import MetricsConfig, SyntheticSpec, generate_synthetic, mae, ms_ssim, nrmse, psnr, ssim

g = torch.Generator().manual_seed(0)
target = generate_synthetic(SyntheticSpec(n_pairs=1, image_size=64, blobs=6, seed=1)).high

cases = {
    "identical": target.clone(),
    "offset +0.2": target + 0.2,
    "mild noise": target + 0.05 * torch.randn(target.shape, generator=g),
    "heavy noise": target + 0.5 * torch.randn(target.shape, generator=g),
    "inverted": -target,
}

print(f"{'case':12s} {'SSIM':>7s} {'MS-SSIM':>8s} {'PSNR':>7s} {'MAE':>6s} {'NRMSE':>6s}")
for name, img in cases.items():
    print(f"{name:12s} {ssim(img, target):7.3f} {ms_ssim(img, target):8.3f} {psnr(img, target):7.2f}"
          f" {mae(img, target):6.3f} {nrmse(img, target):6.3f}")

# SSIM works on the [-1, 1] scale, so its luminance term is sensitive to
# offsets wherever the local mean is near 0 (mid-grey). The dark background of
# the blob image sits at -1, away from that region.

# MS-SSIM needs enough resolution for every pyramid level
cfg = MetricsConfig()
print("smallest image MS-SSIM accepts:", cfg.ms_ssim_min_size)
try:
    ms_ssim(target[..., :27, :27], target[..., :27, :27])
except ValueError as exc:
    print("27x27 ->", exc)
