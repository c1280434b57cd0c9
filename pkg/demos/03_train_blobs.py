# Train a small conditional model on synthetic blob pairs and score it.
#
# The low resolution input is a blurred copy of the target. Takes about a
# minute on one CPU core.

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from srddpm import (
    SyntheticSpec,
    TrainConfig,
    UNetConfig,
    build_linear_schedule,
    build_unet,
    generate_synthetic,
    sample,
    ssim,
    train,
)
from srddpm.data import denormalize
from srddpm.metrics import mae, psnr

torch.set_num_threads(1)
out_dir = Path("demo_output")
out_dir.mkdir(exist_ok=True)

data = generate_synthetic(SyntheticSpec(n_pairs=288, image_size=16, seed=0))
train_set, test_set = data.split(256)
print("train pairs:", len(train_set), " test pairs:", len(test_set))

cfg = TrainConfig(epochs=20, batch_size=16, learning_rate=1e-4, noise_steps=200,
                  beta_start=1e-4, beta_end=0.02, seed=0)
s = build_linear_schedule(cfg.schedule_config())
net = build_unet(UNetConfig(in_channels=2, out_channels=1), seed=0)
print("parameters:", sum(p.numel() for p in net.parameters()))

net, history = train(cfg, net, train_set, s)
for epoch, loss in enumerate(history.mean_loss, 1):
    if epoch in (1, 2, 5, 10, 20):
        print(f"epoch {epoch:2d}  loss {loss:.4f}")

generated = sample(net, s, len(test_set), 1, condition=test_set.low, sampler_variant="posterior", seed=0).final

# Generated images should be closer to the targets than the blurred inputs are
for name, img in [("blurred input", test_set.low), ("generated", generated)]:
    print(f"{name:14s} SSIM {ssim(img, test_set.high):.3f}  MAE {mae(img, test_set.high):.3f}"
          f"  PSNR {psnr(img, test_set.high):.2f} dB")

# input | generated | target, one row per test image
rows = [np.concatenate([denormalize(t[i, 0].numpy()) for t in (test_set.low, generated, test_set.high)], 1)
        for i in range(8)]
Image.fromarray(np.concatenate(rows, 0)).resize((48 * 6, 16 * 8 * 6), Image.NEAREST).save(out_dir / "blobs.png")
print("wrote", out_dir / "blobs.png")
