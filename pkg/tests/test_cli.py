import csv

import numpy as np
import pytest
import tifffile
from PIL import Image

from srddpm.checkpoint import read_checkpoint
from srddpm.cli import main
from srddpm.schedule import ScheduleConfig, build_linear_schedule

CONFIG = """
[schedule]
noise_steps = 20
beta_end = 0.05

[train]
epochs = {epochs}
batch_size = 8

[unet]
encoder_channels = 4, 8
bottleneck_channels = 8
time_embedding_dim = 16

[synthetic]
n_pairs = 16
n_test = 3
image_size = 8

[run]
output_dir = out
save_samples = 2
"""


def write_cfg(d, epochs=2, extra=""):
    d.mkdir(parents=True, exist_ok=True)
    p = d / "run.ini"
    p.write_text(CONFIG.format(epochs=epochs) + extra)
    return p


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_train_outputs(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["train", "--config", str(cfg), "--quiet"]) == 0
    out = tmp_path / "out"
    assert sorted(p.name for p in (out / "checkpoints").iterdir()) == ["best.ckpt", "epoch_0001.ckpt", "epoch_0002.ckpt"]
    loss = rows(out / "loss.csv")
    assert loss[0] == ["epoch", "mean_loss"] and len(loss) == 3
    assert not (out / "timing.csv").exists()
    cfg.write_text(cfg.read_text() + "write_timing = true\n")
    assert main(["train", "--config", str(cfg), "--quiet"]) == 0
    assert [r[0] for r in rows(out / "timing.csv")] == ["epoch", "1", "2"]
    img = Image.open(out / "samples" / "epoch_0002.png")
    assert img.size == (3 * 8 + 2 * 2, 2 * 8 + 2)


def test_resume_equivalence(tmp_path):
    full = write_cfg(tmp_path / "full", epochs=3)
    main(["train", "--config", str(full), "--quiet"])
    part = write_cfg(tmp_path / "part", epochs=1)
    main(["train", "--config", str(part), "--quiet"])
    resumed = write_cfg(tmp_path / "part2", epochs=3)
    ck = tmp_path / "part" / "out" / "checkpoints" / "epoch_0001.ckpt"
    assert main(["train", "--config", str(resumed), "--resume", str(ck), "--quiet"]) == 0
    assert rows(tmp_path / "full" / "out" / "loss.csv") == rows(tmp_path / "part2" / "out" / "loss.csv")
    a = read_checkpoint(tmp_path / "full" / "out" / "checkpoints" / "epoch_0003.ckpt")
    b = read_checkpoint(tmp_path / "part2" / "out" / "checkpoints" / "epoch_0003.ckpt")
    for k in a.arrays:
        if k.startswith("param/"):
            assert np.array_equal(a.arrays[k], b.arrays[k])


def test_missing_dataset_leaves_nothing(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    text = CONFIG.format(epochs=1).split("[synthetic]")[0]
    cfg.write_text(text + "[data]\nroot = missing\n\n[run]\noutput_dir = out\n")
    assert main(["train", "--config", str(cfg)]) != 0
    assert "directory not found" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_eval_and_sample(tmp_path):
    cfg = write_cfg(tmp_path, epochs=1, extra="\n[metrics]\nssim_kernel = 3\nms_ssim_weights = 0.5, 0.5\n")
    # 8x8 images are below the default MS-SSIM minimum; a 2-level, 3-tap setup needs 6
    main(["train", "--config", str(cfg), "--quiet"])
    ck = str(tmp_path / "out" / "checkpoints" / "best.ckpt")
    out1, out2 = tmp_path / "e1", tmp_path / "e2"
    assert main(["eval", "--config", str(cfg), "--checkpoint", ck, "--out", str(out1)]) == 0
    assert main(["eval", "--config", str(cfg), "--checkpoint", ck, "--out", str(out2)]) == 0
    assert (out1 / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()
    assert rows(out1 / "metrics.csv")[1][-1] == "3"
    npz = np.load(out1 / "eval_outputs.npz")
    assert npz["generated"].shape == npz["target"].shape == (3, 1, 8, 8)

    assert main(["sample", "--config", str(cfg), "--checkpoint", ck, "--n-images", "2", "--save-at", "0", "--out", str(out1)]) == 0
    assert Image.open(out1 / "samples" / "sample_000.png").size == (8, 8)
    assert main(["sample", "--config", str(cfg), "--checkpoint", ck, "--n-images", "2", "--out", str(out2)]) == 0
    assert Image.open(out2 / "samples" / "sample_001.png").size == (10 * 8 + 9 * 2, 8)


def test_eval_rejects_small_images(tmp_path, capsys):
    cfg = write_cfg(tmp_path, epochs=1)
    main(["train", "--config", str(cfg), "--quiet"])
    ck = str(tmp_path / "out" / "checkpoints" / "best.ckpt")
    assert main(["eval", "--config", str(cfg), "--checkpoint", ck]) != 0
    assert "MS-SSIM" in capsys.readouterr().err


def test_checkpoint_mismatch_names_field(tmp_path, capsys):
    cfg = write_cfg(tmp_path, epochs=1)
    main(["train", "--config", str(cfg), "--quiet"])
    ck = str(tmp_path / "out" / "checkpoints" / "best.ckpt")
    other = write_cfg(tmp_path / "o", epochs=1)
    other.write_text(other.read_text().replace("time_embedding_dim = 16", "time_embedding_dim = 32"))
    assert main(["sample", "--config", str(other), "--checkpoint", ck]) != 0
    assert "time_embedding_dim" in capsys.readouterr().err


def test_forward_demo(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    raw = np.random.default_rng(0).integers(0, 256, (8, 8)).astype(np.uint8)
    tifffile.imwrite(tmp_path / "img.tif", raw)
    args = ["forward-demo", "--config", str(cfg), "--image", str(tmp_path / "img.tif")]
    assert main(args + ["--timesteps", "0", "--noise-off"]) == 0
    got = np.asarray(Image.open(tmp_path / "out" / "forward_demo.png"))
    s = build_linear_schedule(ScheduleConfig(20, 1e-4, 0.05))
    x0 = raw / 255.0 * 2 - 1
    want = np.rint((np.sqrt(s.alpha_bar[0]) * x0 * 0.5 + 0.5) * 255)
    assert np.abs(got.astype(int) - want.astype(int)).max() <= 1
    assert main(args + ["--timesteps", "0,5,19"]) == 0
    assert Image.open(tmp_path / "out" / "forward_demo.png").size == (3 * 8 + 2 * 2, 8)
    assert main(args + ["--timesteps", "0,20"]) != 0
    assert "timesteps" in capsys.readouterr().err


def test_bad_config_exit(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text("[nope]\n")
    assert main(["train", "--config", str(p)]) == 2
    assert "unknown section" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["train"])
