"""Command-line front end: ``srddpm {train,eval,sample,forward-demo}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import checkpoint as ck
from .config import ConfigError, RunConfig, load_config, validate_for_metrics
from .data import DatasetError, denormalize, read_image
from .denoiser import build_unet
from .diffusion import forward_jump, sample
from .metrics import MetricsReport, evaluate
from .schedule import build_linear_schedule
from .trainer import TrainHistory, TrainState, TrainingError, make_optimizer, train

GAP = 2


def _to_u8(x: torch.Tensor) -> np.ndarray:
    """One ``(C, H, W)`` image in [-1, 1] to an 8-bit ``(H, W)`` array (first channel)."""
    return denormalize(x[0].detach().cpu().numpy(), np.uint8)


def _grid(rows: list[list[torch.Tensor]]) -> np.ndarray:
    h, w = rows[0][0].shape[-2:]
    n_cols = max(len(r) for r in rows)
    out = np.full((len(rows) * (h + GAP) - GAP, n_cols * (w + GAP) - GAP), 255, np.uint8)
    for i, row in enumerate(rows):
        for j, img in enumerate(row):
            out[i * (h + GAP) : i * (h + GAP) + h, j * (w + GAP) : j * (w + GAP) + w] = _to_u8(img)
    return out


def save_png(path: Path, arr: np.ndarray) -> None:
    Image.fromarray(arr, mode="L").save(path, format="PNG", optimize=False)


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def _conditional(cfg: RunConfig) -> bool:
    return cfg.unet.in_channels > cfg.unet.out_channels


def _load_model(cfg: RunConfig, path) -> torch.nn.Module:
    ckpt = ck.read_checkpoint(path)
    for name, want in cfg.unet.to_dict().items():
        got = ckpt.unet_config.to_dict()[name]
        if got != want:
            raise ConfigError(f"checkpoint/config mismatch in unet.{name}: checkpoint has {got}, config has {want}")
    model = ckpt.build_model()
    model.eval()
    return model


def _snapshot(cfg: RunConfig, state: TrainState) -> ck.Checkpoint:
    arrays = ck.model_arrays(state.model)
    opt_arrays, opt_meta = ck.optimizer_arrays(state.optimizer)
    arrays.update(opt_arrays)
    arrays["rng/generator"] = state.generator.get_state().numpy()
    meta = {
        "epoch": state.epoch,
        "best_loss": state.best_loss,
        "mean_loss": state.history.mean_loss,
        "seconds": state.history.seconds,
        "optimizer": opt_meta,
        "schedule": {
            "noise_steps": cfg.schedule.noise_steps,
            "beta_start": cfg.schedule.beta_start,
            "beta_end": cfg.schedule.beta_end,
        },
        "seed": cfg.run.seed,
    }
    return ck.Checkpoint(cfg.unet, arrays, meta)


def _resume_state(cfg: RunConfig, path, model) -> TrainState:
    ckpt = ck.read_checkpoint(path)
    if ckpt.unet_config != cfg.unet:
        raise ConfigError("checkpoint/config mismatch in unet settings; cannot resume")
    model.load_state_dict(ckpt.params())
    opt = make_optimizer(model, cfg.train)
    ck.restore_optimizer(opt, ckpt)
    gen = torch.Generator()
    gen.set_state(torch.from_numpy(ckpt.arrays["rng/generator"].copy()))
    meta = ckpt.meta
    history = TrainHistory(list(meta["mean_loss"]), list(meta["seconds"]), [None] * len(meta["mean_loss"]))
    return TrainState(meta["epoch"], model, opt, gen, history, best_loss=meta["best_loss"])


def cmd_train(args, cfg: RunConfig) -> int:
    train_data, test_data = cfg.data.load()
    image_hw = tuple(train_data[0][1].shape[-2:])
    if cfg.run.eval_every_epoch:
        validate_for_metrics(cfg, image_hw)

    s = build_linear_schedule(cfg.schedule)
    model = build_unet(cfg.unet, seed=cfg.run.seed)
    resume = _resume_state(cfg, args.resume, model) if args.resume else None

    out = cfg.output_dir
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    if cfg.run.save_samples:
        (out / "samples").mkdir(exist_ok=True)
    conditional = _conditional(cfg)

    def on_epoch_end(state: TrainState) -> None:
        snap = _snapshot(cfg, state)
        ck.write_checkpoint(ckpt_dir / f"epoch_{state.epoch:04d}.ckpt", snap)
        if state.improved:
            ck.write_checkpoint(ckpt_dir / "best.ckpt", snap)
        _write_csv(out / "loss.csv", state.history.rows(include_seconds=False))
        if cfg.run.write_timing:
            # wall-clock values; kept apart so loss.csv stays reproducible
            _write_csv(out / "timing.csv", [["epoch", "seconds"]] + [
                [str(i + 1), f"{sec:.3f}"] for i, sec in enumerate(state.history.seconds)
            ])
        if cfg.run.save_samples:
            n = min(cfg.run.save_samples, len(test_data))
            low, high = test_data.get_batch(range(n))
            rec = sample(
                state.model, s, n, high.shape[1],
                image_size=image_hw,
                condition=low if conditional else None,
                sampler_variant=cfg.run.sampler_variant,
                seed=cfg.run.seed,
                enc_dim=cfg.unet.time_embedding_dim,
            )
            rows = [[low[i], rec.final[i], high[i]] for i in range(n)]
            save_png(out / "samples" / f"epoch_{state.epoch:04d}.png", _grid(rows))

    train(
        cfg.train,
        model,
        train_data,
        s,
        eval_data=test_data if cfg.run.eval_every_epoch else None,
        metrics_cfg=cfg.metrics,
        sampler_variant=cfg.run.sampler_variant,
        resume=resume,
        on_epoch_end=on_epoch_end,
    )
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    _, test_data = cfg.data.load()
    validate_for_metrics(cfg, tuple(test_data[0][1].shape[-2:]))
    model = _load_model(cfg, args.checkpoint)
    s = build_linear_schedule(cfg.schedule)
    batches = list(test_data.batches(cfg.train.batch_size))
    report, outputs = evaluate(
        model,
        s,
        batches,
        cfg.metrics,
        sampler_variant=cfg.run.sampler_variant,
        seed=cfg.run.seed,
        enc_dim=cfg.unet.time_embedding_dim,
        conditional=_conditional(cfg),
        return_outputs=True,
    )
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "metrics.csv", [MetricsReport.csv_header(), report.csv_row()])
    np.savez(
        out / "eval_outputs.npz",
        generated=torch.cat(outputs).numpy(),
        target=torch.cat([h for _, h in batches]).numpy(),
        batch_sizes=np.array([h.shape[0] for _, h in batches]),
    )
    for k, v in zip(MetricsReport.csv_header(), report.csv_row()):
        print(f"{k}: {v}")
    return 0


def _parse_steps(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_sample(args, cfg: RunConfig) -> int:
    s = build_linear_schedule(cfg.schedule)
    if args.save_at is not None:
        save_at = args.save_at
    else:
        save_at = np.linspace(s.noise_steps - 1, 0, args.frames).round().astype(int).tolist()
    s.check_timestep(save_at)
    model = _load_model(cfg, args.checkpoint)
    _, test_data = cfg.data.load()
    n = args.n_images
    low, high = test_data.get_batch(range(min(n, len(test_data))))
    if _conditional(cfg) and low.shape[0] < n:
        raise ConfigError(f"only {low.shape[0]} test inputs available for {n} conditional samples")
    rec = sample(
        model,
        s,
        n,
        cfg.unet.out_channels,
        image_size=tuple(high.shape[-2:]),
        condition=low if _conditional(cfg) else None,
        save_at=save_at,
        sampler_variant=cfg.run.sampler_variant,
        seed=cfg.run.seed,
        enc_dim=cfg.unet.time_embedding_dim,
    )
    out = cfg.output_dir / "samples"
    out.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        save_png(out / f"sample_{i:03d}.png", _grid([list(rec.images[i])]))
    _write_csv(out / "saved_at.csv", [["frame", "timestep"]] + [[str(j), str(t)] for j, t in enumerate(rec.saved_at)])
    return 0


def cmd_forward_demo(args, cfg: RunConfig) -> int:
    s = build_linear_schedule(cfg.schedule)
    steps = args.timesteps
    if any(t < 0 or t >= s.noise_steps for t in steps):
        raise ConfigError(f"timesteps must lie in [0, {s.noise_steps - 1}]")
    x0 = read_image(args.image)[None]
    gen = torch.Generator().manual_seed(cfg.run.seed)
    frames = []
    for t in steps:
        noise = torch.zeros_like(x0) if args.noise_off else None
        x_t, _ = forward_jump(x0, t, s, noise=noise, generator=gen)
        frames.append(x_t[0])
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    save_png(out / "forward_demo.png", _grid([frames]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration (INI)")
    common.add_argument("--seed", type=int, help="override [run] seed")
    common.add_argument("--out", help="override [run] output_dir")
    common.add_argument("--quiet", action="store_true", help="only log warnings and errors")

    p = argparse.ArgumentParser(prog="srddpm", description="Conditional DDPM for image super-resolution.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train a noise predictor")
    t.add_argument("--resume", help="continue from a checkpoint written by a previous run")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="score a checkpoint on the test pairs")
    e.add_argument("--checkpoint", required=True)
    e.set_defaults(func=cmd_eval)

    sm = sub.add_parser("sample", parents=[common], help="write reverse-process trajectories")
    sm.add_argument("--checkpoint", required=True)
    sm.add_argument("--n-images", type=int, default=4)
    sm.add_argument("--save-at", type=_parse_steps, help="comma-separated timesteps to keep")
    sm.add_argument("--frames", type=int, default=10, help="evenly spaced frames when --save-at is omitted")
    sm.set_defaults(func=cmd_sample)

    f = sub.add_parser("forward-demo", parents=[common], help="strip of progressively noised images")
    f.add_argument("--image", required=True)
    f.add_argument("--timesteps", type=_parse_steps, default=list(range(0, 201, 20)))
    f.add_argument("--noise-off", action="store_true", help="apply only the deterministic rescaling")
    f.set_defaults(func=cmd_forward_demo)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        cfg = load_config(args.config).with_overrides(seed=args.seed, output_dir=args.out)
        return args.func(args, cfg)
    except (ConfigError, DatasetError, ck.CheckpointError) as exc:
        print(f"srddpm {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, IndexError, ValueError, RuntimeError) as exc:
        print(f"srddpm {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
