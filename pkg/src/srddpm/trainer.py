"""Noise-prediction training loop for conditional (or plain) DDPMs."""

from __future__ import annotations

import csv
import hashlib
import logging
import time
from dataclasses import dataclass, field
from datetime import timedelta
from typing import Callable, NamedTuple

import torch
import torch.nn.functional as F

from .diffusion import forward_jump
from .metrics import MetricsConfig, MetricsReport, evaluate
from .posenc import encode
from .schedule import NoiseSchedule, ScheduleConfig, build_linear_schedule

log = logging.getLogger(__name__)

LOSS_KINDS = ("squared-error", "absolute-error")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 64
    learning_rate: float = 1e-4
    loss_kind: str = "squared-error"
    noise_steps: int = 2000
    beta_start: float = 1e-6
    beta_end: float = 0.01
    seed: int = 0
    weight_decay: float = 0.0
    log_every: int = 100

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        for name in ("epochs", "batch_size", "noise_steps", "log_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        self.schedule_config()  # validates the beta range

    def schedule_config(self) -> ScheduleConfig:
        return ScheduleConfig(self.noise_steps, self.beta_start, self.beta_end)


@dataclass
class TrainHistory:
    mean_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    metrics: list[MetricsReport | None] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.mean_loss)

    def rows(self, include_seconds: bool = True) -> list[list[str]]:
        has_metrics = any(m is not None for m in self.metrics)
        header = ["epoch", "mean_loss"] + (["seconds"] if include_seconds else [])
        if has_metrics:
            header += MetricsReport.csv_header()
        out = [header]
        for i, loss in enumerate(self.mean_loss):
            row = [str(i + 1), repr(loss)]
            if include_seconds:
                row.append(f"{self.seconds[i]:.3f}")
            if has_metrics:
                m = self.metrics[i]
                row += m.csv_row() if m is not None else [""] * len(MetricsReport.csv_header())
            out.append(row)
        return out

    def to_csv(self, path, include_seconds: bool = True) -> None:
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self.rows(include_seconds))


class PreparedBatch(NamedTuple):
    model_input: torch.Tensor
    t_enc: torch.Tensor
    noise_target: torch.Tensor
    t: torch.Tensor


def prepare_batch(
    input_images: torch.Tensor | None,
    target_images: torch.Tensor,
    s: NoiseSchedule,
    enc_dim: int = 256,
    generator: torch.Generator | None = None,
) -> PreparedBatch:
    """Corrupt the targets at random timesteps and stack the condition in front.

    ``input_images=None`` gives the unconditional layout (noisy target only).
    """
    b = target_images.shape[0]
    if input_images is not None and (
        input_images.shape[0] != b or input_images.shape[-2:] != target_images.shape[-2:]
    ):
        raise ValueError(
            f"input {tuple(input_images.shape)} and target {tuple(target_images.shape)} "
            "must share batch size and spatial size"
        )
    t = torch.randint(0, s.noise_steps, (b,), generator=generator)
    noise = torch.randn(target_images.shape, generator=generator, dtype=target_images.dtype)
    x_t, noise = forward_jump(target_images, t, s, noise=noise)
    if input_images is not None:
        x_t = torch.cat((input_images.to(x_t.dtype), x_t), dim=1)
    return PreparedBatch(x_t, encode(t, enc_dim, dtype=target_images.dtype), noise, t)


def loss(predicted: torch.Tensor, target: torch.Tensor, kind: str = "squared-error") -> torch.Tensor:
    if predicted.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(predicted.shape)} vs {tuple(target.shape)}")
    if kind == "squared-error":
        return F.mse_loss(predicted, target)
    if kind == "absolute-error":
        return F.l1_loss(predicted, target)
    raise ValueError(f"unknown loss kind {kind!r}")


def parameter_checksum(model: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def _is_conditional(predictor, target_channels: int) -> bool:
    in_ch = getattr(predictor, "in_channels", None)
    return in_ch is not None and in_ch > target_channels


@torch.no_grad()
def dataset_loss(
    predictor,
    low: torch.Tensor,
    high: torch.Tensor,
    t: torch.Tensor,
    noise: torch.Tensor,
    s: NoiseSchedule,
    enc_dim: int = 256,
    kind: str = "squared-error",
    batch_size: int = 64,
) -> float:
    """Mean loss over a fixed set of ``(t, noise)`` draws without touching parameters."""
    conditional = _is_conditional(predictor, high.shape[1])
    total, count = 0.0, 0
    for start in range(0, high.shape[0], batch_size):
        sl = slice(start, start + batch_size)
        x_t, _ = forward_jump(high[sl], t[sl], s, noise=noise[sl])
        inp = torch.cat((low[sl].to(x_t.dtype), x_t), 1) if conditional else x_t
        pred = predictor(inp, encode(t[sl], enc_dim, dtype=high.dtype))
        total += float(loss(pred, noise[sl], kind)) * noise[sl].numel()
        count += noise[sl].numel()
    return total / count


@dataclass
class TrainState:
    """Everything needed to continue training after ``epoch`` completed epochs."""

    epoch: int
    model: torch.nn.Module
    optimizer: torch.optim.Optimizer
    generator: torch.Generator
    history: TrainHistory
    best_loss: float = float("inf")
    improved: bool = False


def make_optimizer(model: torch.nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)


def train(
    cfg: TrainConfig,
    predictor: torch.nn.Module,
    train_data,
    s: NoiseSchedule | None = None,
    eval_data=None,
    *,
    metrics_cfg: MetricsConfig = MetricsConfig(),
    sampler_variant: str = "simplified",
    resume: TrainState | None = None,
    on_epoch_end: Callable[[TrainState], None] | None = None,
) -> tuple[torch.nn.Module, TrainHistory]:
    """Train ``predictor`` to predict injected noise; returns it with its history.

    Batches are drawn in a fresh random order each epoch. Shuffling, timesteps
    and noise all come from one generator seeded by ``cfg.seed``, so a run is
    reproducible and can be resumed exactly from a :class:`TrainState`.
    ``eval_data`` (a paired dataset) triggers a metrics pass after every epoch.
    """
    s = s or build_linear_schedule(cfg.schedule_config())
    enc_dim = predictor.cfg.time_embedding_dim
    n = len(train_data)
    if n == 0:
        raise ValueError("training set is empty")
    target_ch = train_data[0][1].shape[0]
    cond_ch = train_data[0][0].shape[0]
    conditional = _is_conditional(predictor, target_ch)
    expected = target_ch + (cond_ch if conditional else 0)
    if predictor.in_channels != expected:
        raise ValueError(
            f"predictor takes {predictor.in_channels} channels; data gives {cond_ch} condition "
            f"+ {target_ch} target"
        )
    dtype = next(predictor.parameters()).dtype

    if resume is None:
        state = TrainState(
            epoch=0,
            model=predictor,
            optimizer=make_optimizer(predictor, cfg),
            generator=torch.Generator().manual_seed(cfg.seed),
            history=TrainHistory(),
        )
    else:
        state = resume
        state.model = predictor

    num_batches = -(-n // cfg.batch_size)
    for epoch in range(state.epoch, cfg.epochs):
        start_time = time.perf_counter()
        predictor.train()
        order = torch.randperm(n, generator=state.generator)
        running = 0.0
        for batch_idx in range(num_batches):
            idx = order[batch_idx * cfg.batch_size : (batch_idx + 1) * cfg.batch_size]
            low, high = train_data.get_batch(idx.tolist())
            batch = prepare_batch(
                low.to(dtype) if conditional else None,
                high.to(dtype),
                s,
                enc_dim,
                generator=state.generator,
            )
            outputs = predictor(batch.model_input, batch.t_enc)
            state.optimizer.zero_grad()
            batch_loss = loss(outputs, batch.noise_target, cfg.loss_kind)
            if not torch.isfinite(batch_loss):
                raise TrainingError(
                    f"non-finite loss {batch_loss.item()} at epoch {epoch + 1}, batch {batch_idx + 1}"
                )
            batch_loss.backward()
            state.optimizer.step()
            running += batch_loss.item()
            if (batch_idx + 1) % cfg.log_every == 0:
                log.info("Batch %d/%d: Train loss: %.4f", batch_idx + 1, num_batches, batch_loss.item())

        mean = running / num_batches
        report = None
        if eval_data is not None:
            report = evaluate(
                predictor,
                s,
                eval_data.batches(cfg.batch_size),
                metrics_cfg,
                sampler_variant=sampler_variant,
                seed=cfg.seed,
                enc_dim=enc_dim,
                conditional=conditional,
                dtype=dtype,
            )
        elapsed = time.perf_counter() - start_time
        state.history.mean_loss.append(mean)
        state.history.seconds.append(elapsed)
        state.history.metrics.append(report)
        state.epoch = epoch + 1
        log.info(
            "Epoch %d/%d : Train loss: %.4f, Time taken: %s",
            epoch + 1,
            cfg.epochs,
            mean,
            timedelta(seconds=elapsed),
        )
        state.improved = mean < state.best_loss
        state.best_loss = min(state.best_loss, mean)
        if on_epoch_end is not None:
            on_epoch_end(state)
    return predictor, state.history
