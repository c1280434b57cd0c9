"""Run configuration files.

A run config is an INI file. Every key maps onto a field of one of the
library's config objects, unknown sections or keys are errors, and only the
dataset location has no default. Example::

    [schedule]
    noise_steps = 200
    beta_start = 1e-4
    beta_end = 0.05

    [train]
    epochs = 20
    batch_size = 16

    [unet]
    encoder_channels = 32, 64, 128

    [synthetic]
    n_pairs = 256
    n_test = 32

    [run]
    output_dir = runs/demo
    sampler_variant = posterior
    seed = 0

The dataset is either ``[synthetic]`` or ``[data]``; the latter takes a
BioSR ``root`` (with ``noise_level``, default ``level_09``) or the four
explicit ``*_dir`` keys.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .data import (
    DatasetError,
    PairedDataset,
    SyntheticSpec,
    TiffPairDataset,
    generate_synthetic,
    scan,
)
from .denoiser import UNetConfig
from .diffusion import SAMPLER_VARIANTS
from .metrics import MetricsConfig
from .schedule import ScheduleConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TiffSource:
    low_res_dir: Path
    high_res_dir: Path
    test_low_res_dir: Path
    test_high_res_dir: Path

    def load(self) -> tuple[PairedDataset, PairedDataset]:
        train = TiffPairDataset(scan(self.low_res_dir, self.high_res_dir))
        test = TiffPairDataset(scan(self.test_low_res_dir, self.test_high_res_dir))
        return train, test


@dataclass(frozen=True)
class SyntheticSource:
    spec: SyntheticSpec
    n_test: int = 32

    def load(self):
        total = replace(self.spec, n_pairs=self.spec.n_pairs + self.n_test)
        return generate_synthetic(total).split(self.spec.n_pairs)


@dataclass(frozen=True)
class RunOptions:
    output_dir: Path = Path("runs/default")
    sampler_variant: str = "simplified"
    seed: int = 0
    eval_every_epoch: bool = False
    save_samples: int = 0
    write_timing: bool = False


@dataclass(frozen=True)
class RunConfig:
    schedule: ScheduleConfig
    train: TrainConfig
    unet: UNetConfig
    metrics: MetricsConfig
    data: TiffSource | SyntheticSource
    run: RunOptions

    @property
    def output_dir(self) -> Path:
        return self.run.output_dir

    def with_overrides(self, seed: int | None = None, output_dir=None) -> "RunConfig":
        run = self.run
        if seed is not None:
            run = replace(run, seed=seed)
        if output_dir is not None:
            run = replace(run, output_dir=Path(output_dir))
        return replace(self, run=run, train=replace(self.train, seed=run.seed))


_LIST_FIELDS = {"encoder_channels", "bottleneck_channels", "attention_flags", "ms_ssim_weights"}
_TRAIN_KEYS = {"epochs", "batch_size", "learning_rate", "loss_kind", "weight_decay", "log_every"}
_SECTIONS = {
    "schedule": {f.name for f in fields(ScheduleConfig)},
    "train": _TRAIN_KEYS,
    "unet": {f.name for f in fields(UNetConfig)},
    "metrics": {f.name for f in fields(MetricsConfig)},
    "synthetic": {"n_pairs", "n_test", "image_size", "blobs", "blur_radius", "seed"},
    "data": {"root", "noise_level", "low_res_dir", "high_res_dir", "test_low_res_dir", "test_high_res_dir"},
    "run": {f.name for f in fields(RunOptions)},
}


def _convert(key: str, raw: str, like):
    raw = raw.strip()
    if key in _LIST_FIELDS:
        items = [x.strip() for x in raw.split(",") if x.strip()]
        if key == "attention_flags":
            return tuple(_bool(x) for x in items)
        if key == "ms_ssim_weights":
            return tuple(float(x) for x in items)
        return tuple(int(x) for x in items)
    if isinstance(like, bool):
        return _bool(raw)
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, Path):
        return Path(raw)
    return raw


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _section(parser, name: str, defaults) -> dict:
    if not parser.has_section(name):
        return {}
    out = {}
    for key, raw in parser.items(name):
        like = getattr(defaults, key, None)
        try:
            out[key] = _convert(key, raw, like)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from exc
    return out


def parse_config(text: str, base_dir: Path = Path(".")) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc

    for sec in parser.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        unknown = set(parser.options(sec)) - _SECTIONS[sec]
        if unknown:
            raise ConfigError(f"unknown key(s) in [{sec}]: {', '.join(sorted(unknown))}")

    try:
        schedule = ScheduleConfig(**_section(parser, "schedule", ScheduleConfig()))
        run = RunOptions(**_section(parser, "run", RunOptions()))
        if run.sampler_variant not in SAMPLER_VARIANTS:
            raise ConfigError(f"[run] sampler_variant must be one of {SAMPLER_VARIANTS}")
        if not run.output_dir.is_absolute():
            run = replace(run, output_dir=base_dir / run.output_dir)
        train = TrainConfig(
            **_section(parser, "train", TrainConfig()),
            noise_steps=schedule.noise_steps,
            beta_start=schedule.beta_start,
            beta_end=schedule.beta_end,
            seed=run.seed,
        )
        unet = UNetConfig(**_section(parser, "unet", UNetConfig()))
        metrics = MetricsConfig(**_section(parser, "metrics", MetricsConfig()))
        data = _data_source(parser, base_dir)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return RunConfig(schedule, train, unet, metrics, data, run)


def _data_source(parser, base_dir: Path):
    has_syn, has_data = parser.has_section("synthetic"), parser.has_section("data")
    if has_syn == has_data:
        raise ConfigError("exactly one of [data] or [synthetic] must give the dataset location")
    if has_syn:
        vals = _section(parser, "synthetic", SyntheticSpec())
        n_test = int(vals.pop("n_test", 32))
        return SyntheticSource(SyntheticSpec(**vals), n_test=n_test)

    d = dict(parser.items("data"))
    explicit = ("low_res_dir", "high_res_dir", "test_low_res_dir", "test_high_res_dir")
    if "root" in d:
        root = base_dir / d["root"]
        level = d.get("noise_level", "level_09")
        paths = {
            "low_res_dir": root / "training_wf",
            "high_res_dir": root / "training_gt",
            "test_low_res_dir": root / "test_wf" / level,
            "test_high_res_dir": root / "test_gt",
        }
        paths.update({k: base_dir / d[k] for k in explicit if k in d})
    else:
        missing = [k for k in explicit if k not in d]
        if missing:
            raise ConfigError(f"[data] needs root or all of: {', '.join(missing)}")
        paths = {k: base_dir / d[k] for k in explicit}
    for key, p in paths.items():
        if not p.is_dir():
            raise ConfigError(f"[data] {key}: directory not found: {p}")
    return TiffSource(**paths)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base_dir=path.parent)


def validate_for_metrics(cfg: RunConfig, image_hw: tuple[int, int]) -> None:
    need = cfg.metrics.ms_ssim_min_size
    if min(image_hw) < need:
        raise ConfigError(
            f"images of size {image_hw} are too small for MS-SSIM (need at least {need}x{need}); "
            "enlarge the images or disable metric evaluation"
        )


__all__ = [
    "ConfigError",
    "DatasetError",
    "RunConfig",
    "RunOptions",
    "SyntheticSource",
    "TiffSource",
    "load_config",
    "parse_config",
]
