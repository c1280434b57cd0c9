"""Conditional denoising diffusion for image super-resolution."""

from .checkpoint import Checkpoint, CheckpointError, read_checkpoint, write_checkpoint
from .config import ConfigError, RunConfig, load_config, parse_config
from .data import (
    DatasetError,
    DatasetManifest,
    SyntheticSpec,
    TensorPairDataset,
    TiffPairDataset,
    denormalize,
    generate_synthetic,
    load_pair,
    normalize,
    scan,
)
from .denoiser import (
    AnalyticGaussianPredictor,
    AttentionUNet,
    GaussianOracleParams,
    UNetConfig,
    analytic_gaussian_predictor,
    build_unet,
)
from .diffusion import (
    SAMPLER_VARIANTS,
    TrajectoryRecord,
    forward_jump,
    forward_step,
    posterior_mean_simplified,
    posterior_mean_via_x0,
    reconstruct_x0,
    reverse_step_posterior,
    reverse_step_simplified,
    sample,
)
from .metrics import MetricsConfig, MetricsReport, evaluate, mae, ms_ssim, nrmse, psnr, ssim
from .posenc import encode
from .schedule import NoiseSchedule, ScheduleConfig, build_linear_schedule
from .trainer import TrainConfig, TrainHistory, TrainingError, TrainState, prepare_batch, train

__version__ = "0.1.0"
