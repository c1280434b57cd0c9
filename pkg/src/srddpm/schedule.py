"""Linear variance schedule and every per-timestep constant derived from it.

Index ``t`` runs over ``0 .. T-1`` and describes the corruption level after
``t + 1`` forward steps, so ``alpha_bar[0] = 1 - beta[0]`` and the "previous"
cumulative product at ``t = 0`` is the clean-image value 1.0.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

LOG_VARIANCE_FLOOR = 1e-20


@dataclass(frozen=True)
class ScheduleConfig:
    noise_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        if int(self.noise_steps) != self.noise_steps or self.noise_steps < 2:
            raise ValueError(f"noise_steps must be an integer >= 2, got {self.noise_steps!r}")
        if not 0.0 < self.beta_start <= self.beta_end < 1.0:
            raise ValueError(
                "need 0 < beta_start <= beta_end < 1, got "
                f"beta_start={self.beta_start!r}, beta_end={self.beta_end!r}"
            )


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Precomputed float64 schedule arrays, each of length ``T``.

    The arrays are read-only so one schedule can be shared freely.
    """

    config: ScheduleConfig
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    alpha_bar_prev: np.ndarray
    posterior_variance: np.ndarray
    posterior_log_variance_clipped: np.ndarray
    posterior_mean_coeff1: np.ndarray
    posterior_mean_coeff2: np.ndarray
    x0_coeff1: np.ndarray
    x0_coeff2: np.ndarray

    @property
    def noise_steps(self) -> int:
        return self.config.noise_steps

    def __len__(self) -> int:
        return self.config.noise_steps

    def check_timestep(self, t) -> None:
        t = np.asarray(t)
        if t.size and (t.min() < 0 or t.max() >= self.noise_steps):
            raise IndexError(
                f"timestep out of range [0, {self.noise_steps - 1}]: "
                f"min={t.min()}, max={t.max()}"
            )

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "config"}


def build_linear_schedule(cfg: ScheduleConfig) -> NoiseSchedule:
    beta = np.linspace(cfg.beta_start, cfg.beta_end, cfg.noise_steps, dtype=np.float64)
    # linspace can land a hair off the requested end point
    beta[0], beta[-1] = cfg.beta_start, cfg.beta_end
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])

    one_minus_ab = 1.0 - alpha_bar
    posterior_variance = beta * (1.0 - alpha_bar_prev) / one_minus_ab
    log_var = np.log(np.maximum(posterior_variance, LOG_VARIANCE_FLOOR))

    coeff1 = np.sqrt(alpha_bar_prev) * beta / one_minus_ab
    coeff2 = np.sqrt(alpha) * (1.0 - alpha_bar_prev) / one_minus_ab

    return NoiseSchedule(
        config=cfg,
        beta=_frozen(beta),
        alpha=_frozen(alpha),
        alpha_bar=_frozen(alpha_bar),
        alpha_bar_prev=_frozen(alpha_bar_prev),
        posterior_variance=_frozen(posterior_variance),
        posterior_log_variance_clipped=_frozen(log_var),
        posterior_mean_coeff1=_frozen(coeff1),
        posterior_mean_coeff2=_frozen(coeff2),
        x0_coeff1=_frozen(np.sqrt(1.0 / alpha_bar)),
        x0_coeff2=_frozen(np.sqrt(1.0 / alpha_bar - 1.0)),
    )


def posterior_coefficients(s: NoiseSchedule, t: int) -> tuple[float, float]:
    """Weights on ``x0`` and ``x_t`` in the posterior mean of ``x_{t-1}``."""
    s.check_timestep(t)
    return float(s.posterior_mean_coeff1[t]), float(s.posterior_mean_coeff2[t])


def x0_coefficients(s: NoiseSchedule, t: int) -> tuple[float, float]:
    """Scalars with ``x0 = coeff1 * x_t - coeff2 * eps``."""
    s.check_timestep(t)
    return float(s.x0_coeff1[t]), float(s.x0_coeff2[t])
