"""Signal-agnostic diffusion machinery.

Noise schedule, forward noising, single-step denoising with a clean-signal
(x0) prediction, timestep subsampling, and the sampling loop. Both the
coefficient-sequence stage and the latent-frame stage run on top of this
module; signals are plain numpy arrays of any shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step betas and the cumulative signal fraction alpha_bar.

    alpha_bar has T+1 entries indexed by timestep with alpha_bar[0] = 1, so
    the "previous step is 0" case of the denoising update is well defined.
    """

    betas: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return self.betas.shape[0]


def build_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 2e-2) -> NoiseSchedule:
    """Linear beta schedule from beta_start to beta_end over T steps."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    betas = np.linspace(beta_start, beta_end, T)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(betas=betas, alpha_bar=alpha_bar)


def forward_diffuse(x0, t: int, eps, schedule: NoiseSchedule) -> np.ndarray:
    """Noisy signal at timestep t: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    if not 0 <= t <= schedule.T:
        raise ValueError(f"timestep {t} outside [0, {schedule.T}]")
    ab = schedule.alpha_bar[t]
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def denoise_step(
    x_t,
    x0_hat,
    t: int,
    schedule: NoiseSchedule,
    sigma_t: float = 0.0,
    eps=None,
    t_prev: int | None = None,
) -> np.ndarray:
    """One reverse update from timestep t toward t_prev (default t-1).

    Moves x_t toward the predicted clean signal x0_hat while keeping the
    direction of the current noise; sigma_t > 0 injects fresh noise eps.
    sigma_t^2 may not exceed 1 - alpha_bar[t_prev].
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    if x_t.shape != x0_hat.shape:
        raise ValueError(f"shape mismatch: x_t {x_t.shape} vs x0_hat {x0_hat.shape}")
    if not 1 <= t <= schedule.T:
        raise ValueError(f"timestep {t} outside [1, {schedule.T}]")
    if t_prev is None:
        t_prev = t - 1
    if not 0 <= t_prev < t:
        raise ValueError(f"t_prev {t_prev} must lie in [0, {t})")
    ab_t = schedule.alpha_bar[t]
    ab_prev = schedule.alpha_bar[t_prev]
    var_budget = 1.0 - ab_prev
    if sigma_t * sigma_t > var_budget + 1e-12:
        raise ValueError(f"sigma_t^2 = {sigma_t**2:.3g} exceeds 1 - alpha_bar[t_prev] = {var_budget:.3g}")
    dir_coef = math.sqrt(max(var_budget - sigma_t * sigma_t, 0.0)) / math.sqrt(1.0 - ab_t)
    out = math.sqrt(ab_prev) * x0_hat + dir_coef * (x_t - math.sqrt(ab_t) * x0_hat)
    if sigma_t != 0.0:
        if eps is None:
            raise ValueError("eps is required when sigma_t is nonzero")
        eps = np.asarray(eps, dtype=np.float64)
        if eps.shape != x_t.shape:
            raise ValueError(f"shape mismatch: eps {eps.shape} vs x_t {x_t.shape}")
        out = out + sigma_t * eps
    return out


def subsample_timesteps(T: int, steps: int) -> np.ndarray:
    """`steps` strictly decreasing timesteps from T toward 1.

    Evenly spaced over [T, 1] with rounding, then nudged so consecutive
    entries strictly decrease; steps=1 yields [T].
    """
    if not 1 <= steps <= T:
        raise ValueError(f"steps must lie in [1, {T}], got {steps}")
    if steps == 1:
        return np.array([T], dtype=np.int64)
    ts = np.round(np.linspace(T, 1, steps)).astype(np.int64)
    for i in range(1, steps):
        ts[i] = min(ts[i], ts[i - 1] - 1)
    return ts


def sampling_sigma(eta: float, ab_t: float, ab_prev: float) -> float:
    """Stochasticity level for one reverse step; eta=0 is deterministic."""
    if ab_prev >= 1.0:
        return 0.0
    return (
        eta
        * math.sqrt((1.0 - ab_prev) / (1.0 - ab_t))
        * math.sqrt(1.0 - ab_t / ab_prev)
    )


def sample(
    denoiser,
    shape,
    condition,
    schedule: NoiseSchedule,
    steps: int,
    eta: float = 0.0,
    seed: int = 0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Draw a signal by iterated denoising from seeded Gaussian noise.

    denoiser(x_t, t, condition) must return the predicted clean signal.
    With eta=0 the result is a pure function of (seed, condition, weights).
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    if rng is None:
        rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    ts = subsample_timesteps(schedule.T, steps)
    for i, t in enumerate(ts):
        t = int(t)
        t_prev = int(ts[i + 1]) if i + 1 < len(ts) else 0
        x0_hat = denoiser(x, t, condition)
        sigma = sampling_sigma(eta, schedule.alpha_bar[t], schedule.alpha_bar[t_prev])
        eps = rng.standard_normal(shape) if sigma > 0.0 else None
        x = denoise_step(x, x0_hat, t, schedule, sigma_t=sigma, eps=eps, t_prev=t_prev)
    return x


def x0_objective(x0, x0_hat) -> float:
    """Mean squared error between the clean signal and its prediction."""
    x0 = np.asarray(x0, dtype=np.float64)
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    if x0.shape != x0_hat.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {x0_hat.shape}")
    return float(np.mean((x0 - x0_hat) ** 2))
