"""Evaluation metrics: PSNR, SSIM, Frechet distance, motion diversity, beat alignment.

Frames are 3 x H x W arrays in [0, 1]. The Frechet distance runs over a
pluggable feature extractor (the fixed random conv pyramid by default) and
is reported as a substitute-feature distance, not a standard-network score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PSNR_CAP_DB = 100.0
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2


def _coeff_values(seq) -> np.ndarray:
    """Accept a CoeffSequence or a raw (F, D) array."""
    return np.asarray(getattr(seq, "values", seq), dtype=np.float64)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] frames, capped at 100."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return k / k.sum()


def _local_window_means(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid-mode separable windowed means over the last two axes."""
    from numpy.lib.stride_tricks import sliding_window_view

    size = kernel.shape[0]
    windows = sliding_window_view(img, (size, size), axis=(-2, -1))
    return np.einsum("...ij,i,j->...", windows, kernel, kernel)


def ssim(a, b) -> float:
    """Mean local SSIM with an 11x11 Gaussian window, averaged over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.shape[-1] < _SSIM_WINDOW or a.shape[-2] < _SSIM_WINDOW:
        raise ValueError(f"frame sides must be at least {_SSIM_WINDOW}")
    kernel = _gaussian_kernel(_SSIM_WINDOW, _SSIM_SIGMA)
    mu1 = _local_window_means(a, kernel)
    mu2 = _local_window_means(b, kernel)
    var1 = _local_window_means(a * a, kernel) - mu1 * mu1
    var2 = _local_window_means(b * b, kernel) - mu2 * mu2
    cov = _local_window_means(a * b, kernel) - mu1 * mu2
    num = (2 * mu1 * mu2 + _SSIM_C1) * (2 * cov + _SSIM_C2)
    den = (mu1**2 + mu2**2 + _SSIM_C1) * (var1 + var2 + _SSIM_C2)
    return float(np.mean(num / den))


@dataclass
class GaussianStats:
    """Mean vector and covariance of a feature distribution."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).ravel()
        self.covariance = np.asarray(self.covariance, dtype=np.float64)
        d = self.mean.shape[0]
        if self.covariance.shape != (d, d):
            raise ValueError(f"covariance must be {d} x {d}")
        asym = np.max(np.abs(self.covariance - self.covariance.T))
        if asym > 1e-10:
            raise ValueError(f"covariance asymmetric by {asym:.3g}")
        eigs = np.linalg.eigvalsh(self.covariance)
        tol = 1e-8 * max(1.0, float(np.max(np.abs(eigs), initial=0.0)))
        if eigs.min(initial=0.0) < -tol:
            raise ValueError(f"covariance has negative eigenvalue {eigs.min():.3g}")


def gaussian_stats(features) -> GaussianStats:
    """Fit mean/covariance to an (n, D) feature matrix."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError("features must be an n x D matrix")
    mean = features.mean(axis=0)
    centered = features - mean
    n = features.shape[0]
    cov = centered.T @ centered / max(n - 1, 1)
    cov = (cov + cov.T) / 2.0
    return GaussianStats(mean, cov)


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition; negatives clamped to 0."""
    eigvals, eigvecs = np.linalg.eigh((mat + mat.T) / 2.0)
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def frechet_distance(p: GaussianStats, q: GaussianStats) -> float:
    """||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}), clamped at zero.

    The cross term uses Tr((S2^{1/2} S1 S2^{1/2})^{1/2}), which equals
    Tr((S1 S2)^{1/2}) and keeps every square root symmetric.
    """
    if p.mean.shape != q.mean.shape:
        raise ValueError("stats have different dimensions")
    mean_diff = p.mean - q.mean
    s2_half = _sqrtm_psd(q.covariance)
    cross = _sqrtm_psd(s2_half @ p.covariance @ s2_half)
    fd = float(
        mean_diff @ mean_diff
        + np.trace(p.covariance)
        + np.trace(q.covariance)
        - 2.0 * np.trace(cross)
    )
    return max(fd, 0.0)


def motion_diversity(sequences) -> float:
    """Population std per coefficient dimension over all frames, averaged over dims."""
    if len(sequences) < 1:
        raise ValueError("need at least one sequence")
    stacked = np.concatenate([_coeff_values(s) for s in sequences], axis=0)
    return float(np.mean(np.std(stacked, axis=0)))


def detect_motion_beats(pose_seq) -> list[int]:
    """Frames where head rotation speed hits a strict local minimum.

    Speed at frame i is the centered difference ||r_{i+1} - r_{i-1}|| / 2 of
    the rotation coefficients (first three dims); beats are strict local
    minima of that speed.
    """
    values = _coeff_values(pose_seq)
    F = values.shape[0]
    if F < 3:
        raise ValueError("need at least 3 frames")
    rot = values[:, :3]
    speed = np.linalg.norm(rot[2:] - rot[:-2], axis=1) / 2.0  # speed[j] = frame j+1
    beats = []
    for j in range(1, speed.shape[0] - 1):
        if speed[j - 1] > speed[j] < speed[j + 1]:
            beats.append(j + 1)
    return beats


def beat_align(audio_beats, motion_beats, sigma: float = 3.0) -> float:
    """Mean Gaussian proximity of each motion beat to its nearest audio beat.

    Empty motion (or audio) beats score 0.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    motion_beats = np.asarray(list(motion_beats), dtype=np.float64)
    audio_beats = np.asarray(list(audio_beats), dtype=np.float64)
    if motion_beats.size == 0 or audio_beats.size == 0:
        return 0.0
    dists = np.min(np.abs(motion_beats[:, None] - audio_beats[None, :]), axis=1)
    return float(np.mean(np.exp(-(dists**2) / (2.0 * sigma**2))))
