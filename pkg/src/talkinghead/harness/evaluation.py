"""Metric assembly over generated artifacts (frame dirs, coefficient files, audio)."""

from __future__ import annotations

import numpy as np
import torch

from ..audiofeat import Waveform, detect_audio_beats, extract_features
from ..latentcodec import RandomFeaturePyramid
from ..lipexpert import SyncExpert
from ..metrics import (
    GaussianStats,
    beat_align,
    detect_motion_beats,
    frechet_distance,
    gaussian_stats,
    motion_diversity,
    psnr,
    ssim,
)
from ..motiongen import CoeffSequence
from .training import sequence_sync_score


def frame_feature_stats(frames: np.ndarray, extractor: RandomFeaturePyramid) -> GaussianStats:
    """Gaussian statistics of pyramid features over a set of frames."""
    with torch.no_grad():
        feats = extractor.feature_vector(torch.as_tensor(np.asarray(frames), dtype=torch.float32))
    return gaussian_stats(feats.double().numpy())


def paired_frame_metrics(generated: np.ndarray, reference: np.ndarray) -> dict[str, float]:
    """Mean PSNR/SSIM over frame pairs (truncated to the shorter video)."""
    n = min(len(generated), len(reference))
    if n == 0:
        raise ValueError("need at least one frame pair")
    return {
        "psnr": float(np.mean([psnr(generated[i], reference[i]) for i in range(n)])),
        "ssim": float(np.mean([ssim(generated[i], reference[i]) for i in range(n)])),
    }


def evaluate_artifacts(
    generated_frames: np.ndarray | None = None,
    reference_frames: np.ndarray | None = None,
    pose: CoeffSequence | None = None,
    beta: CoeffSequence | None = None,
    wave: Waveform | None = None,
    expert: SyncExpert | None = None,
    basis=None,
    alpha: np.ndarray | None = None,
) -> tuple[dict[str, float], tuple | None]:
    """Compute every metric the provided artifacts allow.

    Returns (metrics, beats) where beats is (audio_beats, motion_beats, F)
    when both beat lists are computable.
    """
    metrics: dict[str, float] = {}
    beats = None
    if generated_frames is not None and reference_frames is not None:
        metrics.update(paired_frame_metrics(generated_frames, reference_frames))
        extractor = RandomFeaturePyramid()
        metrics["frechet"] = frechet_distance(
            frame_feature_stats(generated_frames, extractor),
            frame_feature_stats(reference_frames, extractor),
        )
    if pose is not None:
        metrics["motion_diversity"] = motion_diversity([pose])
        motion_beats = detect_motion_beats(pose)
        if wave is not None:
            audio_beats = detect_audio_beats(wave)
            metrics["beat_align"] = beat_align(audio_beats, motion_beats)
            beats = (audio_beats, motion_beats, pose.num_frames)
    if beta is not None and wave is not None and expert is not None and basis is not None:
        features = extract_features(wave, beta.num_frames, expert.audio_dim)
        if alpha is None:
            alpha = np.zeros(basis.dim_id)
        metrics["sync_score"] = sequence_sync_score(beta, alpha, features.features, basis, expert)
    return metrics, beats
