"""End-to-end generation: audio + reference image -> video frames + report."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import diffcore
from ..audiofeat import detect_audio_beats, extract_features, read_wav
from ..fileformats import read_ppm, write_coeff_file, write_video_dir
from ..framegen import FrameDenoiser, generate_frames
from ..latentcodec import FrameCodec
from ..lipexpert import SyncExpert
from ..metrics import beat_align, detect_motion_beats, motion_diversity
from ..motiongen import MotionDenoiser, generate_motion
from . import checkpoint
from .report import write_report
from .training import sequence_sync_score

META_NAME = "meta"


@dataclass
class ModelBundle:
    exp: MotionDenoiser
    pose: MotionDenoiser
    codec: FrameCodec
    unet: FrameDenoiser
    expert: SyncExpert | None
    basis: object
    T: int
    steps: int


def save_meta(models_dir, T: int, steps: int) -> None:
    checkpoint.save_arrays(
        Path(models_dir) / META_NAME, {"T": np.float64(T), "steps": np.float64(steps)}
    )


def load_meta(models_dir) -> tuple[int, int]:
    arrays = checkpoint.load_arrays(Path(models_dir) / META_NAME)
    return int(arrays["T"]), int(arrays["steps"])


def load_bundle(models_dir) -> ModelBundle:
    models_dir = Path(models_dir)
    T, steps = load_meta(models_dir)
    expert_dir = models_dir / "expert"
    return ModelBundle(
        exp=checkpoint.load_motion_model(models_dir / "motion_exp"),
        pose=checkpoint.load_motion_model(models_dir / "motion_pose"),
        codec=checkpoint.load_codec(models_dir / "codec"),
        unet=checkpoint.load_unet(models_dir / "unet"),
        expert=checkpoint.load_expert(expert_dir) if expert_dir.exists() else None,
        basis=checkpoint.load_basis(models_dir / "basis"),
        T=T,
        steps=steps,
    )


def run_pipeline(
    audio_path,
    reference_path,
    models_dir,
    out_dir,
    seed: int = 0,
    steps: int | None = None,
) -> dict:
    """Generate a video for one audio clip and reference frame; emit a report.

    Deterministic for a fixed seed. Returns the report metrics plus the
    generated arrays.
    """
    bundle = load_bundle(models_dir)
    return run_pipeline_with_bundle(bundle, audio_path, reference_path, out_dir, seed, steps)


def run_pipeline_with_bundle(
    bundle: ModelBundle,
    audio_path,
    reference_path,
    out_dir,
    seed: int = 0,
    steps: int | None = None,
) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    steps = steps or bundle.steps
    wave = read_wav(audio_path)
    F = wave.num_frames
    if F < 1:
        raise ValueError("audio too short for a single frame")
    audio = extract_features(wave, F, bundle.exp.audio_dim)
    reference = read_ppm(reference_path)
    schedule = diffcore.build_schedule(bundle.T)
    beta0, p0 = generate_motion(audio, bundle.exp, bundle.pose, schedule, steps, seed=seed)
    frames = generate_frames(
        beta0, p0, reference, bundle.unet, bundle.codec, schedule, steps, seed=seed
    )
    write_video_dir(out_dir / "frames", frames)
    write_coeff_file(out_dir / "beta.txt", beta0)
    write_coeff_file(out_dir / "pose.txt", p0)

    audio_beats = detect_audio_beats(wave)
    motion_beats = detect_motion_beats(p0)
    metrics = {
        "frames": float(F),
        "beat_align": beat_align(audio_beats, motion_beats),
        "motion_diversity": motion_diversity([p0]),
    }
    if bundle.expert is not None:
        # the reference portrait's identity coefficients are unknown at
        # inference; score mouth motion under the rest identity
        metrics["sync_score"] = sequence_sync_score(
            beta0, np.zeros(bundle.basis.dim_id), audio.features, bundle.basis, bundle.expert
        )
    write_report(metrics, out_dir, beats=(audio_beats, motion_beats, F))
    return {
        "metrics": metrics,
        "frames": frames,
        "beta": beta0,
        "pose": p0,
        "audio_beats": audio_beats,
        "motion_beats": motion_beats,
        "out_dir": out_dir,
    }
