"""Synthetic audio/motion/frame corpus with exact audio-motion correspondence.

Each clip is built from one seeded recipe: tone and click events make the
waveform; expression coefficients are a fixed linear response to the
centered filterbank features (so the audio-to-expression map is exactly
recoverable by regression); head pose is a smooth random walk whose step
size dips at click frames (kinematic beats); frames are soft-edged disc
rasterizations whose geometry encodes the pose and mouth openness.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..audiofeat import (
    FRAME_RATE,
    AudioEvent,
    AudioFeatureSequence,
    Waveform,
    detect_audio_beats,
    extract_features,
    filterbank,
    read_wav,
    silence_features,
    synth_waveform,
    write_wav,
)
from ..face3d import FaceBasis, make_synthetic_basis, mouth_linear_map
from ..fileformats import read_coeff_file, read_video_dir, write_coeff_file, write_video_dir
from ..motiongen import CoeffSequence
from . import checkpoint
from .config import TrainConfig

POSE_DIM = 6
_RESPONSE_GAIN = 0.05  # scales centered log-energies to O(1) expression coefficients
_BG_SEED = 97          # fixed projection from identity coefficients to background color


@dataclass
class ClipRecord:
    waveform: Waveform
    audio: AudioFeatureSequence
    beta: CoeffSequence
    pose: CoeffSequence
    frames: np.ndarray  # (F, 3, H, W) in [0, 1]
    alpha: np.ndarray
    beat_frames: list[int]


@dataclass
class SyntheticCorpus:
    clips: list[ClipRecord]
    basis: FaceBasis
    response: np.ndarray      # (D_beta, D_a): beta row = response @ centered feature row
    silence_row: np.ndarray   # (D_a,)

    @property
    def num_frames(self) -> int:
        return self.clips[0].audio.num_frames

    @property
    def d_beta(self) -> int:
        return self.clips[0].beta.dim

    @property
    def d_audio(self) -> int:
        return self.clips[0].audio.dim


def quantize_wave(wave: Waveform) -> Waveform:
    """Round-trip samples through 16-bit integers (the on-disk precision)."""
    q = np.clip(np.round(wave.samples * 32767.0), -32768, 32767) / 32767.0
    return Waveform(q, wave.sample_rate)


def mouth_weight_vector(basis: FaceBasis) -> np.ndarray:
    """Unit vector mapping expression coefficients to mean mouth displacement."""
    _, weights = mouth_linear_map(basis, np.zeros(basis.dim_id))
    w = weights.mean(axis=0)
    norm = np.linalg.norm(w)
    return w / norm if norm > 0 else w


def render_frames(
    alpha: np.ndarray,
    beta_values: np.ndarray,
    pose_values: np.ndarray,
    basis: FaceBasis,
    size: int = 32,
) -> np.ndarray:
    """Rasterize soft discs whose position/shape encode pose and mouth openness."""
    alpha = np.asarray(alpha, dtype=np.float64)
    F = beta_values.shape[0]
    bg_proj = np.random.default_rng(_BG_SEED).standard_normal((3, alpha.shape[0]))
    bg = 0.2 + 0.25 * (np.tanh(bg_proj @ alpha) + 1.0) / 2.0
    w_mouth = mouth_weight_vector(basis)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    frames = np.empty((F, 3, size, size))
    face_color = np.array([0.85, 0.65, 0.5])
    mouth_color = np.array([0.15, 0.05, 0.1])
    for i in range(F):
        p = pose_values[i]
        u = np.tanh(p[1] + p[3])
        v = np.tanh(p[0] + p[4])
        cx = size * (0.5 + 0.22 * u)
        cy = size * (0.5 + 0.22 * v)
        r_face = 0.28 * size * (1.0 + 0.2 * np.tanh(p[2] + p[5]))
        openness = 1.0 / (1.0 + np.exp(-2.0 * float(w_mouth @ beta_values[i])))
        d_face = np.hypot(xs - cx, ys - cy)
        face_w = 1.0 / (1.0 + np.exp((d_face - r_face) / 0.75))
        mouth_h = (0.12 + 0.55 * openness) * 0.5 * r_face
        mouth_w = 0.55 * r_face
        d_mouth = np.hypot((xs - cx) / mouth_w, (ys - (cy + 0.45 * r_face)) / mouth_h)
        mouth_mask = 1.0 / (1.0 + np.exp((d_mouth - 1.0) / 0.12))
        img = np.empty((3, size, size))
        for c in range(3):
            layer = bg[c] + (face_color[c] - bg[c]) * face_w
            img[c] = layer + (mouth_color[c] - layer) * mouth_mask
        frames[i] = np.clip(img, 0.0, 1.0)
    # quantize to the 8-bit grid so in-memory and stored frames agree exactly
    return np.round(frames * 255.0) / 255.0


def _pose_walk(rng: np.random.Generator, F: int, beat_frames: list[int]) -> np.ndarray:
    """Smooth random walk with step size gated down near beat frames."""
    steps = rng.standard_normal((F, POSE_DIM))
    if F >= 3:  # width-3 moving average keeps the walk low-frequency
        padded = np.vstack([steps[:1], steps, steps[-1:]])
        steps = (padded[:-2] + padded[1:-1] + padded[2:]) / 3.0
    gate = np.ones(F)
    for b in beat_frames:
        gate *= 1.0 - np.exp(-((np.arange(F) - b) ** 2) / 2.0)
    gate = np.clip(gate, 0.02, 1.0)
    scale = np.array([0.12, 0.12, 0.12, 0.15, 0.15, 0.15])
    walk = np.cumsum(steps * gate[:, None] * scale[None, :], axis=0)
    return walk - walk.mean(axis=0)


def _choose_beat_frames(rng: np.random.Generator, F: int) -> list[int]:
    count = int(rng.integers(2, 5))
    frames: list[int] = []
    lo, hi = 3, max(F - 4, 4)
    for _ in range(40):
        if len(frames) == count:
            break
        cand = int(rng.integers(lo, hi))
        if all(abs(cand - f) >= 5 for f in frames):
            frames.append(cand)
    return sorted(frames)


def make_clip(
    clip_seed: np.random.SeedSequence,
    F: int,
    basis: FaceBasis,
    response: np.ndarray,
    silence_row: np.ndarray,
    frame_size: int = 32,
) -> ClipRecord:
    rng = np.random.default_rng(clip_seed)
    d_audio = silence_row.shape[0]
    _, centers = filterbank(d_audio)
    beat_frames = _choose_beat_frames(rng, F)
    events = [AudioEvent("click", frame=b, amplitude=0.9) for b in beat_frames]
    tone_candidates = [f for f in range(F) if f not in beat_frames]
    n_tones = min(len(tone_candidates), max(4, F // 2))
    tone_frames = rng.choice(tone_candidates, size=n_tones, replace=False)
    for f in sorted(int(x) for x in tone_frames):
        events.append(
            AudioEvent(
                "tone",
                frame=f,
                freq=float(centers[int(rng.integers(0, d_audio))]),
                amplitude=float(rng.uniform(0.25, 0.85)),
            )
        )
    wave_seed = int(rng.integers(0, 2**31 - 1))
    wave = quantize_wave(synth_waveform(events, duration=F / FRAME_RATE, seed=wave_seed))
    audio = extract_features(wave, F, d_audio)
    beta_values = (audio.features - silence_row) @ response.T
    # the pose walk pauses at every detected onset (clicks and tone starts),
    # so motion beats are learnable from the audio itself
    pose_values = _pose_walk(rng, F, detect_audio_beats(wave))
    alpha = rng.standard_normal(basis.dim_id) * 0.5
    frames = render_frames(alpha, beta_values, pose_values, basis, size=frame_size)
    return ClipRecord(
        waveform=wave,
        audio=audio,
        beta=CoeffSequence(beta_values, "expression"),
        pose=CoeffSequence(pose_values, "pose"),
        frames=frames,
        alpha=alpha,
        beat_frames=detect_audio_beats(wave),
    )


def make_corpus(
    n_clips: int,
    F: int,
    seed: int,
    basis: FaceBasis,
    d_audio: int = 26,
    frame_size: int = 32,
) -> SyntheticCorpus:
    """Deterministic corpus of n_clips clips of F frames each."""
    if n_clips < 1:
        raise ValueError("n_clips must be at least 1")
    master = np.random.SeedSequence(seed)
    children = master.spawn(n_clips + 1)
    rng0 = np.random.default_rng(children[0])
    response = rng0.standard_normal((basis.dim_exp, d_audio)) * (
        _RESPONSE_GAIN / np.sqrt(d_audio)
    )
    silence_row = silence_features(d_audio)
    clips = [
        make_clip(children[i + 1], F, basis, response, silence_row, frame_size)
        for i in range(n_clips)
    ]
    return SyntheticCorpus(clips=clips, basis=basis, response=response, silence_row=silence_row)


def split_corpus(corpus: SyntheticCorpus, n_train: int) -> tuple[SyntheticCorpus, SyntheticCorpus]:
    """Split clips into train/held-out sets sharing one basis and response law."""
    if not 1 <= n_train < len(corpus.clips):
        raise ValueError("n_train must leave at least one held-out clip")
    return (
        SyntheticCorpus(corpus.clips[:n_train], corpus.basis, corpus.response, corpus.silence_row),
        SyntheticCorpus(corpus.clips[n_train:], corpus.basis, corpus.response, corpus.silence_row),
    )


def corpus_from_config(config: TrainConfig) -> SyntheticCorpus:
    basis = make_synthetic_basis(
        config.num_vertices,
        config.d_alpha,
        config.d_beta,
        mouth_fraction=config.mouth_fraction,
        seed=config.seed,
    )
    return make_corpus(
        config.n_clips,
        config.F,
        config.seed,
        basis,
        d_audio=config.d_audio,
        frame_size=config.frame_size,
    )


def save_corpus(path, corpus: SyntheticCorpus) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    checkpoint.save_basis(path / "basis", corpus.basis)
    checkpoint.save_arrays(
        path / "response", {"response": corpus.response, "silence_row": corpus.silence_row}
    )
    (path / "corpus.txt").write_text(
        f"n_clips = {len(corpus.clips)}\nF = {corpus.num_frames}\n", encoding="utf-8"
    )
    for i, clip in enumerate(corpus.clips):
        clip_dir = path / "clips" / f"clip_{i:03d}"
        clip_dir.mkdir(parents=True, exist_ok=True)
        write_wav(clip_dir / "audio.wav", clip.waveform)
        write_coeff_file(clip_dir / "beta.txt", clip.beta)
        write_coeff_file(clip_dir / "pose.txt", clip.pose)
        write_video_dir(clip_dir / "frames", clip.frames)
        checkpoint.save_arrays(clip_dir / "alpha", {"alpha": clip.alpha})


def load_corpus(path) -> SyntheticCorpus:
    path = Path(path)
    meta = {}
    for line in (path / "corpus.txt").read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            meta[k.strip()] = v.strip()
    n_clips, F = int(meta["n_clips"]), int(meta["F"])
    basis = checkpoint.load_basis(path / "basis")
    extras = checkpoint.load_arrays(path / "response")
    clips = []
    for i in range(n_clips):
        clip_dir = path / "clips" / f"clip_{i:03d}"
        wave = read_wav(clip_dir / "audio.wav")
        frames, _ = read_video_dir(clip_dir / "frames")
        clips.append(
            ClipRecord(
                waveform=wave,
                audio=extract_features(wave, F, extras["silence_row"].shape[0]),
                beta=read_coeff_file(clip_dir / "beta.txt"),
                pose=read_coeff_file(clip_dir / "pose.txt"),
                frames=frames,
                alpha=checkpoint.load_arrays(clip_dir / "alpha")["alpha"],
                beat_frames=detect_audio_beats(wave),
            )
        )
    return SyntheticCorpus(
        clips=clips, basis=basis, response=extras["response"], silence_row=extras["silence_row"]
    )
