"""Frame-aligned audio features and beat detection.

A deterministic log-energy filterbank stands in for a learned speech
encoder: each video frame gets one feature row computed only from the audio
samples inside that frame's window. Also provides onset-based audio beat
detection for the beat-align metric and a waveform synthesizer for the
synthetic corpus.
"""

from __future__ import annotations

import wave as _wave
from dataclasses import dataclass

import numpy as np

FRAME_RATE = 25
SAMPLE_RATE = 16000
SAMPLES_PER_FRAME = SAMPLE_RATE // FRAME_RATE  # 640
LOG_FLOOR = 1e-8

# beat detector: trailing window length and onset threshold factor
_BEAT_HISTORY = 8
_BEAT_FACTOR = 1.5
_ENERGY_FLOOR = 1e-10


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).ravel()
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def samples_per_frame(self) -> int:
        return int(round(self.sample_rate / FRAME_RATE))

    @property
    def num_frames(self) -> int:
        return self.samples.shape[0] // self.samples_per_frame


@dataclass
class AudioFeatureSequence:
    """F x D_a per-frame features at the video frame rate."""

    features: np.ndarray
    frame_rate: float = FRAME_RATE

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be an F x D_a matrix")

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def _mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_inv(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def filterbank(
    num_bands: int,
    window: int = SAMPLES_PER_FRAME,
    sample_rate: int = SAMPLE_RATE,
    f_lo: float = 100.0,
    f_hi: float = 7600.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Triangular mel-spaced filters over the rFFT bins of one frame window.

    Returns (weights, centers): weights is num_bands x (window//2 + 1), and
    each filter peaks at 1 on its own center and falls to 0 at its
    neighbors' centers.
    """
    freqs = np.fft.rfftfreq(window, d=1.0 / sample_rate)
    edges = _mel_inv(np.linspace(_mel(f_lo), _mel(f_hi), num_bands + 2))
    weights = np.zeros((num_bands, freqs.shape[0]))
    for b in range(num_bands):
        lo, center, hi = edges[b], edges[b + 1], edges[b + 2]
        rising = (freqs - lo) / (center - lo)
        falling = (hi - freqs) / (hi - center)
        weights[b] = np.clip(np.minimum(rising, falling), 0.0, None)
    return weights, edges[1:-1]


def extract_features(wave: Waveform, F: int, D_a: int = 26) -> AudioFeatureSequence:
    """Log filterbank energies per frame; row i sees only frame i's samples."""
    spf = wave.samples_per_frame
    if wave.samples.shape[0] < F * spf:
        raise ValueError(
            f"waveform has {wave.samples.shape[0]} samples, needs {F * spf} for {F} frames"
        )
    weights, _ = filterbank(D_a, window=spf, sample_rate=wave.sample_rate)
    rows = np.empty((F, D_a))
    for i in range(F):
        frame = wave.samples[i * spf : (i + 1) * spf]
        power = np.abs(np.fft.rfft(frame)) ** 2
        rows[i] = np.log(weights @ power + LOG_FLOOR)
    return AudioFeatureSequence(rows)


def silence_features(D_a: int = 26) -> np.ndarray:
    """The feature row produced by an all-zero frame (the log-floor vector)."""
    return np.full(D_a, np.log(LOG_FLOOR))


def centered_features(features: np.ndarray, scale: float = 0.1) -> np.ndarray:
    """Features relative to the silence floor, scaled to O(1) for encoders."""
    features = np.asarray(features, dtype=np.float64)
    return (features - silence_features(features.shape[1])) * scale


def frame_energies(wave: Waveform) -> np.ndarray:
    """Mean-square sample energy of each whole frame window."""
    spf = wave.samples_per_frame
    n = wave.num_frames
    trimmed = wave.samples[: n * spf].reshape(n, spf)
    return np.mean(trimmed**2, axis=1)


def detect_audio_beats(wave: Waveform) -> list[int]:
    """Frame indices where energy first rises above 1.5x its trailing average."""
    energies = frame_energies(wave)
    beats = []
    above_prev = False
    for i, e in enumerate(energies):
        history = energies[max(0, i - _BEAT_HISTORY) : i]
        avg = history.mean() if history.size else 0.0
        above = e > _BEAT_FACTOR * max(avg, _ENERGY_FLOOR)
        if above and not above_prev:
            beats.append(i)
        above_prev = above
    return beats


@dataclass
class AudioEvent:
    """One synthesis event: a broadband click or a pure tone at a frame."""

    kind: str  # "click" | "tone"
    frame: int
    freq: float = 440.0
    amplitude: float = 1.0
    frames: int = 1

    def __post_init__(self):
        if self.kind not in ("click", "tone"):
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.frame < 0 or self.frames < 1:
            raise ValueError("event frame/frames out of range")


def synth_waveform(spec: list[AudioEvent], duration: float, seed: int = 0) -> Waveform:
    """Deterministic waveform with the given events; empty spec is silence.

    Each event is confined to its frame window(s) so the per-frame feature
    and energy locality properties hold exactly.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(duration * SAMPLE_RATE))
    samples = np.zeros(n)
    spf = SAMPLES_PER_FRAME
    for ev in spec:
        start = ev.frame * spf
        if ev.kind == "click":
            # decaying noise burst strictly inside the frame window
            length = spf // 4
            offset = spf // 8
            burst = rng.standard_normal(length) * np.exp(-np.arange(length) / (length / 4.0))
            seg = slice(start + offset, start + offset + length)
            if start + offset + length <= n:
                samples[seg] += ev.amplitude * burst
        else:
            length = ev.frames * spf
            if start + length <= n:
                t = np.arange(length) / SAMPLE_RATE
                samples[start : start + length] += ev.amplitude * np.sin(
                    2.0 * np.pi * ev.freq * t
                )
    return Waveform(samples, SAMPLE_RATE)


def read_wav(path) -> Waveform:
    """Read single-channel 16-bit PCM WAV at 16 kHz (the only profile supported)."""
    with _wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise ValueError("only single-channel WAV is supported")
        if f.getsampwidth() != 2:
            raise ValueError("only 16-bit PCM WAV is supported")
        if f.getframerate() != SAMPLE_RATE:
            raise ValueError(f"only {SAMPLE_RATE} Hz WAV is supported")
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return Waveform(samples, SAMPLE_RATE)


def write_wav(path, wave: Waveform) -> None:
    """Write a waveform in the supported profile (mono 16-bit PCM, 16 kHz)."""
    if wave.sample_rate != SAMPLE_RATE:
        raise ValueError(f"only {SAMPLE_RATE} Hz WAV is supported")
    quantized = np.clip(np.round(wave.samples * 32767.0), -32768, 32767).astype("<i2")
    with _wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(SAMPLE_RATE)
        f.writeframes(quantized.tobytes())
