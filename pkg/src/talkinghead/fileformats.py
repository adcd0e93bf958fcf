"""On-disk formats: binary PPM frames, video frame directories, coefficient files."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .motiongen import CoeffSequence

VIDEO_MANIFEST = "manifest.txt"
FRAME_PATTERN = "frame_{:05d}.ppm"


def write_ppm(path, frame: np.ndarray) -> None:
    """Write a 3 x H x W frame in [0, 1] as 8-bit binary PPM (P6)."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise ValueError(f"expected a 3 x H x W frame, got {frame.shape}")
    h, w = frame.shape[1], frame.shape[2]
    quantized = np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8)
    pixels = np.moveaxis(quantized, 0, -1)  # H x W x 3, row-major interleaved
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read an 8-bit binary PPM into a 3 x H x W float frame (value / 255)."""
    data = Path(path).read_bytes()
    # header: magic, width, height, maxval, separated by whitespace/comments
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise ValueError(f"not a binary PPM: magic {fields[0]!r}")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"only 8-bit PPM supported, maxval {maxval}")
    pos += 1  # single whitespace after maxval
    raw = np.frombuffer(data, dtype=np.uint8, count=3 * h * w, offset=pos)
    if raw.size != 3 * h * w:
        raise ValueError("truncated PPM pixel data")
    pixels = raw.reshape(h, w, 3)
    return np.moveaxis(pixels, -1, 0).astype(np.float64) / 255.0


def write_video_dir(path, frames: np.ndarray, fps: int = 25) -> None:
    """Write frames as numbered PPM files plus a frame-count/fps manifest."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    frames = np.asarray(frames)
    for i, frame in enumerate(frames):
        write_ppm(path / FRAME_PATTERN.format(i), frame)
    (path / VIDEO_MANIFEST).write_text(
        f"frames = {len(frames)}\nfps = {fps}\n", encoding="utf-8"
    )


def read_video_dir(path) -> tuple[np.ndarray, int]:
    """Read a frame directory back; returns (frames, fps)."""
    path = Path(path)
    meta = {}
    for line in (path / VIDEO_MANIFEST).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            meta[key.strip()] = value.strip()
    count = int(meta["frames"])
    fps = int(meta["fps"])
    frames = [read_ppm(path / FRAME_PATTERN.format(i)) for i in range(count)]
    return np.stack(frames) if frames else np.zeros((0, 3, 0, 0)), fps


def write_coeff_file(path, seq: CoeffSequence) -> None:
    """Text coefficient file: header `F D kind`, then F rows of D values."""
    lines = [f"{seq.num_frames} {seq.dim} {seq.kind}"]
    for row in seq.values:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_coeff_file(path) -> CoeffSequence:
    text = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not text:
        raise ValueError("empty coefficient file")
    header = text[0].split()
    if len(header) != 3:
        raise ValueError(f"bad coefficient header {text[0]!r}")
    F, D, kind = int(header[0]), int(header[1]), header[2]
    if len(text) - 1 != F:
        raise ValueError(f"expected {F} rows, found {len(text) - 1}")
    values = np.array([[float(v) for v in line.split()] for line in text[1:]])
    if values.shape != (F, D):
        raise ValueError(f"expected {F} x {D} values, got {values.shape}")
    return CoeffSequence(values, kind)
