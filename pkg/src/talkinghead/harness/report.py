"""Evaluation reports: flat text, CSV, and matplotlib figures side by side."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

REPORT_TXT = "report.txt"
REPORT_CSV = "report.csv"


def write_report(metrics: dict[str, float], out_dir, beats=None) -> list[Path]:
    """Write `metric = value` text, CSV, and figures; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    txt = out_dir / REPORT_TXT
    txt.write_text(
        "".join(f"{name} = {value:.10g}\n" for name, value in metrics.items()),
        encoding="utf-8",
    )
    written.append(txt)
    csv = out_dir / REPORT_CSV
    csv.write_text(
        "metric,value\n" + "".join(f"{n},{v:.10g}\n" for n, v in metrics.items()),
        encoding="utf-8",
    )
    written.append(csv)
    if metrics:
        written.append(plot_metric_bars(metrics, out_dir / "metrics.png"))
    if beats is not None:
        audio_beats, motion_beats, num_frames = beats
        written.append(
            plot_beats(audio_beats, motion_beats, num_frames, out_dir / "beats.png")
        )
    return written


def plot_metric_bars(metrics: dict[str, float], path) -> Path:
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(metrics)), 3.2))
    names = list(metrics)
    ax.bar(range(len(names)), [metrics[n] for n in names], color="#4878a8")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("value")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_beats(audio_beats, motion_beats, num_frames: int, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 2.2))
    for b in audio_beats:
        ax.axvline(b, color="#c44e52", alpha=0.8, label="audio" if b == list(audio_beats)[0] else None)
    ax.plot(list(motion_beats), [0.5] * len(list(motion_beats)), "o", color="#4878a8", label="motion")
    ax.set_xlim(-0.5, num_frames - 0.5)
    ax.set_yticks([])
    ax.set_xlabel("frame")
    if len(list(audio_beats)) or len(list(motion_beats)):
        ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_loss_history(history: list[dict], path, keys=("total",)) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3))
    for key in keys:
        values = [h[key] for h in history if key in h]
        if values:
            ax.plot(values, label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
